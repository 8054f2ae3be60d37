#include "disout/compare.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "disout/checkpoint.hpp"
#include "disout/errors.hpp"
#include "disout/metrics.hpp"

namespace disout {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pct(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f +- %.2f", 100.0 * mean, 100.0 * sd);
  return buf;
}

std::optional<double> max_value(const MetricsTable& t, const std::string& name) {
  const std::size_t col = t.column(name);
  std::optional<double> best;
  for (const auto& row : t.rows) {
    if (col < row.size() && !row[col].empty()) {
      const double v = std::stod(row[col]);
      if (!best || v > *best) best = v;
    }
  }
  return best;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write '" + path.string() + "'");
}

/// Keeps only rows of epochs before `epoch`.
void truncate_metrics(const fs::path& path, std::size_t epoch) {
  if (!fs::exists(path)) return;
  const MetricsTable t = read_metrics_csv(path.string());
  std::string out;
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    out += (i ? "," : "") + t.header[i];
  }
  out += "\n";
  for (const auto& row : t.rows) {
    if (std::stoull(row[0]) >= epoch) continue;
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += "\n";
  }
  write_text(path, out);
}

}  // namespace

TrainResult run_to_directory(const RunConfig& cfg, const std::string& dir,
                             bool resume, std::ostream* log) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / kCheckpointDir, ec);
  if (ec) throw IoError("cannot create '" + (root / kCheckpointDir).string() + "'");

  const TrainConfig& tc = cfg.train;
  const TrainData data = load_train_data(tc.data);
  TrainState state = make_initial_state(tc, data);
  const fs::path last = root / kCheckpointDir / kLastCheckpoint;
  if (resume) {
    load_train_state(last.string(), state);
    truncate_metrics(root / kMetricsFile, state.epoch);
    truncate_metrics(root / kTimingFile, state.epoch);
    if (log) *log << "resuming at epoch " << state.epoch << "\n";
  }
  write_text(root / kSnapshotFile, config_snapshot(cfg));

  MetricsWriter writer((root / kMetricsFile).string(), (root / kTimingFile).string(),
                       state.net.attachments().size(), resume);
  TrainOptions opts;
  opts.on_record = [&](const MetricsRecord& r) { writer.write(r); };
  opts.on_epoch_end = [&](const TrainState& st, bool final_epoch) {
    writer.flush();
    save_train_state(last.string(), st);
    if (tc.checkpoint_every && st.epoch % tc.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu.ckpt", st.epoch);
      save_train_state((root / kCheckpointDir / name).string(), st);
    }
    if (final_epoch) {
      save_train_state((root / kCheckpointDir / kFinalCheckpoint).string(), st);
    }
    if (log) {
      *log << "epoch " << st.epoch << "/" << tc.epochs << " done\n";
      log->flush();
    }
  };
  return train(tc, data, std::move(state), opts);
}

bool CompareReport::all_ok() const {
  for (const auto& c : cells) {
    if (!c.ok) return false;
  }
  return !cells.empty();
}

std::pair<double, double> mean_and_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

std::string cell_directory_name(Regularizer r, std::uint64_t seed) {
  return to_string(r) + "_seed" + std::to_string(seed);
}

CompareReport run_compare(const RunConfig& cfg, const std::string& out_dir,
                          std::ostream* log) {
  if (cfg.compare_regularizers.empty() || cfg.compare_seeds.empty()) {
    throw ConfigError("compare needs at least one regularizer and one seed");
  }
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / kSnapshotFile, config_snapshot(cfg));
  std::vector<std::pair<std::string, std::string>> failures;
  for (Regularizer reg : cfg.compare_regularizers) {
    for (std::uint64_t seed : cfg.compare_seeds) {
      RunConfig cell = cfg;
      cell.train.regularizer = reg;
      cell.train.seed = seed;
      const std::string name = cell_directory_name(reg, seed);
      if (log) *log << "== " << name << "\n";
      try {
        run_to_directory(cell, (fs::path(out_dir) / name).string(), false, nullptr);
      } catch (const Error& e) {
        failures.emplace_back(name, e.what());
        if (log) *log << name << " failed: " << e.what() << "\n";
      }
    }
  }
  CompareReport report = summarize_compare(cfg, out_dir);
  for (auto& c : report.cells) {
    for (const auto& [name, msg] : failures) {
      if (fs::path(c.dir).filename() == name) {
        c.ok = false;
        c.error = msg;
      }
    }
  }
  write_summary(report, out_dir);
  return report;
}

CompareReport summarize_compare(const RunConfig& cfg, const std::string& out_dir) {
  CompareReport report;
  for (Regularizer reg : cfg.compare_regularizers) {
    CompareRow row;
    row.regularizer = reg;
    std::vector<double> tests, bests, gaps;
    for (std::uint64_t seed : cfg.compare_seeds) {
      CompareCell c;
      c.regularizer = reg;
      c.seed = seed;
      c.dir = (fs::path(out_dir) / cell_directory_name(reg, seed)).string();
      try {
        const MetricsTable t = read_metrics_csv((fs::path(c.dir) / kMetricsFile).string());
        c.test_acc = t.last_value("test_acc");
        c.train_acc = t.last_value("train_eval_acc");
        c.best_test_acc = max_value(t, "test_acc");
        if (!c.test_acc || !c.train_acc) {
          c.error = "metrics lack final train/test accuracy";
        } else {
          c.gap = *c.train_acc - *c.test_acc;
          c.ok = true;
        }
      } catch (const Error& e) {
        c.error = e.what();
      }
      if (c.ok) {
        tests.push_back(*c.test_acc);
        bests.push_back(*c.best_test_acc);
        gaps.push_back(*c.gap);
        ++row.runs;
      } else {
        ++row.failed;
      }
      report.cells.push_back(std::move(c));
    }
    std::tie(row.test_mean, row.test_std) = mean_and_std(tests);
    std::tie(row.best_test_mean, row.best_test_std) = mean_and_std(bests);
    std::tie(row.gap_mean, row.gap_std) = mean_and_std(gaps);
    report.rows.push_back(row);
  }
  return report;
}

std::string format_summary_text(const CompareReport& report) {
  std::vector<std::array<std::string, 6>> lines;
  lines.push_back(
      {"regularizer", "runs", "failed", "test_acc %", "best test_acc %", "train-test gap %"});
  for (const auto& r : report.rows) {
    lines.push_back({to_string(r.regularizer), std::to_string(r.runs),
                     std::to_string(r.failed), pct(r.test_mean, r.test_std),
                     pct(r.best_test_mean, r.best_test_std), pct(r.gap_mean, r.gap_std)});
  }
  std::array<std::size_t, 6> width{};
  for (const auto& l : lines) {
    for (std::size_t i = 0; i < 6; ++i) width[i] = std::max(width[i], l[i].size());
  }
  std::string out;
  for (const auto& l : lines) {
    for (std::size_t i = 0; i < 6; ++i) {
      std::string cell = l[i];
      cell.resize(width[i], ' ');
      out += (i ? "  " : "") + cell;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
  }
  for (const auto& c : report.cells) {
    if (!c.ok) {
      out += "FAILED " + cell_directory_name(c.regularizer, c.seed) + ": " + c.error + "\n";
    }
  }
  return out;
}

void write_summary(const CompareReport& report, const std::string& out_dir) {
  std::string csv =
      "regularizer,runs,failed,test_acc_mean,test_acc_std,best_test_acc_mean,"
      "best_test_acc_std,gap_mean,gap_std\n";
  for (const auto& r : report.rows) {
    csv += to_string(r.regularizer) + "," + std::to_string(r.runs) + "," +
           std::to_string(r.failed) + "," + fmt(r.test_mean) + "," +
           fmt(r.test_std) + "," + fmt(r.best_test_mean) + "," +
           fmt(r.best_test_std) + "," + fmt(r.gap_mean) + "," + fmt(r.gap_std) + "\n";
  }
  write_text(fs::path(out_dir) / "summary.csv", csv);
  write_text(fs::path(out_dir) / "summary.txt", format_summary_text(report));
}

}  // namespace disout
