#include "disout/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "disout/errors.hpp"

namespace disout {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string metrics_header(std::size_t attachments) {
  std::string h =
      "epoch,iter,train_loss,train_acc,val_acc,test_acc,train_eval_acc,p_effective";
  for (std::size_t k = 0; k < attachments; ++k) {
    const std::string p = ",erc" + std::to_string(k);
    h += p + "_before" + p + "_after" + p + "_sup" + p + "_penalty";
  }
  return h;
}

std::string metrics_row(const MetricsRecord& r, std::size_t attachments) {
  std::string row = std::to_string(r.epoch) + "," + std::to_string(r.iter) + "," +
                    fmt(r.train_loss) + "," + fmt(r.train_acc) + "," +
                    fmt(r.val_acc) + "," + fmt(r.test_acc) + "," +
                    fmt(r.train_eval_acc) + "," + fmt(r.p_effective);
  for (std::size_t k = 0; k < attachments; ++k) {
    if (k < r.erc.size()) {
      const ErcReport& e = r.erc[k];
      row += "," + fmt(e.t_before) + "," + fmt(e.t_after) + "," + fmt(e.sup_term) +
             "," + fmt(e.penalty_term);
    } else {
      row += ",,,,";
    }
  }
  return row;
}

MetricsWriter::MetricsWriter(const std::string& metrics_path,
                             const std::string& timing_path,
                             std::size_t attachments, bool append)
    : attachments_(attachments) {
  namespace fs = std::filesystem;
  auto open = [&](std::ofstream& out, const std::string& path,
                  const std::string& header) {
    const bool fresh = !append || !fs::exists(path) || fs::file_size(path) == 0;
    out.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out) throw IoError("cannot write '" + path + "'");
    if (fresh) out << header << '\n';
  };
  open(metrics_, metrics_path, metrics_header(attachments));
  open(timing_, timing_path, "epoch,iter,wall_time");
}

void MetricsWriter::write(const MetricsRecord& rec) {
  metrics_ << metrics_row(rec, attachments_) << '\n';
  timing_ << rec.epoch << ',' << rec.iter << ',' << fmt(rec.wall_time) << '\n';
}

void MetricsWriter::flush() {
  metrics_.flush();
  timing_.flush();
  if (!metrics_ || !timing_) throw IoError("failed writing metrics");
}

std::size_t MetricsTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw FormatError("metrics table has no column '" + name + "'");
}

std::optional<double> MetricsTable::last_value(const std::string& name) const {
  const std::size_t c = column(name);
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (c < it->size() && !(*it)[c].empty()) return std::stod((*it)[c]);
  }
  return std::nullopt;
}

MetricsTable read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics '" + path + "'");
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");
  t.header = split_csv(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv(line);
    if (row.size() != t.header.size()) {
      throw FormatError("'" + path + "': row with " + std::to_string(row.size()) +
                        " cells under a " + std::to_string(t.header.size()) +
                        "-column header");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace disout
