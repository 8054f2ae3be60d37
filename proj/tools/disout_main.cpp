// disout: train, evaluate and verify the feature-map distortion regularizer.
//
// Exit codes: 0 ok, 1 verification failure (including a non-finite loss),
// 2 configuration error, 3 I/O or data-format error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "disout/checkpoint.hpp"
#include "disout/compare.hpp"
#include "disout/config.hpp"
#include "disout/errors.hpp"
#include "disout/gradcheck.hpp"
#include "disout/mask_stats.hpp"
#include "disout/train.hpp"

namespace fs = std::filesystem;
using namespace disout;

namespace {

constexpr int kOk = 0, kVerifyFailed = 1, kConfigError = 2, kIoError = 3;

std::string output_root() {
  const char* env = std::getenv("DISOUT_OUTPUT_ROOT");
  return env && *env ? env : "runs";
}

std::string find_config(const std::string& path) {
  if (fs::exists(path)) return path;
  if (fs::path(path).extension().empty() && fs::exists(path + ".cfg")) {
    return path + ".cfg";
  }
  throw IoError("config file '" + path + "' not found");
}

RunConfig resolve_config(const std::string& path,
                         const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(find_config(path));
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

std::string default_out(const std::string& config_path, const std::string& suffix) {
  std::string stem = config_path.empty() ? "run" : fs::path(config_path).stem().string();
  return (fs::path(output_root()) / (stem + suffix)).string();
}

int run_train(const std::string& config, const std::vector<std::string>& sets,
              std::string out, bool resume) {
  RunConfig cfg = resolve_config(config, sets);
  cfg.train.validate();
  if (out.empty()) out = default_out(config, "");
  std::cout << "output: " << out << "\n";
  const TrainResult r = run_to_directory(cfg, out, resume, &std::cout);
  if (r.final_test_acc) std::printf("final test accuracy: %.4f\n", *r.final_test_acc);
  if (r.final_train_eval_acc) {
    std::printf("final train accuracy: %.4f\n", *r.final_train_eval_acc);
  }
  return kOk;
}

int run_eval(const std::string& run_dir, std::string checkpoint) {
  const fs::path dir(run_dir);
  const RunConfig cfg = load_config((dir / kSnapshotFile).string());
  if (checkpoint.empty()) {
    checkpoint = (dir / kCheckpointDir / kFinalCheckpoint).string();
  }
  const TrainData data = load_train_data(cfg.train.data);
  TrainState state = make_initial_state(cfg.train, data);
  load_train_state(checkpoint, state);
  const EvalResult tr = evaluate(state.net, data.train);
  std::printf("train: accuracy %.4f loss %.6f\n", tr.accuracy, tr.loss);
  if (data.val) {
    const EvalResult v = evaluate(state.net, *data.val);
    std::printf("val:   accuracy %.4f loss %.6f\n", v.accuracy, v.loss);
  }
  if (data.test) {
    const EvalResult te = evaluate(state.net, *data.test);
    std::printf("test:  accuracy %.4f loss %.6f\n", te.accuracy, te.loss);
  }
  return kOk;
}

int run_gradcheck_cmd(const GradcheckConfig& cfg) {
  bool ok = true;
  for (const SuiteResult& s : run_gradcheck(cfg)) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%-8s max_rel_error %.3e over %zu instances (%zu rejected), "
                  "worst seed %llu: %s\n",
                  (s.name + ":").c_str(), s.max_rel_error, s.instances, s.rejected,
                  static_cast<unsigned long long>(s.worst_seed),
                  s.passed ? "ok" : "FAIL");
    std::cout << buf;
    ok = ok && s.passed;
  }
  return ok ? kOk : kVerifyFailed;
}

int run_mask_stats_cmd(const MaskStatsConfig& cfg) {
  const MaskStats s = compute_mask_stats(cfg);
  const bool ok = s.element_within(cfg.p);
  std::printf("element: fraction %.6f over %zu draws (p %.4f, 4 sigma %.6f): %s\n",
              s.element_fraction, s.element_samples, cfg.p, 4.0 * s.element_sigma,
              ok ? "ok" : "FAIL");
  std::printf("block:   fraction %.6f over %zu positions (block_size %zu)\n",
              s.block_fraction, s.block_samples, cfg.block_size);
  std::vector<std::pair<std::string, std::size_t>> shapes(s.block_shapes.begin(),
                                                           s.block_shapes.end());
  std::stable_sort(shapes.begin(), shapes.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  constexpr std::size_t kShown = 12;
  std::printf("block shapes (most frequent first):\n");
  std::size_t other = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (i < kShown) {
      std::printf("  %-9s %zu\n", shapes[i].first.c_str(), shapes[i].second);
    } else {
      other += shapes[i].second;
    }
  }
  if (other) {
    std::printf("  %zu regions in %zu other shapes\n", other, shapes.size() - kShown);
  }
  return ok ? kOk : kVerifyFailed;
}

int run_compare_cmd(const std::string& config, const std::vector<std::string>& sets,
                    std::string out) {
  RunConfig cfg = resolve_config(config, sets);
  cfg.train.validate();
  if (out.empty()) out = default_out(config, "_compare");
  std::cout << "output: " << out << "\n";
  const CompareReport report = run_compare(cfg, out, &std::cout);
  std::cout << format_summary_text(report);
  return report.all_ok() ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-map distortion training laboratory"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, run_dir;
  std::vector<std::string> sets;
  bool resume = false;

  auto* train_cmd = app.add_subcommand("train", "Train one model");
  train_cmd->add_option("-c,--config", config, "Config file")->required();
  train_cmd->add_option("-s,--set", sets, "Override, dotted.key=value");
  train_cmd->add_option("-o,--out", out,
                        "Output directory (default $DISOUT_OUTPUT_ROOT/<config>)");
  train_cmd->add_flag("--resume", resume, "Continue from checkpoints/last.ckpt");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained run");
  eval_cmd->add_option("run", run_dir, "Run directory")->required();
  eval_cmd->add_option("--checkpoint", checkpoint,
                       "Checkpoint (default checkpoints/final.ckpt)");

  GradcheckConfig gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_cmd->add_option("--instances", gc.instances, "Instances per suite");
  grad_cmd->add_option("--seed", gc.seed, "Base seed");
  grad_cmd->add_option("--tolerance", gc.tolerance, "Max relative error");
  grad_cmd->add_flag("--inject-sign-flip", gc.inject_sign_flip,
                     "Negate analytic gradients (harness self-test)");

  MaskStatsConfig mc;
  auto* mask_cmd = app.add_subcommand("mask-stats", "Empirical mask statistics");
  mask_cmd->add_option("--p", mc.p, "Drop probability");
  mask_cmd->add_option("--block-size", mc.block_size, "Block side");
  mask_cmd->add_option("--samples", mc.samples, "Mask positions per kind");
  mask_cmd->add_option("--map-size", mc.map_size, "Map side for block masks");
  mask_cmd->add_option("--seed", mc.seed, "Seed");

  auto* cmp_cmd = app.add_subcommand("compare", "Regularizer x seed grid");
  cmp_cmd->add_option("-c,--config", config, "Config file")->required();
  cmp_cmd->add_option("-s,--set", sets, "Override, dotted.key=value");
  cmp_cmd->add_option("-o,--out", out,
                      "Output directory (default $DISOUT_OUTPUT_ROOT/<config>_compare)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*train_cmd) return run_train(config, sets, out, resume);
    if (*eval_cmd) return run_eval(run_dir, checkpoint);
    if (*grad_cmd) return run_gradcheck_cmd(gc);
    if (*mask_cmd) return run_mask_stats_cmd(mc);
    if (*cmp_cmd) return run_compare_cmd(config, sets, out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DimensionError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kVerifyFailed;
  } catch (const Error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIoError;
  }
  return kConfigError;
}
