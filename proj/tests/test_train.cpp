#include <filesystem>
#include <fstream>
#include <sstream>

#include "disout/checkpoint.hpp"
#include "disout/compare.hpp"
#include "disout/config.hpp"
#include "disout/errors.hpp"
#include "disout/metrics.hpp"
#include "disout/train.hpp"
#include "doctest.h"

using namespace disout;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "disout_test_train" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig blobs_config() {
  TrainConfig c;
  c.data.format = "synthetic";
  c.data.synthetic_n = 256;
  c.data.synthetic_test_n = 128;
  c.data.synthetic_classes = 4;
  c.data.synthetic_shape = {12};
  c.model.preset = "mlp";
  c.model.hidden = 32;
  c.epochs = 4;
  c.batch_size = 32;
  c.lr = 0.05;
  c.decay_epochs = {2};
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("regularizer names") {
  for (auto r : {Regularizer::kNone, Regularizer::kDropout, Regularizer::kDropBlock,
                 Regularizer::kDisoutElement, Regularizer::kDisoutBlock}) {
    CHECK(parse_regularizer(to_string(r)) == r);
  }
  CHECK_THROWS_AS(parse_regularizer("cutout"), ConfigError);
}

TEST_CASE("learning-rate schedule and validation") {
  TrainConfig c;
  c.lr = 0.1;
  c.decay_epochs = {2, 4};
  c.decay_factor = 5;
  CHECK(c.lr_at(0) == 0.1);
  CHECK(c.lr_at(2) == doctest::Approx(0.02));
  CHECK(c.lr_at(5) == doctest::Approx(0.004));
  c.decay_epochs = {4, 2};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.decay_epochs = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("unregularized MLP fits well-separated blobs") {
  TrainConfig c = blobs_config();
  c.epochs = 50;
  c.decay_epochs = {30, 40};
  c.data.synthetic_separation = 6.0;
  const TrainData data = load_train_data(c.data);
  const TrainResult r = train(c, data);
  REQUIRE(r.final_train_eval_acc);
  CHECK(*r.final_train_eval_acc >= 0.99);
}

TEST_CASE("training is deterministic and rows are ordered") {
  TrainConfig c = blobs_config();
  c.regularizer = Regularizer::kDisoutElement;
  c.disout.p_target = 0.3;
  const TrainData data = load_train_data(c.data);
  const TrainResult a = train(c, data), b = train(c, data);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(metrics_row(a.metrics[i], 2) == metrics_row(b.metrics[i], 2));
    if (i) CHECK(a.metrics[i].iter > a.metrics[i - 1].iter);
    CHECK(a.metrics[i].train_acc >= 0.0);
    CHECK(a.metrics[i].train_acc <= 1.0);
  }
  CHECK(a.metrics.back().erc.size() == 2);
}

TEST_CASE("block regularizers need a conv attachment") {
  TrainConfig c = blobs_config();
  c.regularizer = Regularizer::kDropBlock;
  CHECK_THROWS_AS(build_network(c, {12}, 4), ConfigError);
  c.model.preset = "block_cnn";
  c.disout.block_size = 3;
  const Network net = build_network(c, {1, 16, 16}, 4);
  REQUIRE(net.attachments().size() == 1);
  CHECK(net.attachments()[0].next_is_conv);
  c.disout.block_size = 9;
  CHECK_THROWS_AS(build_network(c, {1, 16, 16}, 4), ConfigError);
}

TEST_CASE("a diverging run aborts with a numeric error") {
  TrainConfig c = blobs_config();
  c.lr = 1e30;
  c.momentum = 0.0;
  const TrainData data = load_train_data(c.data);
  CHECK_THROWS_AS(train(c, data), NumericError);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const fs::path dir = scratch("ckpt");
  TrainConfig c = blobs_config();
  c.epochs = 1;
  const TrainData data = load_train_data(c.data);
  const TrainResult r = train(c, data);
  save_train_state((dir / "a.ckpt").string(), r.state);
  TrainState fresh = make_initial_state(c, data);
  load_train_state((dir / "a.ckpt").string(), fresh);
  CHECK(fresh.net.params() == r.state.net.params());
  CHECK(fresh.optimizer.velocity() == r.state.optimizer.velocity());
  CHECK(fresh.rngs.mask == r.state.rngs.mask);
  CHECK(fresh.epoch == r.state.epoch);
  CHECK(fresh.iter == r.state.iter);

  const auto size = fs::file_size(dir / "a.ckpt");
  fs::copy_file(dir / "a.ckpt", dir / "t.ckpt");
  fs::resize_file(dir / "t.ckpt", size - 10);
  CHECK_THROWS_AS(load_train_state((dir / "t.ckpt").string(), fresh), FormatError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint at all";
  CHECK_THROWS_AS(read_checkpoint((dir / "junk.ckpt").string()), FormatError);
  CHECK_THROWS_AS(read_checkpoint((dir / "none.ckpt").string()), IoError);
}

TEST_CASE("resuming at an epoch boundary reproduces the unbroken run") {
  const fs::path dir = scratch("resume");
  RunConfig cfg;
  cfg.train = blobs_config();
  cfg.train.regularizer = Regularizer::kDisoutElement;
  cfg.train.data.augment.crop_pad = 0;
  run_to_directory(cfg, (dir / "full").string());

  TrainOptions stop;
  stop.stop_after = 2;
  const TrainData data = load_train_data(cfg.train.data);
  const TrainResult half = train(cfg.train, data, stop);
  fs::create_directories(dir / "split" / kCheckpointDir);
  save_train_state((dir / "split" / kCheckpointDir / kLastCheckpoint).string(), half.state);
  {
    MetricsWriter w((dir / "split" / kMetricsFile).string(),
                    (dir / "split" / kTimingFile).string(), 2, false);
    for (const auto& m : half.metrics) w.write(m);
  }
  run_to_directory(cfg, (dir / "split").string(), true);
  CHECK(slurp(dir / "split" / kMetricsFile) == slurp(dir / "full" / kMetricsFile));
}

TEST_CASE("config parsing, errors and snapshots") {
  const std::string text =
      "# comment\n"
      "regularizer = disout-element\n"
      "disout.p_target = 0.25\n"
      "optim.decay_epochs = 3, 6\n"
      "data.train_images = imgs/train\n";
  RunConfig c = parse_config(text, "x.cfg", "/base");
  CHECK(c.train.regularizer == Regularizer::kDisoutElement);
  CHECK(c.train.disout.p_target == 0.25);
  CHECK(c.train.decay_epochs == std::vector<std::size_t>{3, 6});
  CHECK(c.train.data.train_images == "/base/imgs/train");

  apply_override(c, "train.seed=17");
  CHECK(c.train.seed == 17);
  const RunConfig back = parse_config(config_snapshot(c), "snap", "/elsewhere");
  CHECK(config_snapshot(back) == config_snapshot(c));

  try {
    parse_config("train.epochs = 3\ntrain.epoch = 4\n", "bad.cfg", "");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.cfg:2") != std::string::npos);
    CHECK(msg.find("train.epoch") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("train.epochs = many\n", "bad.cfg", ""), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "model.preset=resnet"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "novalue"), ConfigError);
}

TEST_CASE("shipped presets parse and validate") {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(fs::path(DISOUT_SOURCE_DIR) / "presets")) {
    if (e.path().extension() != ".cfg") continue;
    CAPTURE(e.path().string());
    const RunConfig c = load_config(e.path().string());
    CHECK_NOTHROW(c.train.validate());
    ++n;
  }
  CHECK(n >= 6);
}

TEST_CASE("metrics rows and reader") {
  MetricsRecord r;
  r.epoch = 1;
  r.iter = 9;
  r.train_loss = 0.5;
  r.train_acc = 0.75;
  r.test_acc = 0.625;
  r.p_effective = 0.1;
  r.erc.push_back({3, 2.0, 1.5, 1.0, 0.5});
  CHECK(metrics_header(1) ==
        "epoch,iter,train_loss,train_acc,val_acc,test_acc,train_eval_acc,p_effective,"
        "erc0_before,erc0_after,erc0_sup,erc0_penalty");
  CHECK(metrics_row(r, 1) == "1,9,0.5,0.75,,0.625,,0.10000000000000001,2,1.5,1,0.5");

  const fs::path dir = scratch("metrics");
  {
    MetricsWriter w((dir / "m.csv").string(), (dir / "t.csv").string(), 1, false);
    w.write(r);
    r.test_acc.reset();
    r.iter = 10;
    w.write(r);
  }
  const MetricsTable t = read_metrics_csv((dir / "m.csv").string());
  CHECK(t.rows.size() == 2);
  CHECK(t.last_value("test_acc") == 0.625);
  CHECK_FALSE(t.last_value("val_acc"));
  CHECK_THROWS_AS((void)t.column("wall_time"), FormatError);
}

TEST_CASE("mean and sample standard deviation") {
  CHECK(mean_and_std({0.5}) == std::pair<double, double>{0.5, 0.0});
  const auto [m, s] = mean_and_std({1, 2, 3, 4});
  CHECK(m == 2.5);
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("compare summarizes from the per-run logs") {
  const fs::path dir = scratch("compare");
  RunConfig cfg;
  cfg.train = blobs_config();
  cfg.train.epochs = 2;
  cfg.compare_regularizers = {Regularizer::kNone, Regularizer::kDropout};
  cfg.compare_seeds = {1, 2};
  const CompareReport rep = run_compare(cfg, dir.string());
  CHECK(rep.all_ok());
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.cells.size() == 4);
  for (const auto& cell : rep.cells) {
    const MetricsTable t = read_metrics_csv((fs::path(cell.dir) / kMetricsFile).string());
    CHECK(*cell.gap == *t.last_value("train_eval_acc") - *t.last_value("test_acc"));
    CHECK(*cell.best_test_acc >= *cell.test_acc);
  }
  const auto [mean, sd] = mean_and_std({*rep.cells[0].test_acc, *rep.cells[1].test_acc});
  CHECK(rep.rows[0].test_mean == mean);
  CHECK(rep.rows[0].test_std == sd);
  CHECK(fs::exists(dir / "summary.csv"));
  CHECK(slurp(dir / "summary.txt").find("dropout") != std::string::npos);

  // A cell whose log vanished is reported as failed.
  fs::remove(dir / cell_directory_name(Regularizer::kDropout, 2) / kMetricsFile);
  const CompareReport again = summarize_compare(cfg, dir.string());
  CHECK_FALSE(again.all_ok());
  CHECK(again.rows[1].failed == 1);
  CHECK(format_summary_text(again).find("FAILED dropout_seed2") != std::string::npos);
}
