#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "disout/data.hpp"
#include "disout/distortion.hpp"
#include "disout/nn.hpp"
#include "disout/rng.hpp"

namespace disout {

enum class Regularizer { kNone, kDropout, kDropBlock, kDisoutElement, kDisoutBlock };

std::string to_string(Regularizer r);
Regularizer parse_regularizer(const std::string& s);
bool uses_distortion(Regularizer r);
MaskKind mask_kind_for(Regularizer r);

struct DataConfig {
  /// idx | cifar10 | synthetic
  std::string format = "synthetic";
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::vector<std::string> cifar_train;
  std::vector<std::string> cifar_test;
  /// Keep only the first k training / test samples (0 keeps all).
  std::size_t train_subset = 0;
  std::size_t test_subset = 0;
  /// Trailing fraction of the training set held out for validation.
  double val_fraction = 0.0;

  std::size_t synthetic_n = 512;
  std::size_t synthetic_test_n = 512;
  std::size_t synthetic_classes = 4;
  Shape synthetic_shape{16};
  double synthetic_separation = 10.0;
  std::uint64_t synthetic_seed = 7;

  std::vector<double> normalize_mean;
  std::vector<double> normalize_std;
  AugmentFlags augment;
};

struct ModelConfig {
  std::string preset = "mlp";
  std::size_t hidden = 128;
  bool bias = true;
};

struct TrainConfig {
  DataConfig data;
  ModelConfig model;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double lr = 0.1;
  /// Epochs (0-based) at whose start the learning rate is divided by
  /// decay_factor. Strictly increasing.
  std::vector<std::size_t> decay_epochs{9, 18, 24};
  double decay_factor = 5.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  Precision precision = Precision::F32;
  Regularizer regularizer = Regularizer::kNone;
  DistortionConfig disout;
  GradMode grad_mode = GradMode::kApprox;
  /// Write a metrics row every k iterations (the last batch of an epoch is
  /// always written).
  std::size_t log_every = 1;
  /// Evaluate on val/test every k epochs (the last epoch always is).
  std::size_t eval_every = 1;
  /// Write a checkpoint every k epochs (0: final checkpoint only).
  std::size_t checkpoint_every = 0;

  /// Throws ConfigError on any invariant violation.
  void validate() const;
  [[nodiscard]] double lr_at(std::size_t epoch) const;
};

struct TrainData {
  Dataset train;
  std::optional<Dataset> val;
  std::optional<Dataset> test;
};

/// Loads, subsets, splits and normalizes the datasets named by `cfg`.
TrainData load_train_data(const DataConfig& cfg);

/// Builds the preset with attachments placed for the configured regularizer.
Network build_network(const TrainConfig& cfg, const Shape& sample_shape,
                      std::size_t classes);

/// One metrics row. Optional accuracies are present only on rows where an
/// evaluation ran (the last batch of an evaluated epoch).
struct MetricsRecord {
  std::size_t epoch = 0;
  std::size_t iter = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
  std::optional<double> test_acc;
  /// Clean (eval-mode) accuracy on the full training set.
  std::optional<double> train_eval_acc;
  double p_effective = 0.0;
  std::vector<ErcReport> erc;
  double wall_time = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Distortion-free forward over the dataset in fixed-size chunks.
EvalResult evaluate(const Network& net, const Dataset& ds,
                    std::size_t batch_size = 500);

/// Per-run generator streams, all derived from the run seed.
struct RunRngs {
  explicit RunRngs(std::uint64_t seed = 0);
  Rng init;
  Rng mask;
  Rng sigma;
  Rng aux;
  Rng augment;
};

/// Everything needed to continue a run bit-exactly.
struct TrainState {
  Network net;
  SgdOptimizer optimizer;
  RunRngs rngs;
  /// Next epoch to run and number of batches already processed.
  std::size_t epoch = 0;
  std::size_t iter = 0;
};

struct TrainOptions {
  std::function<void(const MetricsRecord&)> on_record;
  /// Called after every completed epoch with the state to checkpoint.
  std::function<void(const TrainState&, bool final_epoch)> on_epoch_end;
  /// Stop after this many epochs in total (for split runs); 0 = cfg.epochs.
  std::size_t stop_after = 0;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRecord> metrics;
  std::optional<double> final_train_eval_acc;
  std::optional<double> final_test_acc;
  std::optional<double> best_val_acc;
};

/// Fresh state: network built and initialized from the init stream.
TrainState make_initial_state(const TrainConfig& cfg, const TrainData& data);

/// Alternating loop: per batch, distort each attachment (mask, ε ← f, then
/// steps_per_batch surrogate-gradient steps), forward, backward with the
/// distortion frozen, SGD step. Throws NumericError on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const TrainData& data,
                  TrainState state, const TrainOptions& opts = {});

TrainResult train(const TrainConfig& cfg, const TrainData& data,
                  const TrainOptions& opts = {});

}  // namespace disout
