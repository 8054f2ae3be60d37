#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "disout/rng.hpp"
#include "disout/tensor.hpp"

namespace disout {

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);

struct Dataset {
  /// N × sample shape (N×C×H×W for images, N×d for vectors).
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;
  Split split = Split::kTrain;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] Shape sample_shape() const;

  /// Rows at `indices`, in that order.
  [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const;
  /// Rows [begin, end).
  [[nodiscard]] Dataset slice(std::size_t begin, std::size_t end) const;

  /// Throws InputError unless labels are in range, N > 0 and images finite.
  void validate() const;
};

/// Reads an IDX3 image file and IDX1 label file (big-endian, magic 0x803 and
/// 0x801). Pixels are scaled by 1/255; labels become class indices 0..9.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 Split split = Split::kTrain);

/// Writes a single-channel dataset as IDX, pixels as round(255·x).
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

/// Concatenates CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per
/// record) into N×3×32×32 in [0, 1].
Dataset load_cifar10_bin(std::span<const std::string> paths,
                         Split split = Split::kTrain);

struct BlobSpec {
  std::size_t n = 200;
  std::size_t classes = 2;
  /// Per-sample shape, e.g. {16} or {1, 8, 8}.
  Shape sample_shape{16};
  /// Expected distance between class centers, in units of the per-class
  /// standard deviation (which is 1).
  double separation = 10.0;
  std::uint64_t seed = 0;
};

/// Gaussian class clusters; sample i has label i mod classes.
Dataset synthetic_blobs(const BlobSpec& spec);

/// Per-channel (x − mean)/std; `mean`/`stddev` hold one value per channel or
/// a single value for all channels.
void normalize(Dataset& ds, std::span<const double> mean,
               std::span<const double> stddev);

struct AugmentFlags {
  bool flip = false;
  std::size_t crop_pad = 0;
  double rotate_deg = 0.0;

  [[nodiscard]] bool any() const {
    return flip || crop_pad > 0 || rotate_deg > 0.0;
  }
};

/// Per-sample random horizontal flip (p = 0.5), zero-pad-then-random-crop
/// and nearest-neighbour rotation by a uniform angle in ±rotate_deg, drawn
/// in that order for each sample.
Tensor augment(const Tensor& batch, const AugmentFlags& flags, Rng& rng);

/// Mirror every sample of an N×C×H×W batch left-to-right.
Tensor flip_horizontal(const Tensor& batch);

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// Mini-batches over a dataset. The order within an epoch is a permutation
/// derived from (seed, epoch) only; the last batch may be short.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                bool shuffle = true);

  void start_epoch(std::size_t epoch);
  bool next(Batch& out);
  [[nodiscard]] std::size_t batches_per_epoch() const;
  [[nodiscard]] const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace disout
