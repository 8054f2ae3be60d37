#include "disout/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "disout/errors.hpp"

namespace disout {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t at,
                        const std::string& path) {
  if (at + 4 > b.size()) throw FormatError(path + ": truncated IDX header");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::size_t class_count_for(const std::vector<int>& labels) {
  int mx = 0;
  for (int l : labels) mx = std::max(mx, l);
  return std::max<std::size_t>(10, static_cast<std::size_t>(mx) + 1);
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Shape Dataset::sample_shape() const {
  return Shape(images.shape().begin() + 1, images.shape().end());
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InputError("empty dataset subset");
  const std::size_t d = images.size() / size();
  std::vector<double> v(indices.size() * d);
  std::vector<int> l(indices.size());
  auto src = images.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw InputError("subset index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * d), d,
                v.begin() + static_cast<std::ptrdiff_t>(i * d));
    l[i] = labels[indices[i]];
  }
  Shape s = images.shape();
  s[0] = indices.size();
  return {Tensor(s, std::move(v), images.precision()), std::move(l),
          class_count, split};
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > size()) throw InputError("invalid dataset slice");
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return subset(idx);
}

void Dataset::validate() const {
  if (labels.empty()) throw InputError("dataset is empty");
  if (images.empty() || images.dim(0) != labels.size()) {
    throw InputError("dataset image count does not match label count");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
      throw InputError("label " + std::to_string(l) + " outside [0, " +
                       std::to_string(class_count) + ")");
    }
  }
  require_finite(images, "dataset");
}

// ---------------------------------------------------------------------------

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 Split split) {
  const auto ib = read_file(images_path);
  const auto lb = read_file(labels_path);
  if (read_be32(ib, 0, images_path) != kIdxImagesMagic) {
    throw FormatError(images_path + ": bad IDX image magic");
  }
  if (read_be32(lb, 0, labels_path) != kIdxLabelsMagic) {
    throw FormatError(labels_path + ": bad IDX label magic");
  }
  const std::size_t n = read_be32(ib, 4, images_path);
  const std::size_t h = read_be32(ib, 8, images_path);
  const std::size_t w = read_be32(ib, 12, images_path);
  const std::size_t nl = read_be32(lb, 4, labels_path);
  if (n != nl) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) +
                      " images vs " + std::to_string(nl) + " labels");
  }
  if (n == 0 || h == 0 || w == 0) throw FormatError(images_path + ": empty IDX");
  if (ib.size() < 16 + n * h * w) throw FormatError(images_path + ": truncated");
  if (lb.size() < 8 + n) throw FormatError(labels_path + ": truncated");

  std::vector<double> px(n * h * w);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = ib[16 + i] / 255.0;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = lb[8 + i];
  Dataset ds{Tensor({n, 1, h, w}, std::move(px)), std::move(labels), 0, split};
  ds.class_count = class_count_for(ds.labels);
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  const auto& s = ds.images.shape();
  if (s.size() != 4 || s[1] != 1) {
    throw DimensionError("save_idx: expected N×1×H×W images, got " + to_string(s));
  }
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img) throw IoError("cannot write " + images_path);
  if (!lab) throw IoError("cannot write " + labels_path);
  write_be32(img, kIdxImagesMagic);
  write_be32(img, static_cast<std::uint32_t>(s[0]));
  write_be32(img, static_cast<std::uint32_t>(s[2]));
  write_be32(img, static_cast<std::uint32_t>(s[3]));
  for (double v : ds.images.values()) {
    const auto b = static_cast<unsigned char>(
        std::clamp(std::lround(v * 255.0), 0L, 255L));
    img.put(static_cast<char>(b));
  }
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) lab.put(static_cast<char>(l));
  if (!img || !lab) throw IoError("short write while saving IDX");
}

Dataset load_cifar10_bin(std::span<const std::string> paths, Split split) {
  std::vector<double> px;
  std::vector<int> labels;
  for (const auto& path : paths) {
    const auto b = read_file(path);
    if (b.empty() || b.size() % kCifarRecord != 0) {
      throw FormatError(path + ": length " + std::to_string(b.size()) +
                        " is not a multiple of " + std::to_string(kCifarRecord));
    }
    for (std::size_t r = 0; r < b.size() / kCifarRecord; ++r) {
      const unsigned char* rec = b.data() + r * kCifarRecord;
      labels.push_back(rec[0]);
      for (std::size_t i = 1; i < kCifarRecord; ++i) px.push_back(rec[i] / 255.0);
    }
  }
  if (labels.empty()) throw FormatError("no CIFAR-10 records read");
  const std::size_t n = labels.size();
  Dataset ds{Tensor({n, 3, 32, 32}, std::move(px)), std::move(labels), 10, split};
  ds.class_count = class_count_for(ds.labels);
  return ds;
}

Dataset synthetic_blobs(const BlobSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic_blobs needs >= 2 classes");
  if (spec.n == 0) throw ConfigError("synthetic_blobs needs n > 0");
  Rng rng(spec.seed, RngStream::kData);
  const std::size_t d = shape_size(spec.sample_shape);
  // ‖c_a − c_b‖ ≈ separation when components are N(0, sep²/(2d)).
  const double center_scale = spec.separation / std::sqrt(2.0 * static_cast<double>(d));
  std::vector<double> centers(spec.classes * d);
  for (double& c : centers) c = center_scale * rng.normal();

  std::vector<double> x(spec.n * d);
  std::vector<int> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t c = i % spec.classes;
    labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < d; ++j) {
      x[i * d + j] = centers[c * d + j] + rng.normal();
    }
  }
  Shape s{spec.n};
  s.insert(s.end(), spec.sample_shape.begin(), spec.sample_shape.end());
  return {Tensor(s, std::move(x)), std::move(labels), spec.classes, Split::kTrain};
}

void normalize(Dataset& ds, std::span<const double> mean,
               std::span<const double> stddev) {
  const auto& s = ds.images.shape();
  const std::size_t channels = s.size() == 4 ? s[1] : 1;
  const std::size_t plane = s.size() == 4 ? s[2] * s[3] : ds.images.size() / s[0];
  auto pick = [&](std::span<const double> v, std::size_t c) {
    if (v.size() == 1) return v[0];
    if (v.size() != channels) {
      throw ConfigError("normalization needs 1 or " + std::to_string(channels) +
                        " values per statistic");
    }
    return v[c];
  };
  auto px = ds.images.mutable_values();
  for (std::size_t n = 0; n < s[0]; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double m = pick(mean, c);
      const double sd = pick(stddev, c);
      if (!(sd > 0.0)) throw ConfigError("normalization std must be positive");
      double* p = px.data() + (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) / sd;
    }
  }
  ds.images.round_to_precision();
}

// ---------------------------------------------------------------------------

Tensor flip_horizontal(const Tensor& batch) {
  if (batch.rank() != 4) throw DimensionError("flip_horizontal: expected N×C×H×W");
  const std::size_t planes = batch.dim(0) * batch.dim(1);
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  std::vector<double> out(batch.size());
  auto v = batch.values();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[(p * h + i) * w + j] = v[(p * h + i) * w + (w - 1 - j)];
  return Tensor(batch.shape(), std::move(out), batch.precision());
}

Tensor augment(const Tensor& batch, const AugmentFlags& flags, Rng& rng) {
  if (!flags.any()) return batch;
  if (batch.rank() != 4) throw DimensionError("augment: expected N×C×H×W");
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2),
                    w = batch.dim(3);
  const std::size_t plane = h * w, sample = c * plane;
  std::vector<double> out(batch.values().begin(), batch.values().end());
  std::vector<double> tmp(sample);

  for (std::size_t s = 0; s < n; ++s) {
    double* x = out.data() + s * sample;
    if (flags.flip && rng.bernoulli(0.5)) {
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
          std::reverse(x + ch * plane + i * w, x + ch * plane + (i + 1) * w);
    }
    if (flags.crop_pad > 0) {
      const std::size_t span = 2 * flags.crop_pad + 1;
      const auto dy = static_cast<std::ptrdiff_t>(rng.below(span)) -
                      static_cast<std::ptrdiff_t>(flags.crop_pad);
      const auto dx = static_cast<std::ptrdiff_t>(rng.below(span)) -
                      static_cast<std::ptrdiff_t>(flags.crop_pad);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const auto si = static_cast<std::ptrdiff_t>(i) + dy;
            const auto sj = static_cast<std::ptrdiff_t>(j) + dx;
            const bool in = si >= 0 && sj >= 0 &&
                            si < static_cast<std::ptrdiff_t>(h) &&
                            sj < static_cast<std::ptrdiff_t>(w);
            tmp[ch * plane + i * w + j] =
                in ? x[ch * plane + static_cast<std::size_t>(si) * w +
                       static_cast<std::size_t>(sj)]
                   : 0.0;
          }
        }
      }
      std::copy(tmp.begin(), tmp.end(), x);
    }
    if (flags.rotate_deg > 0.0) {
      const double deg = (2.0 * rng.uniform() - 1.0) * flags.rotate_deg;
      const double rad = deg * std::numbers::pi / 180.0;
      const double cs = std::cos(rad), sn = std::sin(rad);
      const double cy = (static_cast<double>(h) - 1.0) / 2.0;
      const double cx = (static_cast<double>(w) - 1.0) / 2.0;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          // Inverse-map each output pixel into the source image.
          const double yy = static_cast<double>(i) - cy;
          const double xx = static_cast<double>(j) - cx;
          const auto si = static_cast<std::ptrdiff_t>(std::lround(cs * yy + sn * xx + cy));
          const auto sj = static_cast<std::ptrdiff_t>(std::lround(-sn * yy + cs * xx + cx));
          const bool in = si >= 0 && sj >= 0 &&
                          si < static_cast<std::ptrdiff_t>(h) &&
                          sj < static_cast<std::ptrdiff_t>(w);
          for (std::size_t ch = 0; ch < c; ++ch) {
            tmp[ch * plane + i * w + j] =
                in ? x[ch * plane + static_cast<std::size_t>(si) * w +
                       static_cast<std::size_t>(sj)]
                   : 0.0;
          }
        }
      }
      std::copy(tmp.begin(), tmp.end(), x);
    }
  }
  return Tensor(batch.shape(), std::move(out), batch.precision());
}

// ---------------------------------------------------------------------------

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size,
                             std::uint64_t seed, bool shuffle)
    : ds_(&ds), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  start_epoch(0);
}

void BatchIterator::start_epoch(std::size_t epoch) {
  order_.resize(ds_->size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (shuffle_) {
    Rng rng(seed_, RngStream::kShuffle, epoch);
    rng.shuffle(order_);
  }
  cursor_ = 0;
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  out.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                     order_.begin() + static_cast<std::ptrdiff_t>(end));
  Dataset part = ds_->subset(out.indices);
  out.images = std::move(part.images);
  out.labels = std::move(part.labels);
  cursor_ = end;
  return true;
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (ds_->size() + batch_size_ - 1) / batch_size_;
}

}  // namespace disout
