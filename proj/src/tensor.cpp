#include "disout/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

#include "disout/errors.hpp"

namespace disout {

namespace {

double round_value(double v, Precision p) {
  return p == Precision::F32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " + to_string(t.shape()));
  }
}

template <typename Fn>
Tensor map(const Tensor& a, Fn fn) {
  std::vector<double> out(a.size());
  auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
  return Tensor(a.shape(), std::move(out), a.precision());
}

template <typename Fn>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, Fn fn) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.size());
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(x[i], y[i]);
  return Tensor(a.shape(), std::move(out), common_precision(a, b));
}

// Unfolds one sample (C×H×W starting at `src`) into a
// (C·kh·kw) × (Ho·Wo) column matrix.
void im2col(const double* src, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kh, std::size_t kw,
            const ConvGeometry& g, std::size_t out_h, std::size_t out_w,
            double* cols) {
  const std::size_t spatial = out_h * out_w;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        double* row = cols + ((c * kh + i) * kw + j) * spatial;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const auto h = static_cast<std::ptrdiff_t>(oh * g.stride + i) - pad;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const auto w = static_cast<std::ptrdiff_t>(ow * g.stride + j) - pad;
            const bool inside = h >= 0 && w >= 0 &&
                                h < static_cast<std::ptrdiff_t>(height) &&
                                w < static_cast<std::ptrdiff_t>(width);
            row[oh * out_w + ow] =
                inside ? src[(c * height + static_cast<std::size_t>(h)) * width +
                             static_cast<std::size_t>(w)]
                       : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-adds a column matrix back onto a C×H×W image (adjoint of im2col).
void col2im(const double* cols, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kh, std::size_t kw,
            const ConvGeometry& g, std::size_t out_h, std::size_t out_w,
            double* dst) {
  const std::size_t spatial = out_h * out_w;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const double* row = cols + ((c * kh + i) * kw + j) * spatial;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const auto h = static_cast<std::ptrdiff_t>(oh * g.stride + i) - pad;
          if (h < 0 || h >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const auto w = static_cast<std::ptrdiff_t>(ow * g.stride + j) - pad;
            if (w < 0 || w >= static_cast<std::ptrdiff_t>(width)) continue;
            dst[(c * height + static_cast<std::size_t>(h)) * width +
                static_cast<std::size_t>(w)] += row[oh * out_w + ow];
          }
        }
      }
    }
  }
}

// out[r×c] (+)= a[r×k] · b[k×c], ikj order so the inner loop is contiguous.
void gemm(const double* a, const double* b, double* out, std::size_t r,
          std::size_t k, std::size_t c) {
  for (std::size_t i = 0; i < r; ++i) {
    double* orow = out + i * c;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, Precision precision)
    : shape_(std::move(shape)), precision_(precision) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " +
                                     to_string(shape_));
  }
  if (shape_.empty()) throw DimensionError("tensor rank must be at least 1");
  values_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, Precision precision)
    : shape_(std::move(shape)), values_(std::move(values)), precision_(precision) {
  if (shape_.empty()) throw DimensionError("tensor rank must be at least 1");
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " +
                                     to_string(shape_));
  }
  if (shape_size(shape_) != values_.size()) {
    throw DimensionError("shape " + to_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values_.size()));
  }
  round_to_precision();
}

Tensor Tensor::full(Shape shape, double value, Precision precision) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), precision);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      Precision precision) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v), precision);
}

Tensor Tensor::vector(std::initializer_list<double> values, Precision precision) {
  return Tensor({values.size()}, std::vector<double>(values), precision);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         to_string(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return values_[i * shape_[1] + j];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h,
                  std::size_t w) const {
  return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " +
                         to_string(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::to(Precision precision) const {
  Tensor t = *this;
  t.precision_ = precision;
  t.round_to_precision();
  return t;
}

void Tensor::round_to_precision() {
  for (double& v : values_) {
    v = round_value(v, precision_);
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in tensor " + to_string(shape_));
    }
  }
}

Precision common_precision(const Tensor& a, const Tensor& b) {
  return (a.precision() == Precision::F64 || b.precision() == Precision::F64)
             ? Precision::F64
             : Precision::F32;
}

void require_finite(const Tensor& t, const char* where) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(where) + ": non-finite value");
    }
  }
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " +
                         to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<double> out(r * c, 0.0);
  gemm(a.values().data(), b.values().data(), out.data(), r, k, c);
  return Tensor({r, c}, std::move(out), common_precision(a, b));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  const std::size_t k = a.dim(0), r = a.dim(1), c = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_tn: leading dimensions differ " +
                         to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::vector<double> out(r * c, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = bv.data() + p * c;
    for (std::size_t i = 0; i < r; ++i) {
      const double x = av[p * r + i];
      if (x == 0.0) continue;
      double* orow = out.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += x * brow[j];
    }
  }
  return Tensor({r, c}, std::move(out), common_precision(a, b));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: trailing dimensions differ " +
                         to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::vector<double> out(r * c, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* arow = av.data() + i * k;
    for (std::size_t j = 0; j < c; ++j) {
      const double* brow = bv.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * c + j] = acc;
    }
  }
  return Tensor({r, c}, std::move(out), common_precision(a, b));
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  auto v = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return Tensor({c, r}, std::move(out), a.precision());
}

Tensor column_max(const Tensor& w) {
  if (w.empty()) throw DimensionError("column_max: empty matrix");
  require_rank(w, 2, "column_max");
  const std::size_t r = w.dim(0), c = w.dim(1);
  auto v = w.values();
  std::vector<double> out(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(c));
  for (std::size_t i = 1; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] = std::max(out[j], v[i * c + j]);
  return Tensor({c}, std::move(out), w.precision());
}

// ---------------------------------------------------------------------------

std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               const ConvGeometry& g) {
  if (g.stride == 0) throw DimensionError("conv stride must be at least 1");
  const std::size_t padded = in + 2 * g.padding;
  if (kernel == 0 || kernel > padded) {
    throw DimensionError("kernel extent " + std::to_string(kernel) +
                         " exceeds padded input extent " +
                         std::to_string(padded));
  }
  return (padded - kernel) / g.stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, ConvGeometry g) {
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t k = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != c) {
    throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) +
                         " does not match input channels of " +
                         to_string(input.shape()));
  }
  const std::size_t oh = conv_output_extent(h, kh, g);
  const std::size_t ow = conv_output_extent(w, kw, g);
  const std::size_t spatial = oh * ow, patch = c * kh * kw;

  std::vector<double> cols(patch * spatial);
  std::vector<double> out(n * k * spatial, 0.0);
  const double* in = input.values().data();
  const double* kv = kernel.values().data();
  for (std::size_t s = 0; s < n; ++s) {
    im2col(in + s * c * h * w, c, h, w, kh, kw, g, oh, ow, cols.data());
    gemm(kv, cols.data(), out.data() + s * k * spatial, k, patch, spatial);
  }
  return Tensor({n, k, oh, ow}, std::move(out), common_precision(input, kernel));
}

Tensor conv2d_transpose(
    const Tensor& grad_out, const Tensor& kernel, ConvGeometry g,
    std::optional<std::pair<std::size_t, std::size_t>> input_hw) {
  require_rank(grad_out, 4, "conv2d_transpose");
  require_rank(kernel, 4, "conv2d_transpose");
  const std::size_t n = grad_out.dim(0), k = grad_out.dim(1),
                    oh = grad_out.dim(2), ow = grad_out.dim(3);
  if (kernel.dim(0) != k) {
    throw DimensionError("conv2d_transpose: kernel " +
                         to_string(kernel.shape()) + " does not match " +
                         to_string(grad_out.shape()));
  }
  if (g.stride == 0) throw DimensionError("conv stride must be at least 1");
  const std::size_t c = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);

  std::size_t h = 0, w = 0;
  if (input_hw) {
    std::tie(h, w) = *input_hw;
  } else {
    const std::size_t ph = (oh - 1) * g.stride + kh;
    const std::size_t pw = (ow - 1) * g.stride + kw;
    if (ph <= 2 * g.padding || pw <= 2 * g.padding) {
      throw DimensionError("conv2d_transpose: padding swallows the input");
    }
    h = ph - 2 * g.padding;
    w = pw - 2 * g.padding;
  }
  if (h == 0 || w == 0 || conv_output_extent(h, kh, g) != oh ||
      conv_output_extent(w, kw, g) != ow) {
    throw DimensionError("conv2d_transpose: input extent inconsistent with " +
                         to_string(grad_out.shape()));
  }

  const std::size_t spatial = oh * ow, patch = c * kh * kw;
  // kernelᵀ as (C·kh·kw) × K so the product below is a plain gemm.
  const Tensor kt = transpose(kernel.reshaped({k, patch}));
  std::vector<double> cols(patch * spatial);
  std::vector<double> out(n * c * h * w, 0.0);
  const double* gv = grad_out.values().data();
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(cols.begin(), cols.end(), 0.0);
    gemm(kt.values().data(), gv + s * k * spatial, cols.data(), patch, k,
         spatial);
    col2im(cols.data(), c, h, w, kh, kw, g, oh, ow, out.data() + s * c * h * w);
  }
  return Tensor({n, c, h, w}, std::move(out), common_precision(grad_out, kernel));
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out,
                          std::size_t kernel_h, std::size_t kernel_w,
                          ConvGeometry g) {
  require_rank(input, 4, "conv2d_kernel_grad");
  require_rank(grad_out, 4, "conv2d_kernel_grad");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t k = grad_out.dim(1);
  const std::size_t oh = conv_output_extent(h, kernel_h, g);
  const std::size_t ow = conv_output_extent(w, kernel_w, g);
  if (grad_out.dim(0) != n || grad_out.dim(2) != oh || grad_out.dim(3) != ow) {
    throw DimensionError("conv2d_kernel_grad: grad " +
                         to_string(grad_out.shape()) +
                         " inconsistent with input " + to_string(input.shape()));
  }
  const std::size_t spatial = oh * ow, patch = c * kernel_h * kernel_w;
  std::vector<double> cols(patch * spatial);
  std::vector<double> out(k * patch, 0.0);
  const double* in = input.values().data();
  const double* gv = grad_out.values().data();
  for (std::size_t s = 0; s < n; ++s) {
    im2col(in + s * c * h * w, c, h, w, kernel_h, kernel_w, g, oh, ow,
           cols.data());
    const double* gs = gv + s * k * spatial;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* grow = gs + kk * spatial;
      double* orow = out.data() + kk * patch;
      for (std::size_t p = 0; p < patch; ++p) {
        const double* crow = cols.data() + p * spatial;
        double acc = 0.0;
        for (std::size_t q = 0; q < spatial; ++q) acc += grow[q] * crow[q];
        orow[p] += acc;
      }
    }
  }
  return Tensor({k, c, kernel_h, kernel_w}, std::move(out),
                common_precision(input, grad_out));
}

PoolResult maxpool2d(const Tensor& input, std::size_t window,
                     std::size_t stride) {
  require_rank(input, 4, "maxpool2d");
  if (window == 0 || stride == 0) {
    throw DimensionError("maxpool2d: window and stride must be positive");
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  if (window > h || window > w) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) +
                         " exceeds input " + to_string(input.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> idx(out.size());
  auto v = input.values();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = base + i * stride * w + j * stride;
        for (std::size_t a = 0; a < window; ++a) {
          for (std::size_t b = 0; b < window; ++b) {
            const std::size_t at = base + (i * stride + a) * w + j * stride + b;
            // Strict comparison keeps the first (lowest flat index) maximum.
            if (v[at] > v[best]) best = at;
          }
        }
        out[o] = v[best];
        idx[o] = best;
      }
    }
  }
  return {Tensor({n, c, oh, ow}, std::move(out), input.precision()),
          std::move(idx)};
}

Tensor maxpool2d_backward(const Tensor& grad_out,
                          std::span<const std::size_t> argmax,
                          const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) {
    throw DimensionError("maxpool2d_backward: index count mismatch");
  }
  std::vector<double> out(shape_size(input_shape), 0.0);
  auto g = grad_out.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (argmax[i] >= out.size()) {
      throw DimensionError("maxpool2d_backward: index out of range");
    }
    out[argmax[i]] += g[i];
  }
  return Tensor(input_shape, std::move(out), grad_out.precision());
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
  return map(a, [s](double x) { return x * s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return map(a, [s](double x) { return x + s; });
}

Tensor abs(const Tensor& a) {
  return map(a, [](double x) { return std::fabs(x); });
}

Tensor sign(const Tensor& a) {
  return map(a, [](double x) { return static_cast<double>((x > 0) - (x < 0)); });
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

double mean(const Tensor& a) {
  if (a.empty()) throw DimensionError("mean of an empty tensor");
  return sum(a) / static_cast<double>(a.size());
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double stddev(const Tensor& a) {
  const double m = mean(a);
  double acc = 0.0;
  for (double v : a.values()) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

std::vector<std::size_t> argmax(const Tensor& a, std::size_t axis) {
  if (a.empty()) throw DimensionError("argmax of an empty tensor");
  const std::size_t extent = a.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  auto v = a.values();
  std::vector<std::size_t> out(outer * inner, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t best = 0;
      double best_v = v[o * extent * inner + in];
      for (std::size_t e = 1; e < extent; ++e) {
        const double x = v[(o * extent + e) * inner + in];
        if (x > best_v) {
          best_v = x;
          best = e;
        }
      }
      out[o * inner + in] = best;
    }
  }
  return out;
}

}  // namespace disout
