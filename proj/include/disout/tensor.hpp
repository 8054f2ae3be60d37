#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace disout {

enum class Precision : std::uint8_t { F32 = 32, F64 = 64 };

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array. Values are held as doubles; an F32 tensor keeps
/// every value exactly representable as a float (each op rounds its result),
/// so F32 arithmetic is reproduced bit-for-bit regardless of storage width.
///
/// A default-constructed tensor is "unset": rank 0 and no values.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor. Every dimension must be positive.
  explicit Tensor(Shape shape, Precision precision = Precision::F32);

  /// Takes ownership of `values`; throws DimensionError on a size mismatch
  /// and NumericError on non-finite input.
  Tensor(Shape shape, std::vector<double> values,
         Precision precision = Precision::F32);

  static Tensor full(Shape shape, double value,
                     Precision precision = Precision::F32);

  /// 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       Precision precision = Precision::F64);

  /// 1-D literal.
  static Tensor vector(std::initializer_list<double> values,
                       Precision precision = Precision::F64);

  [[nodiscard]] bool empty() const noexcept { return values_.empty(); }
  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] Precision precision() const noexcept { return precision_; }

  [[nodiscard]] std::span<const double> values() const noexcept {
    return values_;
  }
  /// Raw mutable view. Writers are responsible for finiteness; F32 tensors
  /// should be passed through round_to_precision() afterwards.
  [[nodiscard]] std::span<double> mutable_values() noexcept { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  [[nodiscard]] double at(std::size_t i, std::size_t j) const;
  [[nodiscard]] double at(std::size_t n, std::size_t c, std::size_t h,
                          std::size_t w) const;

  [[nodiscard]] Tensor reshaped(Shape shape) const;
  [[nodiscard]] Tensor to(Precision precision) const;

  /// Re-applies the precision rounding after raw writes and checks finiteness.
  void round_to_precision();

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
  Precision precision_ = Precision::F32;
};

/// Wider of the two operand precisions.
Precision common_precision(const Tensor& a, const Tensor& b);

/// Throws NumericError naming `where` if any value is NaN/Inf.
void require_finite(const Tensor& t, const char* where);

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b);
/// aᵀ·b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a·bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Element j is the maximum over the rows of column j.
Tensor column_max(const Tensor& w);

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               const ConvGeometry& g);

Tensor conv2d(const Tensor& input, const Tensor& kernel, ConvGeometry g = {});

/// Adjoint of conv2d with respect to its input. `input_hw` selects the
/// forward input extent when stride > 1 leaves it ambiguous; by default the
/// smallest consistent extent is used.
Tensor conv2d_transpose(
    const Tensor& grad_out, const Tensor& kernel, ConvGeometry g = {},
    std::optional<std::pair<std::size_t, std::size_t>> input_hw = std::nullopt);

/// Gradient of ⟨conv2d(input, kernel), grad_out⟩ with respect to the kernel.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out,
                          std::size_t kernel_h, std::size_t kernel_w,
                          ConvGeometry g = {});

struct PoolResult {
  Tensor output;
  /// Flat input index of each output element's maximum.
  std::vector<std::size_t> argmax;
};

/// Max pooling over N×C×H×W. Ties go to the lowest flat index.
PoolResult maxpool2d(const Tensor& input, std::size_t window,
                     std::size_t stride);

Tensor maxpool2d_backward(const Tensor& grad_out,
                          std::span<const std::size_t> argmax,
                          const Shape& input_shape);

// ---------------------------------------------------------------------------
// Elementwise and reductions

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Hadamard product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor abs(const Tensor& a);
/// −1, 0 or +1 per element.
Tensor sign(const Tensor& a);

double sum(const Tensor& a);
double mean(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
/// Population standard deviation over all elements.
double stddev(const Tensor& a);

/// Index of the maximum along `axis` for every position of the remaining
/// axes (row-major over them). Ties go to the lowest index.
std::vector<std::size_t> argmax(const Tensor& a, std::size_t axis);

}  // namespace disout
