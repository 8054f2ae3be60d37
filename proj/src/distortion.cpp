#include "disout/distortion.hpp"

#include <algorithm>
#include <cmath>

#include "disout/errors.hpp"

namespace disout {

namespace {

struct BatchView {
  std::size_t n = 0;
  std::size_t d = 0;
};

BatchView batch_view(const Tensor& t, const char* op) {
  if (t.rank() < 2) {
    throw DimensionError(std::string(op) +
                         ": expected a batch (rank >= 2), got " +
                         to_string(t.shape()));
  }
  return {t.dim(0), t.size() / t.dim(0)};
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_sigma(std::span<const int> sigma, std::size_t n, const char* op) {
  if (sigma.size() != n) {
    throw DimensionError(std::string(op) + ": " + std::to_string(sigma.size()) +
                         " Rademacher signs for a batch of " +
                         std::to_string(n));
  }
  for (int s : sigma) {
    if (s != 1 && s != -1) {
      throw DimensionError(std::string(op) + ": Rademacher signs must be ±1");
    }
  }
}

Precision widest(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->precision() == Precision::F64) return Precision::F64;
  }
  return Precision::F32;
}

// Σ_i σ_i x_i over the leading axis, as a flat vector of length d.
std::vector<double> signed_batch_sum(const Tensor& x, std::span<const int> sigma) {
  const auto [n, d] = batch_view(x, "signed_batch_sum");
  std::vector<double> g(d, 0.0);
  auto v = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sigma[i];
    const double* row = v.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) g[j] += s * row[j];
  }
  return g;
}

double squared_norm(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v * v;
  return acc;
}

double penalty(const Tensor& epsilon, double lambda, std::size_t n) {
  return lambda / (2.0 * static_cast<double>(n)) * squared_norm(epsilon);
}

// Inner products ⟨K[k,:], g⟩ for every row k.
std::vector<double> row_products(const Tensor& weight, const std::vector<double>& g) {
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  std::vector<double> out(rows, 0.0);
  auto w = weight.values();
  for (std::size_t k = 0; k < rows; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += w[k * cols + j] * g[j];
    out[k] = acc;
  }
  return out;
}

// Lowest index attaining max |v|.
std::size_t argmax_abs(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (std::fabs(v[k]) > std::fabs(v[best])) best = k;
  }
  return best;
}

double sign_of(double x) { return static_cast<double>((x > 0) - (x < 0)); }

void check_fc_operands(const Tensor& weight, const Tensor& f_hat,
                       const char* op) {
  if (weight.rank() != 2) {
    throw DimensionError(std::string(op) + ": next weight must be a matrix");
  }
  const auto view = batch_view(f_hat, op);
  if (weight.dim(1) != view.d) {
    throw DimensionError(std::string(op) + ": next weight " +
                         to_string(weight.shape()) + " does not accept " +
                         std::to_string(view.d) + " features");
  }
}

void check_conv_operands(const Tensor& kernel, const Tensor& f_hat,
                         const char* op) {
  if (kernel.rank() != 4 || f_hat.rank() != 4) {
    throw DimensionError(std::string(op) +
                         ": expected a rank-4 kernel and feature batch");
  }
  if (kernel.dim(1) != f_hat.dim(1)) {
    throw DimensionError(std::string(op) + ": kernel " +
                         to_string(kernel.shape()) +
                         " does not match feature channels of " +
                         to_string(f_hat.shape()));
  }
}

struct ConvSup {
  Tensor q;  // 1 × K × Hq × Wq
  std::vector<double> channel_sums;
  std::size_t best = 0;
  std::size_t spatial = 0;
};

ConvSup conv_sup(const Tensor& kernel, const Tensor& f_hat,
                 std::span<const int> sigma, ConvGeometry geometry) {
  const std::size_t c = f_hat.dim(1), h = f_hat.dim(2), w = f_hat.dim(3);
  Tensor g({1, c, h, w}, signed_batch_sum(f_hat, sigma), Precision::F64);
  ConvSup out;
  out.q = conv2d(g, kernel.to(Precision::F64), geometry);
  const std::size_t k = out.q.dim(1);
  out.spatial = out.q.dim(2) * out.q.dim(3);
  out.channel_sums.assign(k, 0.0);
  auto qv = out.q.values();
  for (std::size_t kk = 0; kk < k; ++kk) {
    double acc = 0.0;
    for (std::size_t s = 0; s < out.spatial; ++s) {
      acc += std::fabs(qv[kk * out.spatial + s]);
    }
    out.channel_sums[kk] = acc;
  }
  for (std::size_t kk = 1; kk < k; ++kk) {
    if (out.channel_sums[kk] > out.channel_sums[out.best]) out.best = kk;
  }
  return out;
}

}  // namespace

std::string to_string(MaskKind kind) {
  return kind == MaskKind::kElement ? "element" : "block";
}

MaskKind parse_mask_kind(const std::string& s) {
  if (s == "element") return MaskKind::kElement;
  if (s == "block") return MaskKind::kBlock;
  throw ConfigError("unknown mask kind '" + s + "' (expected element|block)");
}

std::string to_string(GradMode mode) {
  return mode == GradMode::kExact ? "exact" : "approx";
}

GradMode parse_grad_mode(const std::string& s) {
  if (s == "exact") return GradMode::kExact;
  if (s == "approx") return GradMode::kApprox;
  throw ConfigError("unknown gradient mode '" + s + "' (expected exact|approx)");
}

void DistortionConfig::validate() const {
  if (!(p_target >= 0.0 && p_target < 1.0)) {
    throw ConfigError("disout.p_target must lie in [0, 1), got " +
                      std::to_string(p_target));
  }
  if (!(gamma >= 0.0)) throw ConfigError("disout.gamma must be >= 0");
  if (!(lambda >= 0.0)) throw ConfigError("disout.lambda must be >= 0");
  if (block_size == 0) throw ConfigError("disout.block_size must be positive");
  if (steps_per_batch == 0) {
    throw ConfigError("disout.steps_per_batch must be positive");
  }
  if (!(ramp_fraction >= 0.0 && ramp_fraction <= 1.0)) {
    throw ConfigError("disout.ramp_fraction must lie in [0, 1]");
  }
}

void DistortionConfig::validate_for(const Shape& feature_shape) const {
  validate();
  if (mask_kind != MaskKind::kBlock) return;
  if (feature_shape.size() != 4) {
    throw ConfigError("block masks need N×C×H×W feature maps, got " +
                      to_string(feature_shape));
  }
  if (block_size > std::min(feature_shape[2], feature_shape[3])) {
    throw ConfigError("disout.block_size " + std::to_string(block_size) +
                      " exceeds feature map " + std::to_string(feature_shape[2]) +
                      "x" + std::to_string(feature_shape[3]));
  }
}

double ramp_p(std::size_t iter, std::size_t total_iters,
              const DistortionConfig& cfg) {
  const double span = cfg.ramp_fraction * static_cast<double>(total_iters);
  if (span <= 0.0) return cfg.p_target;
  const double t = static_cast<double>(iter) / span;
  return t >= 1.0 ? cfg.p_target : cfg.p_target * t;
}

Tensor sample_element_mask(const Shape& shape, double p, Rng& rng,
                           Precision precision) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("mask probability must lie in [0, 1), got " +
                      std::to_string(p));
  }
  Tensor mask(shape, precision);
  for (double& v : mask.mutable_values()) v = rng.bernoulli(p) ? 1.0 : 0.0;
  return mask;
}

double block_seed_rate(double p, std::size_t height, std::size_t width,
                       std::size_t block_size) {
  const double valid = static_cast<double>((height - block_size + 1) *
                                           (width - block_size + 1));
  const double area = static_cast<double>(block_size * block_size);
  return std::min(1.0, p * static_cast<double>(height * width) / (area * valid));
}

Tensor sample_block_mask(const Shape& shape, double p, std::size_t block_size,
                         Rng& rng, Precision precision) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("mask probability must lie in [0, 1), got " +
                      std::to_string(p));
  }
  if (shape.size() != 4) {
    throw ConfigError("block masks need an N×C×H×W shape, got " +
                      to_string(shape));
  }
  const std::size_t h = shape[2], w = shape[3];
  if (block_size == 0 || block_size > std::min(h, w)) {
    throw ConfigError("block_size " + std::to_string(block_size) +
                      " does not fit a " + std::to_string(h) + "x" +
                      std::to_string(w) + " map");
  }
  const double rate = block_seed_rate(p, h, w, block_size);
  Tensor mask(shape, precision);
  auto m = mask.mutable_values();
  const std::size_t planes = shape[0] * shape[1];
  for (std::size_t plane = 0; plane < planes; ++plane) {
    double* base = m.data() + plane * h * w;
    for (std::size_t i = 0; i + block_size <= h; ++i) {
      for (std::size_t j = 0; j + block_size <= w; ++j) {
        if (!rng.bernoulli(rate)) continue;
        for (std::size_t a = i; a < std::min(h, i + block_size); ++a) {
          for (std::size_t b = j; b < std::min(w, j + block_size); ++b) {
            base[a * w + b] = 1.0;
          }
        }
      }
    }
  }
  return mask;
}

Tensor init_distortion(const Tensor& f) { return f; }

Tensor distorted_features(const Tensor& f, const Tensor& mask,
                          const Tensor& epsilon) {
  require_same(f, mask, "distorted_features");
  require_same(f, epsilon, "distorted_features");
  return sub(f, mul(mask, epsilon));
}

Tensor apply_distortion(const Tensor& f, const Tensor& mask,
                        const Tensor& epsilon, double p_effective) {
  if (!(p_effective >= 0.0 && p_effective < 1.0)) {
    throw ConfigError("apply_distortion: p_effective must lie in [0, 1)");
  }
  Tensor out = distorted_features(f, mask, epsilon);
  if (p_effective == 0.0) return out;
  return scale(out, 1.0 / (1.0 - p_effective));
}

Tensor apply_dropout(const Tensor& f, const Tensor& mask, double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("apply_dropout: p must lie in [0, 1)");
  }
  Tensor kept = mul(f, add_scalar(scale(mask, -1.0), 1.0));
  if (p == 0.0) return kept;
  return scale(kept, 1.0 / (1.0 - p));
}

// ---------------------------------------------------------------------------

ErcTerms erc_surrogate_fc(const Tensor& next_weight, const Tensor& f_hat,
                          std::span<const int> sigma, const Tensor& epsilon,
                          double lambda) {
  check_fc_operands(next_weight, f_hat, "erc_surrogate_fc");
  require_same(f_hat, epsilon, "erc_surrogate_fc");
  const std::size_t n = f_hat.dim(0);
  require_sigma(sigma, n, "erc_surrogate_fc");

  const auto g = signed_batch_sum(f_hat, sigma);
  const auto ip = row_products(next_weight, g);
  ErcTerms t;
  t.sup_term = std::fabs(ip[argmax_abs(ip)]) / static_cast<double>(n);
  t.penalty_term = penalty(epsilon, lambda, n);
  return t;
}

Tensor exact_grad_fc(const Tensor& next_weight, const Tensor& f_hat,
                     std::span<const int> sigma, const Tensor& mask,
                     const Tensor& epsilon, double lambda) {
  check_fc_operands(next_weight, f_hat, "exact_grad_fc");
  require_same(f_hat, mask, "exact_grad_fc");
  require_same(f_hat, epsilon, "exact_grad_fc");
  const auto [n, d] = batch_view(f_hat, "exact_grad_fc");
  require_sigma(sigma, n, "exact_grad_fc");

  const auto g = signed_batch_sum(f_hat, sigma);
  const auto ip = row_products(next_weight, g);
  const std::size_t k_hat = argmax_abs(ip);
  const double s_hat = sign_of(ip[k_hat]);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double pen = lambda / static_cast<double>(n);

  const double* row = next_weight.values().data() + k_hat * d;
  auto m = mask.values();
  auto e = epsilon.values();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double coef = -inv_n * sigma[i] * s_hat;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t at = i * d + j;
      out[at] = coef * row[j] * m[at] + pen * e[at];
    }
  }
  return Tensor(epsilon.shape(), std::move(out),
                widest({&next_weight, &f_hat, &epsilon}));
}

Tensor approx_grad_fc(const Tensor& column_maxima, int sigma_i, const Tensor& u,
                      const Tensor& mask_i, const Tensor& epsilon_i,
                      double lambda, std::size_t batch_size) {
  const std::size_t d = epsilon_i.size();
  if (column_maxima.size() != d || u.size() != d || mask_i.size() != d) {
    throw DimensionError("approx_grad_fc: operand sizes differ");
  }
  if (batch_size == 0) throw DimensionError("approx_grad_fc: empty batch");
  const double coef = -static_cast<double>(sigma_i) / static_cast<double>(batch_size);
  const double pen = lambda / static_cast<double>(batch_size);
  auto km = column_maxima.values();
  auto uv = u.values();
  auto m = mask_i.values();
  auto e = epsilon_i.values();
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = coef * uv[j] * km[j] * m[j] + pen * e[j];
  }
  return Tensor(epsilon_i.shape(), std::move(out),
                widest({&column_maxima, &u, &epsilon_i}));
}

Tensor approx_grad_fc_batch(const Tensor& next_weight,
                            std::span<const int> sigma, const Tensor& u,
                            const Tensor& mask, const Tensor& epsilon,
                            double lambda) {
  check_fc_operands(next_weight, epsilon, "approx_grad_fc_batch");
  require_same(mask, epsilon, "approx_grad_fc_batch");
  const auto [n, d] = batch_view(epsilon, "approx_grad_fc_batch");
  require_sigma(sigma, n, "approx_grad_fc_batch");
  const Tensor km = column_max(next_weight);
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lo = static_cast<std::ptrdiff_t>(i * d);
    const auto hi = static_cast<std::ptrdiff_t>((i + 1) * d);
    Tensor m_i({d}, std::vector<double>(mask.values().begin() + lo,
                                        mask.values().begin() + hi),
               mask.precision());
    Tensor e_i({d}, std::vector<double>(epsilon.values().begin() + lo,
                                        epsilon.values().begin() + hi),
               epsilon.precision());
    Tensor gi = approx_grad_fc(km, sigma[i], u, m_i, e_i, lambda, n);
    std::copy(gi.values().begin(), gi.values().end(), out.begin() + lo);
  }
  return Tensor(epsilon.shape(), std::move(out),
                widest({&next_weight, &u, &epsilon}));
}

// ---------------------------------------------------------------------------

ErcTerms erc_surrogate_conv(const Tensor& next_kernel, const Tensor& f_hat,
                            std::span<const int> sigma, const Tensor& epsilon,
                            double lambda, ConvGeometry geometry) {
  check_conv_operands(next_kernel, f_hat, "erc_surrogate_conv");
  require_same(f_hat, epsilon, "erc_surrogate_conv");
  const std::size_t n = f_hat.dim(0);
  require_sigma(sigma, n, "erc_surrogate_conv");

  const ConvSup sup = conv_sup(next_kernel, f_hat, sigma, geometry);
  ErcTerms t;
  t.sup_term = sup.channel_sums[sup.best] /
               (static_cast<double>(n) * static_cast<double>(sup.spatial));
  t.penalty_term = penalty(epsilon, lambda, n);
  return t;
}

Tensor exact_grad_conv(const Tensor& next_kernel, const Tensor& f_hat,
                       std::span<const int> sigma, const Tensor& mask,
                       const Tensor& epsilon, double lambda,
                       ConvGeometry geometry) {
  check_conv_operands(next_kernel, f_hat, "exact_grad_conv");
  require_same(f_hat, mask, "exact_grad_conv");
  require_same(f_hat, epsilon, "exact_grad_conv");
  const std::size_t n = f_hat.dim(0), c = f_hat.dim(1), h = f_hat.dim(2),
                    w = f_hat.dim(3);
  require_sigma(sigma, n, "exact_grad_conv");

  const ConvSup sup = conv_sup(next_kernel, f_hat, sigma, geometry);
  const std::size_t qh = sup.q.dim(2), qw = sup.q.dim(3);
  const std::size_t kh = next_kernel.dim(2), kw = next_kernel.dim(3);

  // sign(Q[k̂]) pulled back through the k̂-th filter.
  std::vector<double> s(sup.spatial);
  auto qv = sup.q.values();
  for (std::size_t i = 0; i < sup.spatial; ++i) {
    s[i] = sign_of(qv[sup.best * sup.spatial + i]);
  }
  const std::size_t filter = c * kh * kw;
  auto kv = next_kernel.values();
  Tensor row({1, c, kh, kw},
             std::vector<double>(kv.begin() + static_cast<std::ptrdiff_t>(sup.best * filter),
                                 kv.begin() + static_cast<std::ptrdiff_t>((sup.best + 1) * filter)),
             Precision::F64);
  const Tensor back = conv2d_transpose(Tensor({1, 1, qh, qw}, std::move(s), Precision::F64),
                                       row, geometry, std::make_pair(h, w));

  const double inv = 1.0 / (static_cast<double>(n) * static_cast<double>(sup.spatial));
  const double pen = lambda / static_cast<double>(n);
  const std::size_t d = c * h * w;
  auto bv = back.values();
  auto m = mask.values();
  auto e = epsilon.values();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double coef = -inv * sigma[i];
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t at = i * d + j;
      out[at] = coef * bv[j] * m[at] + pen * e[at];
    }
  }
  return Tensor(epsilon.shape(), std::move(out),
                widest({&next_kernel, &f_hat, &epsilon}));
}

Tensor kernel_channel_max(const Tensor& next_kernel) {
  if (next_kernel.rank() != 4) {
    throw DimensionError("kernel_channel_max: expected a rank-4 kernel");
  }
  const std::size_t k = next_kernel.dim(0);
  const std::size_t rest = next_kernel.size() / k;
  return column_max(next_kernel.reshaped({k, rest}))
      .reshaped({next_kernel.dim(1), next_kernel.dim(2), next_kernel.dim(3)});
}

Tensor approx_grad_conv(const Tensor& next_kernel, int sigma_i,
                        const Tensor& s_prime, const Tensor& u,
                        const Tensor& mask_i, const Tensor& epsilon_i,
                        double lambda, std::size_t batch_size,
                        ConvGeometry geometry) {
  if (next_kernel.rank() != 4 || epsilon_i.rank() != 3) {
    throw DimensionError("approx_grad_conv: expected a rank-4 kernel and a "
                         "C×H×W sample");
  }
  const std::size_t c = epsilon_i.dim(0), h = epsilon_i.dim(1),
                    w = epsilon_i.dim(2);
  const std::size_t kh = next_kernel.dim(2), kw = next_kernel.dim(3);
  if (next_kernel.dim(1) != c || s_prime.size() != kh * kw ||
      u.shape() != epsilon_i.shape() || mask_i.shape() != epsilon_i.shape()) {
    throw DimensionError("approx_grad_conv: operand shapes differ");
  }
  if (batch_size == 0) throw DimensionError("approx_grad_conv: empty batch");
  const std::size_t spatial = conv_output_extent(h, kh, geometry) *
                              conv_output_extent(w, kw, geometry);

  const Tensor km = kernel_channel_max(next_kernel);
  auto kmv = km.values();
  auto sv = s_prime.values();
  std::vector<double> channel_weight(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t t = 0; t < kh * kw; ++t) acc += kmv[ch * kh * kw + t] * sv[t];
    channel_weight[ch] = acc;
  }

  const double coef = -static_cast<double>(sigma_i) /
                      (static_cast<double>(batch_size) * static_cast<double>(spatial));
  const double pen = lambda / static_cast<double>(batch_size);
  auto uv = u.values();
  auto m = mask_i.values();
  auto e = epsilon_i.values();
  std::vector<double> out(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double cw = coef * channel_weight[ch];
    for (std::size_t p = 0; p < h * w; ++p) {
      const std::size_t at = ch * h * w + p;
      out[at] = cw * uv[at] * m[at] + pen * e[at];
    }
  }
  return Tensor(epsilon_i.shape(), std::move(out),
                widest({&next_kernel, &u, &epsilon_i}));
}

Tensor approx_grad_conv_batch(const Tensor& next_kernel,
                              std::span<const int> sigma, const Tensor& s_prime,
                              const Tensor& u, const Tensor& mask,
                              const Tensor& epsilon, double lambda,
                              ConvGeometry geometry) {
  check_conv_operands(next_kernel, epsilon, "approx_grad_conv_batch");
  require_same(mask, epsilon, "approx_grad_conv_batch");
  const std::size_t n = epsilon.dim(0);
  require_sigma(sigma, n, "approx_grad_conv_batch");
  const Shape sample{epsilon.dim(1), epsilon.dim(2), epsilon.dim(3)};
  const std::size_t d = shape_size(sample);
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lo = static_cast<std::ptrdiff_t>(i * d);
    const auto hi = static_cast<std::ptrdiff_t>((i + 1) * d);
    Tensor m_i(sample, std::vector<double>(mask.values().begin() + lo,
                                           mask.values().begin() + hi),
               mask.precision());
    Tensor e_i(sample, std::vector<double>(epsilon.values().begin() + lo,
                                           epsilon.values().begin() + hi),
               epsilon.precision());
    Tensor gi = approx_grad_conv(next_kernel, sigma[i], s_prime, u, m_i, e_i,
                                 lambda, n, geometry);
    std::copy(gi.values().begin(), gi.values().end(), out.begin() + lo);
  }
  return Tensor(epsilon.shape(), std::move(out),
                widest({&next_kernel, &u, &epsilon}));
}

Tensor update_distortion(const Tensor& epsilon, const Tensor& grad,
                         double gamma, double feature_std) {
  if (!(gamma >= 0.0)) throw ConfigError("update_distortion: gamma must be >= 0");
  const double step = gamma * feature_std;
  return sub(epsilon, scale(grad, step)).to(epsilon.precision());
}

// ---------------------------------------------------------------------------

std::vector<int> sample_rademacher(std::size_t n, Rng& rng) {
  std::vector<int> sigma(n);
  for (int& s : sigma) s = rng.rademacher();
  return sigma;
}

DistortionOutcome optimize_distortion(const Tensor& features,
                                      const NextLayer& next,
                                      const DistortionConfig& cfg,
                                      GradMode mode, double p_effective,
                                      const DistortionRngs& rngs,
                                      std::size_t layer_id) {
  if (next.weight == nullptr || !rngs.mask || !rngs.sigma || !rngs.aux) {
    throw ConfigError("optimize_distortion: next layer and RNG streams required");
  }
  const Tensor& weight = *next.weight;
  DistortionOutcome out;
  DistortionState& st = out.state;
  st.p_effective = p_effective;
  st.mask = cfg.mask_kind == MaskKind::kElement
                ? sample_element_mask(features.shape(), p_effective, *rngs.mask,
                                      features.precision())
                : sample_block_mask(features.shape(), p_effective,
                                    cfg.block_size, *rngs.mask,
                                    features.precision());
  const std::size_t n = features.dim(0);
  st.sigma = sample_rademacher(n, *rngs.sigma);
  st.epsilon = init_distortion(features);

  auto surrogate = [&](const Tensor& eps) {
    const Tensor f_hat = distorted_features(features, st.mask, eps);
    return next.is_conv ? erc_surrogate_conv(weight, f_hat, st.sigma, eps,
                                             cfg.lambda, next.geometry)
                        : erc_surrogate_fc(weight, f_hat, st.sigma, eps,
                                           cfg.lambda);
  };

  out.report.layer = layer_id;
  out.report.t_before = surrogate(st.epsilon).value();
  const double feature_std = stddev(features);

  for (std::size_t step = 0; step < cfg.steps_per_batch; ++step) {
    Tensor grad;
    if (mode == GradMode::kExact) {
      const Tensor f_hat = distorted_features(features, st.mask, st.epsilon);
      grad = next.is_conv
                 ? exact_grad_conv(weight, f_hat, st.sigma, st.mask, st.epsilon,
                                   cfg.lambda, next.geometry)
                 : exact_grad_fc(weight, f_hat, st.sigma, st.mask, st.epsilon,
                                 cfg.lambda);
    } else if (next.is_conv) {
      const std::size_t kh = weight.dim(2), kw = weight.dim(3);
      st.aux_s = Tensor({kh, kw}, features.precision());
      for (double& v : st.aux_s.mutable_values()) v = rngs.aux->rademacher();
      st.aux_u = Tensor({features.dim(1), features.dim(2), features.dim(3)},
                        features.precision());
      for (double& v : st.aux_u.mutable_values()) v = rngs.aux->normal();
      st.aux_u.round_to_precision();
      grad = approx_grad_conv_batch(weight, st.sigma, st.aux_s, st.aux_u,
                                    st.mask, st.epsilon, cfg.lambda,
                                    next.geometry);
    } else {
      st.aux_u = Tensor({features.size() / n}, features.precision());
      for (double& v : st.aux_u.mutable_values()) v = rngs.aux->normal();
      st.aux_u.round_to_precision();
      grad = approx_grad_fc_batch(weight, st.sigma, st.aux_u, st.mask,
                                  st.epsilon, cfg.lambda);
    }
    st.epsilon = update_distortion(st.epsilon, grad, cfg.gamma, feature_std);
  }

  const ErcTerms after = surrogate(st.epsilon);
  out.report.t_after = after.value();
  out.report.sup_term = after.sup_term;
  out.report.penalty_term = after.penalty_term;
  return out;
}

}  // namespace disout
