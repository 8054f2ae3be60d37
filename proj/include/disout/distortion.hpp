#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "disout/rng.hpp"
#include "disout/tensor.hpp"

namespace disout {

enum class MaskKind { kElement, kBlock };
enum class GradMode { kExact, kApprox };

std::string to_string(MaskKind kind);
MaskKind parse_mask_kind(const std::string& s);
std::string to_string(GradMode mode);
GradMode parse_grad_mode(const std::string& s);

struct DistortionConfig {
  /// Drop/distortion probability reached at the end of the ramp.
  double p_target = 0.1;
  /// Step length, multiplied by the clean feature std at every update.
  double gamma = 5.0;
  /// Weight of the squared-norm penalty on the distortion.
  double lambda = 0.1;
  std::size_t block_size = 1;
  MaskKind mask_kind = MaskKind::kElement;
  std::size_t steps_per_batch = 1;
  /// Fraction of all iterations over which p grows linearly from 0.
  double ramp_fraction = 1.0;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
  /// Also checks block_size against the attached map's spatial extent.
  void validate_for(const Shape& feature_shape) const;
};

/// Per-attachment, per-batch values. `mask` and `epsilon` have the shape of
/// the feature-map batch; `aux_u` holds the last u (dense) or U (conv)
/// draw and `aux_s` the last S' draw (conv only).
struct DistortionState {
  Tensor mask;
  Tensor epsilon;
  std::vector<int> sigma;
  Tensor aux_u;
  Tensor aux_s;
  double p_effective = 0.0;
};

/// The two parts of the surrogate objective T.
struct ErcTerms {
  double sup_term = 0.0;
  double penalty_term = 0.0;
  [[nodiscard]] double value() const { return sup_term + penalty_term; }
};

/// Surrogate before and after the distortion update of one batch.
/// `sup_term` and `penalty_term` decompose `t_after`.
struct ErcReport {
  std::size_t layer = 0;
  double t_before = 0.0;
  double t_after = 0.0;
  double sup_term = 0.0;
  double penalty_term = 0.0;
};

// ---------------------------------------------------------------------------
// Schedules and masks

/// Linear ramp from 0 at iteration 0 to p_target at
/// ramp_fraction·total_iters, flat afterwards.
double ramp_p(std::size_t iter, std::size_t total_iters,
              const DistortionConfig& cfg);

/// i.i.d. Bernoulli(p) mask, 1 = distorted.
Tensor sample_element_mask(const Shape& shape, double p, Rng& rng,
                           Precision precision = Precision::F32);

/// DropBlock-style mask over N×C×H×W: block anchors are drawn in the valid
/// region at a corrected rate so that roughly a fraction p of each map is
/// covered, and every anchor marks a block_size×block_size square.
Tensor sample_block_mask(const Shape& shape, double p, std::size_t block_size,
                         Rng& rng, Precision precision = Precision::F32);

/// Anchor rate used by sample_block_mask.
double block_seed_rate(double p, std::size_t height, std::size_t width,
                       std::size_t block_size);

// ---------------------------------------------------------------------------
// Applying the distortion

/// Starting point of the distortion: a copy of the clean features, which
/// makes the first forward pass identical to dropout.
Tensor init_distortion(const Tensor& f);

/// f − mask∘ε, the distorted map the surrogate is evaluated on.
Tensor distorted_features(const Tensor& f, const Tensor& mask,
                          const Tensor& epsilon);

/// (f − mask∘ε) / (1 − p_effective), the map fed forward during training.
Tensor apply_distortion(const Tensor& f, const Tensor& mask,
                        const Tensor& epsilon, double p_effective);

/// Inverted dropout baseline: f∘(1 − mask) / (1 − p).
Tensor apply_dropout(const Tensor& f, const Tensor& mask, double p);

// ---------------------------------------------------------------------------
// Dense attachment (next layer is a dense layer with weight d_out × d_in)

/// T for a batch. `f_hat` and `epsilon` are N × (anything flattening to d_in).
ErcTerms erc_surrogate_fc(const Tensor& next_weight, const Tensor& f_hat,
                          std::span<const int> sigma, const Tensor& epsilon,
                          double lambda);

/// ∂T/∂ε for every sample, same shape as `epsilon`.
Tensor exact_grad_fc(const Tensor& next_weight, const Tensor& f_hat,
                     std::span<const int> sigma, const Tensor& mask,
                     const Tensor& epsilon, double lambda);

/// Randomized gradient for one sample: the selected row of the next weight
/// is replaced by u∘K_M, with K_M the column maxima of the next weight.
Tensor approx_grad_fc(const Tensor& column_maxima, int sigma_i, const Tensor& u,
                      const Tensor& mask_i, const Tensor& epsilon_i,
                      double lambda, std::size_t batch_size);

/// approx_grad_fc applied to every sample of a batch with one shared u.
Tensor approx_grad_fc_batch(const Tensor& next_weight,
                            std::span<const int> sigma, const Tensor& u,
                            const Tensor& mask, const Tensor& epsilon,
                            double lambda);

// ---------------------------------------------------------------------------
// Convolutional attachment (next layer is a conv with kernel K × C × kh × kw)

/// T for a batch of N × C × H × W maps; `geometry` is the next layer's.
ErcTerms erc_surrogate_conv(const Tensor& next_kernel, const Tensor& f_hat,
                            std::span<const int> sigma, const Tensor& epsilon,
                            double lambda, ConvGeometry geometry = {});

/// ∂T/∂ε for every sample via the transposed convolution of sign(Q) on the
/// maximizing output channel.
Tensor exact_grad_conv(const Tensor& next_kernel, const Tensor& f_hat,
                       std::span<const int> sigma, const Tensor& mask,
                       const Tensor& epsilon, double lambda,
                       ConvGeometry geometry = {});

/// K_M for a conv kernel: element [c,h,w] is the max over output channels.
Tensor kernel_channel_max(const Tensor& next_kernel);

/// Randomized gradient for one C × H × W sample. `s_prime` is kh × kw of ±1
/// and `u` is C × H × W standard normal.
Tensor approx_grad_conv(const Tensor& next_kernel, int sigma_i,
                        const Tensor& s_prime, const Tensor& u,
                        const Tensor& mask_i, const Tensor& epsilon_i,
                        double lambda, std::size_t batch_size,
                        ConvGeometry geometry = {});

/// approx_grad_conv applied to every sample with one shared (S', U).
Tensor approx_grad_conv_batch(const Tensor& next_kernel,
                              std::span<const int> sigma, const Tensor& s_prime,
                              const Tensor& u, const Tensor& mask,
                              const Tensor& epsilon, double lambda,
                              ConvGeometry geometry = {});

/// ε − γ·feature_std·grad.
Tensor update_distortion(const Tensor& epsilon, const Tensor& grad,
                         double gamma, double feature_std);

// ---------------------------------------------------------------------------
// One batch of the alternating scheme at one attachment

/// How the attached features reach the next parameterized layer.
struct NextLayer {
  const Tensor* weight = nullptr;
  bool is_conv = false;
  ConvGeometry geometry;
};

struct DistortionRngs {
  Rng* mask = nullptr;
  Rng* sigma = nullptr;
  Rng* aux = nullptr;
};

struct DistortionOutcome {
  DistortionState state;
  ErcReport report;
};

/// Samples mask and σ, initializes ε to the clean features, then performs
/// cfg.steps_per_batch gradient steps on T. Draw order: mask, σ, then the
/// auxiliary variables of each step.
DistortionOutcome optimize_distortion(const Tensor& features,
                                      const NextLayer& next,
                                      const DistortionConfig& cfg,
                                      GradMode mode, double p_effective,
                                      const DistortionRngs& rngs,
                                      std::size_t layer_id);

std::vector<int> sample_rademacher(std::size_t n, Rng& rng);

}  // namespace disout
