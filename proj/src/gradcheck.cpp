#include "disout/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>

#include "disout/distortion.hpp"
#include "disout/nn.hpp"
#include "disout/rng.hpp"

namespace disout {

namespace {

constexpr Precision kF64 = Precision::F64;

Tensor normal_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(shape, std::move(v), kF64);
}

Tensor relu_like(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = std::max(0.0, rng.normal());
  return Tensor(shape, std::move(v), kF64);
}

/// Selected output row and sign of its correlation.
std::vector<std::size_t> fc_pattern(const Tensor& k, const Tensor& f_hat,
                                    std::span<const int> sigma) {
  const std::size_t n = f_hat.dim(0), d = f_hat.size() / n;
  std::vector<double> g(d, 0.0);
  auto fv = f_hat.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) g[j] += sigma[i] * fv[i * d + j];
  }
  std::size_t best = 0;
  double best_abs = -1.0, best_val = 0.0;
  for (std::size_t r = 0; r < k.dim(0); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += k.at(r, j) * g[j];
    if (std::abs(s) > best_abs) {
      best_abs = std::abs(s);
      best_val = s;
      best = r;
    }
  }
  return {best, best_val > 0.0 ? 1u : 0u};
}

/// Selected output channel followed by the sign of every element of it.
std::vector<std::size_t> conv_pattern(const Tensor& k, const Tensor& f_hat,
                                      std::span<const int> sigma, ConvGeometry g) {
  const std::size_t n = f_hat.dim(0), per = f_hat.size() / n;
  std::vector<double> acc(per, 0.0);
  auto fv = f_hat.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < per; ++j) acc[j] += sigma[i] * fv[i * per + j];
  }
  Shape gs = f_hat.shape();
  gs[0] = 1;
  const Tensor q = conv2d(Tensor(gs, acc, kF64), k, g);
  const std::size_t channels = q.dim(1), hw = q.size() / channels;
  auto qv = q.values();
  std::size_t best = 0;
  double best_sum = -1.0;
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += std::abs(qv[c * hw + j]);
    if (s > best_sum) {
      best_sum = s;
      best = c;
    }
  }
  std::vector<std::size_t> out{best};
  for (std::size_t j = 0; j < hw; ++j) {
    const double v = qv[best * hw + j];
    out.push_back(v > 0.0 ? 2 : (v < 0.0 ? 0 : 1));
  }
  return out;
}

struct Probe {
  /// Objective at the current point.
  std::function<double()> value;
  /// Stability signature at the current point.
  std::function<std::vector<std::size_t>()> pattern;
};

/// Central differences of `probe.value` over every element of `x`. Returns
/// nullopt when any probe changes the pattern.
std::optional<std::vector<double>> central_differences(Tensor& x, const Probe& probe,
                                                       double h) {
  const auto base = probe.pattern();
  std::vector<double> fd(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x.mutable_values()[j] = orig + h;
    const double up = probe.value();
    const bool up_ok = probe.pattern() == base;
    x.mutable_values()[j] = orig - h;
    const double down = probe.value();
    const bool down_ok = probe.pattern() == base;
    x.mutable_values()[j] = orig;
    if (!up_ok || !down_ok) return std::nullopt;
    fd[j] = (up - down) / (2.0 * h);
  }
  return fd;
}

template <class Instance>
SuiteResult run_suite(const std::string& name, const GradcheckConfig& cfg,
                      std::uint64_t salt, Instance instance) {
  SuiteResult r;
  r.name = name;
  const std::size_t max_attempts = cfg.instances * 10 + 10;
  for (std::size_t attempt = 0; r.instances < cfg.instances && attempt < max_attempts;
       ++attempt) {
    const std::uint64_t seed = cfg.seed * 1000003ULL + attempt;
    Rng rng(seed, RngStream::kData, salt);
    auto pair = instance(rng);
    if (!pair) {
      ++r.rejected;
      continue;
    }
    auto& [analytic, fd] = *pair;
    if (cfg.inject_sign_flip) {
      for (double& v : analytic) v = -v;
    }
    const double err = relative_error(analytic, fd);
    if (r.instances == 0 || err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_seed = seed;
    }
    ++r.instances;
  }
  r.passed = r.instances >= cfg.instances && r.max_rel_error < cfg.tolerance;
  return r;
}

using GradPair = std::optional<std::pair<std::vector<double>, std::vector<double>>>;

std::vector<double> to_vec(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

}  // namespace

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    na = std::max(na, std::abs(a[i]));
    nb = std::max(nb, std::abs(b[i]));
  }
  const double denom = std::max(na, nb);
  return denom == 0.0 ? 0.0 : diff / denom;
}

SuiteResult gradcheck_fc(const GradcheckConfig& cfg) {
  return run_suite("fc", cfg, 11, [&](Rng& rng) -> GradPair {
    const std::size_t n = 2 + rng.below(5), d_in = 3 + rng.below(8),
                      d_out = 2 + rng.below(6);
    const double lambda = 0.01 + rng.uniform();
    const Tensor k = normal_tensor({d_out, d_in}, rng);
    const Tensor f = relu_like({n, d_in}, rng);
    const Tensor m = sample_element_mask({n, d_in}, 0.5, rng, kF64);
    Tensor eps = normal_tensor({n, d_in}, rng);
    const auto sigma = sample_rademacher(n, rng);

    const Tensor grad =
        exact_grad_fc(k, distorted_features(f, m, eps), sigma, m, eps, lambda);
    Probe probe{
        [&] {
          return erc_surrogate_fc(k, distorted_features(f, m, eps), sigma, eps, lambda)
              .value();
        },
        [&] { return fc_pattern(k, distorted_features(f, m, eps), sigma); }};
    auto fd = central_differences(eps, probe, cfg.step);
    if (!fd) return std::nullopt;
    return std::make_pair(to_vec(grad), std::move(*fd));
  });
}

SuiteResult gradcheck_conv(const GradcheckConfig& cfg) {
  return run_suite("conv", cfg, 12, [&](Rng& rng) -> GradPair {
    const std::size_t n = 1 + rng.below(3), c = 1 + rng.below(3),
                      out = 2 + rng.below(3), kk = 1 + rng.below(3),
                      h = 4 + rng.below(3), w = 4 + rng.below(3);
    ConvGeometry g{1 + rng.below(2), rng.below(2)};
    const double lambda = 0.01 + rng.uniform();
    const Tensor k = normal_tensor({out, c, kk, kk}, rng);
    const Tensor f = relu_like({n, c, h, w}, rng);
    const Tensor m = sample_element_mask(f.shape(), 0.5, rng, kF64);
    Tensor eps = normal_tensor(f.shape(), rng);
    const auto sigma = sample_rademacher(n, rng);

    const Tensor grad =
        exact_grad_conv(k, distorted_features(f, m, eps), sigma, m, eps, lambda, g);
    Probe probe{
        [&] {
          return erc_surrogate_conv(k, distorted_features(f, m, eps), sigma, eps,
                                    lambda, g)
              .value();
        },
        [&] { return conv_pattern(k, distorted_features(f, m, eps), sigma, g); }};
    auto fd = central_differences(eps, probe, cfg.step);
    if (!fd) return std::nullopt;
    return std::make_pair(to_vec(grad), std::move(*fd));
  });
}

SuiteResult gradcheck_backprop(const GradcheckConfig& cfg) {
  return run_suite("backprop", cfg, 13, [&](Rng& rng) -> GradPair {
    const std::size_t n = 2 + rng.below(3), classes = 3;
    Network net({1, 6, 6},
                {LayerSpec::conv(1, 3, 3), LayerSpec::relu(true),
                 LayerSpec::conv(3, 4, 3, 1, 1), LayerSpec::relu(),
                 LayerSpec::maxpool(2, 2), LayerSpec::flatten(),
                 LayerSpec::dense(16, 6), LayerSpec::relu(true),
                 LayerSpec::dense(6, classes), LayerSpec::softmax_head()},
                true, kF64);
    for (auto& [name, t] : net.params()) t = normal_tensor(t.shape(), rng, 0.5);
    const Tensor x = normal_tensor({n, 1, 6, 6}, rng);
    std::vector<int> labels(n);
    for (int& y : labels) y = static_cast<int>(rng.below(classes));

    const double p = 0.3;
    std::vector<Tensor> masks, held;
    for (const auto& a : net.attachments()) {
      Shape s{n};
      s.insert(s.end(), a.sample_shape.begin(), a.sample_shape.end());
      masks.push_back(sample_element_mask(s, p, rng, kF64));
      held.push_back(normal_tensor(s, rng));
    }
    // Masked positions carry held[k] (before rescaling) whatever the weights.
    AttachmentHook hook = [&](std::size_t k, const Attachment&, const Tensor& clean) {
      const Tensor eps = mul(masks[k], sub(clean, held[k]));
      return DistortedFeature{apply_distortion(clean, masks[k], eps, p), masks[k], p};
    };
    auto pattern = [&] {
      const ForwardResult r = forward(net, x, Mode::kTrain, hook);
      std::vector<std::size_t> sig;
      for (std::size_t li = 0; li < net.layers().size(); ++li) {
        if (net.layers()[li].kind == LayerKind::kRelu) {
          for (double v : r.cache.inputs[li].values()) sig.push_back(v > 0.0);
        }
        const auto& am = r.cache.pool_argmax[li];
        sig.insert(sig.end(), am.begin(), am.end());
      }
      return sig;
    };
    Probe probe{
        [&] {
          return softmax_crossentropy(forward(net, x, Mode::kTrain, hook).logits,
                                      labels)
              .loss;
        },
        pattern};

    const ForwardResult base = forward(net, x, Mode::kTrain, hook);
    const ParamMap grads = backward(net, base.cache, labels);
    std::vector<double> analytic, numeric;
    for (auto& [name, t] : net.params()) {
      auto fd = central_differences(t, probe, cfg.step);
      if (!fd) return std::nullopt;
      const auto& g = grads.at(name).values();
      analytic.insert(analytic.end(), g.begin(), g.end());
      numeric.insert(numeric.end(), fd->begin(), fd->end());
    }
    return std::make_pair(std::move(analytic), std::move(numeric));
  });
}

std::vector<SuiteResult> run_gradcheck(const GradcheckConfig& cfg) {
  return {gradcheck_fc(cfg), gradcheck_conv(cfg), gradcheck_backprop(cfg)};
}

}  // namespace disout
