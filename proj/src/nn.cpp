#include "disout/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "disout/errors.hpp"

namespace disout {

namespace {

std::string layer_label(std::size_t i, const LayerSpec& spec) {
  return "layer " + std::to_string(i) + " (" + to_string(spec.kind) + ")";
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor(x.shape(), std::move(out), x.precision());
}

void add_row_bias(Tensor& x, const Tensor& bias) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  auto v = x.mutable_values();
  auto b = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] += b[j];
  x.round_to_precision();
}

void add_channel_bias(Tensor& x, const Tensor& bias) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto v = x.mutable_values();
  auto b = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) v[(i * c + ch) * hw + p] += b[ch];
  x.round_to_precision();
}

Shape batch_shape(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

Tensor gate_for(const Tensor& mask, double p_effective) {
  if (!(p_effective >= 0.0 && p_effective < 1.0)) {
    throw ConfigError("attachment p_effective must lie in [0, 1)");
  }
  Tensor keep = add_scalar(scale(mask, -1.0), 1.0);
  return p_effective == 0.0 ? keep : scale(keep, 1.0 / (1.0 - p_effective));
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kSoftmaxHead: return "softmax-crossentropy-head";
  }
  return "?";
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv(std::size_t in_channels, std::size_t out_channels,
                          std::size_t kernel, std::size_t stride,
                          std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.in = in_channels;
  s.out = out_channels;
  s.kernel = kernel;
  s.geometry = {stride, padding};
  return s;
}

LayerSpec LayerSpec::relu(bool distort) {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  s.distort = distort;
  return s;
}

LayerSpec LayerSpec::maxpool(std::size_t window, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.window = window;
  s.pool_stride = stride;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

LayerSpec LayerSpec::softmax_head() {
  LayerSpec s;
  s.kind = LayerKind::kSoftmaxHead;
  return s;
}

// ---------------------------------------------------------------------------

Network::Network(Shape sample_shape, std::vector<LayerSpec> layers,
                 bool use_bias, Precision precision)
    : sample_shape_(std::move(sample_shape)),
      layers_(std::move(layers)),
      use_bias_(use_bias),
      precision_(precision) {
  if (layers_.empty() || layers_.back().kind != LayerKind::kSoftmaxHead) {
    throw ConfigError("network must end with a softmax-crossentropy-head");
  }
  Shape cur = sample_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const std::string where = layer_label(i, l);
    if (l.distort && l.kind != LayerKind::kRelu) {
      throw ConfigError(where + ": distortion may only follow a relu");
    }
    switch (l.kind) {
      case LayerKind::kDense:
        if (cur.size() != 1 || cur[0] != l.in) {
          throw DimensionError(where + ": expects " + std::to_string(l.in) +
                               " features, receives " + to_string(cur));
        }
        params_[weight_name(i)] = Tensor({l.out, l.in}, precision_);
        if (use_bias_) params_[bias_name(i)] = Tensor({l.out}, precision_);
        cur = {l.out};
        break;
      case LayerKind::kConv: {
        if (cur.size() != 3 || cur[0] != l.in) {
          throw DimensionError(where + ": expects " + std::to_string(l.in) +
                               " channels, receives " + to_string(cur));
        }
        const std::size_t oh = conv_output_extent(cur[1], l.kernel, l.geometry);
        const std::size_t ow = conv_output_extent(cur[2], l.kernel, l.geometry);
        params_[weight_name(i)] =
            Tensor({l.out, l.in, l.kernel, l.kernel}, precision_);
        if (use_bias_) params_[bias_name(i)] = Tensor({l.out}, precision_);
        cur = {l.out, oh, ow};
        break;
      }
      case LayerKind::kRelu:
        break;
      case LayerKind::kMaxPool:
        if (cur.size() != 3 || l.window == 0 || l.pool_stride == 0 ||
            l.window > cur[1] || l.window > cur[2]) {
          throw DimensionError(where + ": window " + std::to_string(l.window) +
                               " does not fit " + to_string(cur));
        }
        cur = {cur[0], (cur[1] - l.window) / l.pool_stride + 1,
               (cur[2] - l.window) / l.pool_stride + 1};
        break;
      case LayerKind::kFlatten:
        cur = {shape_size(cur)};
        break;
      case LayerKind::kSoftmaxHead:
        if (i + 1 != layers_.size()) {
          throw ConfigError(where + ": head must be the last layer");
        }
        if (cur.size() != 1 || cur[0] < 2) {
          throw DimensionError(where + ": expects a logit vector, receives " +
                               to_string(cur));
        }
        classes_ = cur[0];
        break;
    }
    output_shapes_.push_back(cur);
  }

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].distort) continue;
    std::size_t j = i + 1;
    while (j < layers_.size() && layers_[j].kind == LayerKind::kFlatten) ++j;
    if (j >= layers_.size() || (layers_[j].kind != LayerKind::kDense &&
                                layers_[j].kind != LayerKind::kConv)) {
      throw ConfigError(layer_label(i, layers_[i]) +
                        ": a distorted map must feed a dense or conv layer");
    }
    attachments_.push_back(
        {i, j, output_shapes_[i], layers_[j].kind == LayerKind::kConv});
  }
}

const Tensor& Network::weight(std::size_t layer) const {
  auto it = params_.find(weight_name(layer));
  if (it == params_.end()) {
    throw ConfigError("layer " + std::to_string(layer) + " has no weight");
  }
  return it->second;
}

Tensor& Network::weight(std::size_t layer) {
  return const_cast<Tensor&>(std::as_const(*this).weight(layer));
}

std::string Network::weight_name(std::size_t layer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "layer%02zu.weight", layer);
  return buf;
}

std::string Network::bias_name(std::size_t layer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "layer%02zu.bias", layer);
  return buf;
}

void Network::init_weights(Rng& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    if (l.kind != LayerKind::kDense && l.kind != LayerKind::kConv) continue;
    Tensor& w = params_.at(weight_name(i));
    const double fan_in = static_cast<double>(w.size() / w.dim(0));
    const double std = std::sqrt(2.0 / fan_in);
    for (double& v : w.mutable_values()) v = std * rng.normal();
    w.round_to_precision();
    if (use_bias_) {
      for (double& v : params_.at(bias_name(i)).mutable_values()) v = 0.0;
    }
  }
}

NextLayer Network::next_layer(const Attachment& a) const {
  const LayerSpec& next = layers_.at(a.next_layer);
  return {&weight(a.next_layer), next.kind == LayerKind::kConv, next.geometry};
}

// ---------------------------------------------------------------------------

ForwardResult forward(const Network& net, const Tensor& batch, Mode mode,
                      const AttachmentHook& hook) {
  if (batch.rank() < 1 ||
      batch.shape() != batch_shape(batch.dim(0), net.sample_shape())) {
    throw DimensionError("forward: batch " + to_string(batch.shape()) +
                         " does not match network input " +
                         to_string(net.sample_shape()));
  }
  if (mode == Mode::kTrain && !net.attachments().empty() && !hook) {
    throw ConfigError("forward: train mode needs distortion state for " +
                      std::to_string(net.attachments().size()) +
                      " attachment(s)");
  }
  const auto& layers = net.layers();
  ForwardResult r;
  BatchCache& c = r.cache;
  c.mode = mode;
  c.inputs.reserve(layers.size());
  c.pool_argmax.resize(layers.size());
  c.gates.resize(layers.size());

  Tensor x = batch;
  std::size_t attachment = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    c.inputs.push_back(x);
    switch (l.kind) {
      case LayerKind::kDense: {
        Tensor y = matmul_nt(x, net.weight(i));
        if (net.use_bias()) add_row_bias(y, net.params().at(Network::bias_name(i)));
        x = std::move(y);
        break;
      }
      case LayerKind::kConv: {
        Tensor y = conv2d(x, net.weight(i), l.geometry);
        if (net.use_bias()) {
          add_channel_bias(y, net.params().at(Network::bias_name(i)));
        }
        x = std::move(y);
        break;
      }
      case LayerKind::kRelu:
        x = relu(x);
        if (l.distort && mode == Mode::kTrain) {
          const Attachment& a = net.attachments().at(attachment);
          DistortedFeature d = hook(attachment, a, x);
          if (d.value.shape() != x.shape() || d.mask.shape() != x.shape()) {
            throw DimensionError("forward: distortion hook returned " +
                                 to_string(d.value.shape()) + " for " +
                                 to_string(x.shape()));
          }
          c.gates[i] = gate_for(d.mask, d.p_effective);
          x = std::move(d.value);
        }
        if (l.distort) ++attachment;
        break;
      case LayerKind::kMaxPool: {
        PoolResult p = maxpool2d(x, l.window, l.pool_stride);
        c.pool_argmax[i] = std::move(p.argmax);
        x = std::move(p.output);
        break;
      }
      case LayerKind::kFlatten:
        x = x.reshaped({x.dim(0), x.size() / x.dim(0)});
        break;
      case LayerKind::kSoftmaxHead:
        break;
    }
  }
  require_finite(x, "forward");
  c.logits = x;
  r.logits = std::move(x);
  return r;
}

ForwardResult forward(const Network& net, const Tensor& batch,
                      std::span<const DistortionState> states, Mode mode) {
  if (mode == Mode::kEval) {
    if (!states.empty()) {
      throw ConfigError("forward: eval mode must not receive distortion state");
    }
    return forward(net, batch, mode);
  }
  if (states.size() < net.attachments().size()) {
    throw ConfigError("forward: " + std::to_string(states.size()) +
                      " distortion state(s) for " +
                      std::to_string(net.attachments().size()) + " attachment(s)");
  }
  AttachmentHook hook = [&](std::size_t idx, const Attachment&,
                            const Tensor& clean) {
    const DistortionState& s = states[idx];
    return DistortedFeature{
        apply_distortion(clean, s.mask, s.epsilon, s.p_effective), s.mask,
        s.p_effective};
  };
  return forward(net, batch, mode, hook);
}

LossResult softmax_crossentropy(const Tensor& logits, std::span<const int> labels) {
  require_finite(logits, "softmax_crossentropy");
  if (logits.rank() != 2) {
    throw DimensionError("softmax_crossentropy: logits must be N×C");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_crossentropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  }
  auto v = logits.values();
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw InputError("label " + std::to_string(labels[i]) +
                       " outside [0, " + std::to_string(c) + ")");
    }
    const double* row = v.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx - log_z);
    }
    total += log_z - (row[labels[i]] - mx);
  }
  return {total / static_cast<double>(n),
          Tensor({n, c}, std::move(probs), logits.precision())};
}

ParamMap backward(const Network& net, const BatchCache& cache,
                  std::span<const int> labels) {
  const auto& layers = net.layers();
  if (cache.inputs.size() != layers.size()) {
    throw DimensionError("backward: cache does not match the network");
  }
  LossResult lr = softmax_crossentropy(cache.logits, labels);
  const std::size_t n = cache.logits.dim(0), classes = cache.logits.dim(1);
  std::vector<double> dlogits(lr.probs.values().begin(), lr.probs.values().end());
  for (std::size_t i = 0; i < n; ++i) {
    dlogits[i * classes + static_cast<std::size_t>(labels[i])] -= 1.0;
  }
  for (double& g : dlogits) g /= static_cast<double>(n);
  Tensor grad({n, classes}, std::move(dlogits), cache.logits.precision());

  ParamMap grads;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const LayerSpec& l = layers[li];
    const Tensor& x = cache.inputs[li];
    switch (l.kind) {
      case LayerKind::kSoftmaxHead:
        break;
      case LayerKind::kFlatten:
        grad = grad.reshaped(x.shape());
        break;
      case LayerKind::kMaxPool:
        grad = maxpool2d_backward(grad, cache.pool_argmax[li], x.shape());
        break;
      case LayerKind::kRelu: {
        if (cache.gates[li]) grad = mul(grad, *cache.gates[li]);
        auto g = grad.mutable_values();
        auto xv = x.values();
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (!(xv[k] > 0.0)) g[k] = 0.0;
        }
        break;
      }
      case LayerKind::kDense: {
        const Tensor& w = net.weight(li);
        grads[Network::weight_name(li)] = matmul_tn(grad, x).to(w.precision());
        if (net.use_bias()) {
          const std::size_t d = grad.dim(1);
          std::vector<double> gb(d, 0.0);
          auto gv = grad.values();
          for (std::size_t i = 0; i < grad.dim(0); ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += gv[i * d + j];
          grads[Network::bias_name(li)] = Tensor({d}, std::move(gb), w.precision());
        }
        if (li > 0) grad = matmul(grad, w);
        break;
      }
      case LayerKind::kConv: {
        const Tensor& w = net.weight(li);
        grads[Network::weight_name(li)] =
            conv2d_kernel_grad(x, grad, l.kernel, l.kernel, l.geometry)
                .to(w.precision());
        if (net.use_bias()) {
          const std::size_t k = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
          std::vector<double> gb(k, 0.0);
          auto gv = grad.values();
          for (std::size_t i = 0; i < grad.dim(0); ++i)
            for (std::size_t ch = 0; ch < k; ++ch)
              for (std::size_t p = 0; p < hw; ++p) gb[ch] += gv[(i * k + ch) * hw + p];
          grads[Network::bias_name(li)] = Tensor({k}, std::move(gb), w.precision());
        }
        if (li > 0) {
          grad = conv2d_transpose(grad, w, l.geometry,
                                  std::make_pair(x.dim(2), x.dim(3)));
        }
        break;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

void sgd_step(ParamMap& params, const ParamMap& grads, const SgdConfig& cfg,
              ParamMap& velocity) {
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (g.shape() != p.shape()) {
      throw DimensionError("sgd_step: gradient " + to_string(g.shape()) +
                           " for parameter " + name + " " + to_string(p.shape()));
    }
    auto [vit, inserted] = velocity.try_emplace(name, Tensor(p.shape(), p.precision()));
    Tensor& v = vit->second;
    auto pv = p.mutable_values();
    auto gv = g.values();
    auto vv = v.mutable_values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = gv[i] + cfg.weight_decay * pv[i];
      vv[i] = cfg.momentum * vv[i] + d;
      pv[i] -= cfg.lr * vv[i];
    }
    v.round_to_precision();
    p.round_to_precision();
  }
}

// ---------------------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"linear", "mlp", "small_cnn", "block_cnn", "wide_cnn"};
}

Network make_preset(const PresetOptions& o) {
  const Shape& s = o.sample_shape;
  const std::size_t flat = shape_size(s);
  std::vector<LayerSpec> L;
  auto require_image = [&] {
    if (s.size() != 3) {
      throw ConfigError("preset '" + o.name + "' needs C×H×W inputs, got " +
                        to_string(s));
    }
  };

  if (o.name == "linear") {
    if (s.size() != 1) L.push_back(LayerSpec::flatten());
    L.push_back(LayerSpec::dense(flat, o.classes));
  } else if (o.name == "mlp") {
    if (s.size() != 1) L.push_back(LayerSpec::flatten());
    L.push_back(LayerSpec::dense(flat, o.hidden));
    L.push_back(LayerSpec::relu(o.distort_dense));
    L.push_back(LayerSpec::dense(o.hidden, o.hidden));
    L.push_back(LayerSpec::relu(o.distort_dense));
    L.push_back(LayerSpec::dense(o.hidden, o.classes));
  } else if (o.name == "small_cnn") {
    require_image();
    const std::size_t h1 = (s[1] - 4) / 2, w1 = (s[2] - 4) / 2;
    if (h1 < 5 || w1 < 5) throw ConfigError("small_cnn input too small");
    const std::size_t h2 = (h1 - 4) / 2, w2 = (w1 - 4) / 2;
    L = {LayerSpec::conv(s[0], 8, 5), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
         LayerSpec::conv(8, 16, 5), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
         LayerSpec::flatten(), LayerSpec::dense(16 * h2 * w2, o.hidden),
         LayerSpec::relu(o.distort_dense), LayerSpec::dense(o.hidden, o.classes)};
  } else if (o.name == "block_cnn") {
    require_image();
    const std::size_t h1 = (s[1] - 4) / 2, w1 = (s[2] - 4) / 2;
    if (h1 < 2 || w1 < 2) throw ConfigError("block_cnn input too small");
    const std::size_t h2 = (h1 - 2) / 2 + 1, w2 = (w1 - 2) / 2 + 1;
    L = {LayerSpec::conv(s[0], 16, 5), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
         LayerSpec::conv(16, 32, 3, 1, 1), LayerSpec::relu(o.distort_conv),
         LayerSpec::conv(32, 32, 3, 1, 1), LayerSpec::relu(),
         LayerSpec::maxpool(2, 2), LayerSpec::flatten(),
         LayerSpec::dense(32 * h2 * w2, o.hidden),
         LayerSpec::relu(o.distort_dense), LayerSpec::dense(o.hidden, o.classes)};
  } else if (o.name == "wide_cnn") {
    require_image();
    std::size_t h = s[1], w = s[2];
    for (int i = 0; i < 3; ++i) {
      if (h < 3 || w < 3) throw ConfigError("wide_cnn input too small");
      h = (h - 3) / 2 + 1;
      w = (w - 3) / 2 + 1;
    }
    L = {LayerSpec::conv(s[0], 96, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(3, 2),
         LayerSpec::conv(96, 128, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(3, 2),
         LayerSpec::conv(128, 256, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(3, 2),
         LayerSpec::flatten(), LayerSpec::dense(256 * h * w, 2048),
         LayerSpec::relu(o.distort_dense), LayerSpec::dense(2048, 2048),
         LayerSpec::relu(o.distort_dense), LayerSpec::dense(2048, o.classes)};
  } else {
    throw ConfigError("unknown architecture preset '" + o.name + "'");
  }
  L.push_back(LayerSpec::softmax_head());
  return Network(s, std::move(L), o.use_bias, o.precision);
}

}  // namespace disout
