#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "disout/distortion.hpp"
#include "disout/rng.hpp"
#include "disout/tensor.hpp"

namespace disout {

enum class LayerKind { kDense, kConv, kRelu, kMaxPool, kFlatten, kSoftmaxHead };

std::string to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  /// Dense: in/out features. Conv: in/out channels.
  std::size_t in = 0;
  std::size_t out = 0;
  /// Conv kernel extent (square).
  std::size_t kernel = 0;
  ConvGeometry geometry;
  std::size_t window = 0;
  std::size_t pool_stride = 0;
  /// Relu only: distort this layer's output during training.
  bool distort = false;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv(std::size_t in_channels, std::size_t out_channels,
                        std::size_t kernel, std::size_t stride = 1,
                        std::size_t padding = 0);
  static LayerSpec relu(bool distort = false);
  static LayerSpec maxpool(std::size_t window, std::size_t stride);
  static LayerSpec flatten();
  static LayerSpec softmax_head();
};

/// A distortion point: the output of relu layer `layer`, consumed (possibly
/// through a flatten) by the parameterized layer `next_layer`.
struct Attachment {
  std::size_t layer = 0;
  std::size_t next_layer = 0;
  /// Per-sample shape of the distorted map.
  Shape sample_shape;
  bool next_is_conv = false;
};

using ParamMap = std::map<std::string, Tensor>;

class Network {
 public:
  Network() = default;
  /// Validates that the layers chain from `sample_shape` to a softmax head and
  /// allocates zero parameters. Dense weights are out × in, conv kernels
  /// out × in × k × k.
  Network(Shape sample_shape, std::vector<LayerSpec> layers,
          bool use_bias = true, Precision precision = Precision::F32);

  [[nodiscard]] const std::vector<LayerSpec>& layers() const { return layers_; }
  [[nodiscard]] const Shape& sample_shape() const { return sample_shape_; }
  /// Per-sample output shape of every layer.
  [[nodiscard]] const std::vector<Shape>& output_shapes() const {
    return output_shapes_;
  }
  [[nodiscard]] const std::vector<Attachment>& attachments() const {
    return attachments_;
  }
  [[nodiscard]] std::size_t classes() const { return classes_; }
  [[nodiscard]] bool use_bias() const { return use_bias_; }
  [[nodiscard]] Precision precision() const { return precision_; }

  ParamMap& params() { return params_; }
  [[nodiscard]] const ParamMap& params() const { return params_; }

  [[nodiscard]] const Tensor& weight(std::size_t layer) const;
  Tensor& weight(std::size_t layer);

  static std::string weight_name(std::size_t layer);
  static std::string bias_name(std::size_t layer);

  /// He-normal weights from `rng`, zero biases.
  void init_weights(Rng& rng);

  [[nodiscard]] NextLayer next_layer(const Attachment& a) const;

 private:
  Shape sample_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> output_shapes_;
  std::vector<Attachment> attachments_;
  ParamMap params_;
  std::size_t classes_ = 0;
  bool use_bias_ = true;
  Precision precision_ = Precision::F32;
};

// ---------------------------------------------------------------------------

enum class Mode { kTrain, kEval };

/// What an attachment hook hands back: the map to feed forward and the mask
/// whose complement gates the backward pass.
struct DistortedFeature {
  Tensor value;
  Tensor mask;
  double p_effective = 0.0;
};

/// Invoked in train mode at each attachment with the clean features.
using AttachmentHook = std::function<DistortedFeature(
    std::size_t attachment_index, const Attachment&, const Tensor& clean)>;

struct BatchCache {
  Mode mode = Mode::kEval;
  /// Input of every layer.
  std::vector<Tensor> inputs;
  std::vector<std::vector<std::size_t>> pool_argmax;
  /// (1 − mask)/(1 − p) at attachment layers; unset elsewhere.
  std::vector<std::optional<Tensor>> gates;
  Tensor logits;
};

struct ForwardResult {
  Tensor logits;
  BatchCache cache;
};

/// Runs the network. Eval mode is the clean network; train mode calls `hook`
/// at every attachment (a missing hook is a ConfigError when the network has
/// attachments).
ForwardResult forward(const Network& net, const Tensor& batch, Mode mode,
                      const AttachmentHook& hook = {});

/// Train-mode forward with fixed per-attachment states: each attachment
/// feeds apply_distortion(f, state.mask, state.epsilon, state.p_effective).
ForwardResult forward(const Network& net, const Tensor& batch,
                      std::span<const DistortionState> states, Mode mode);

struct LossResult {
  double loss = 0.0;
  Tensor probs;
};

/// Mean cross-entropy with max-subtraction.
LossResult softmax_crossentropy(const Tensor& logits, std::span<const int> labels);

/// Gradients of the mean cross-entropy with respect to every parameter. The
/// distorted values at masked positions are constants; gradients reach the
/// clean features only through unmasked positions.
ParamMap backward(const Network& net, const BatchCache& cache,
                  std::span<const int> labels);

// ---------------------------------------------------------------------------

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// v ← μ·v + (g + wd·θ);  θ ← θ − lr·v. Velocities start at zero and are
/// created on first use.
void sgd_step(ParamMap& params, const ParamMap& grads, const SgdConfig& cfg,
              ParamMap& velocity);

class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamMap& params, const ParamMap& grads) {
    sgd_step(params, grads, cfg_, velocity_);
  }
  void set_lr(double lr) { cfg_.lr = lr; }
  [[nodiscard]] const SgdConfig& config() const { return cfg_; }
  ParamMap& velocity() { return velocity_; }
  [[nodiscard]] const ParamMap& velocity() const { return velocity_; }

 private:
  SgdConfig cfg_;
  ParamMap velocity_;
};

// ---------------------------------------------------------------------------

struct PresetOptions {
  std::string name = "mlp";
  Shape sample_shape;
  std::size_t classes = 10;
  /// Distort the hidden dense layers.
  bool distort_dense = false;
  /// Distort conv layers whose output feeds another conv directly.
  bool distort_conv = false;
  std::size_t hidden = 256;
  bool use_bias = true;
  Precision precision = Precision::F32;
};

/// Built-in architectures: "linear", "mlp", "small_cnn", "block_cnn" and
/// "wide_cnn" (three 5×5 conv layers of 96/128/256 filters each followed by
/// a 3×3 stride-2 max-pool, then two 2048-unit dense layers).
Network make_preset(const PresetOptions& opts);

std::vector<std::string> preset_names();

}  // namespace disout
