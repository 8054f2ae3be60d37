#include <cmath>

#include "disout/data.hpp"
#include "disout/errors.hpp"
#include "disout/nn.hpp"
#include "disout/train.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace disout;

namespace {

constexpr Precision kF64 = Precision::F64;

Network tiny_cnn(bool distort) {
  return Network({1, 6, 6},
                 {LayerSpec::conv(1, 2, 3), LayerSpec::relu(distort), LayerSpec::conv(2, 2, 3, 1, 1),
                  LayerSpec::relu(), LayerSpec::maxpool(2, 2), LayerSpec::flatten(), LayerSpec::dense(8, 5), LayerSpec::relu(distort),
                  LayerSpec::dense(5, 3), LayerSpec::softmax_head()},
                 true, kF64);
}

}  // namespace

TEST_CASE("layer chains are validated") {
  CHECK_THROWS_AS(Network({4}, {LayerSpec::dense(5, 2), LayerSpec::softmax_head()}),
                  DimensionError);
  CHECK_THROWS_AS(Network({4}, {LayerSpec::dense(4, 2)}), ConfigError);
  CHECK_THROWS_AS(Network({4}, {LayerSpec::dense(4, 3), LayerSpec::relu(true),
                                LayerSpec::softmax_head()}),
                  ConfigError);
  CHECK_THROWS_AS(Network({1, 4, 4}, {LayerSpec::maxpool(5, 1), LayerSpec::flatten(),
                                      LayerSpec::softmax_head()}),
                  DimensionError);
}

TEST_CASE("attachments record the consuming layer") {
  const Network net = tiny_cnn(true);
  REQUIRE(net.attachments().size() == 2);
  CHECK(net.attachments()[0].next_layer == 2);
  CHECK(net.attachments()[0].next_is_conv);
  CHECK(net.attachments()[1].next_layer == 8);
  CHECK_FALSE(net.attachments()[1].next_is_conv);
  CHECK(net.attachments()[1].sample_shape == Shape{5});
  CHECK(net.output_shapes()[4] == Shape{2, 2, 2});
  CHECK(net.classes() == 3);
}

TEST_CASE("presets build for their intended inputs") {
  for (const auto& name : preset_names()) {
    PresetOptions o;
    o.name = name;
    o.sample_shape = name == "wide_cnn" ? Shape{3, 32, 32} : Shape{1, 28, 28};
    o.classes = 10;
    o.hidden = 32;
    o.distort_dense = true;
    o.distort_conv = true;
    const Network net = make_preset(o);
    CHECK(net.classes() == 10);
  }
  PresetOptions bad;
  bad.name = "resnet";
  bad.sample_shape = {1, 28, 28};
  CHECK_THROWS_AS(make_preset(bad), ConfigError);
}

TEST_CASE("cross-entropy values") {
  const Tensor logits = Tensor::matrix({{0, 0}, {std::log(3.0), 0}});
  const LossResult r = softmax_crossentropy(logits, std::vector<int>{0, 0});
  CHECK(r.loss == doctest::Approx((std::log(2.0) + std::log(4.0 / 3.0)) / 2));
  CHECK(r.probs.at(1, 0) == doctest::Approx(0.75));
  const LossResult big = softmax_crossentropy(Tensor::matrix({{1000, 0}}), std::vector<int>{0});
  CHECK(big.loss == doctest::Approx(0.0));
  CHECK_THROWS_AS(softmax_crossentropy(logits, std::vector<int>{0, 2}), InputError);
}

TEST_CASE("backward matches finite differences on a clean network") {
  Network net = tiny_cnn(false);
  Rng rng(11);
  net.init_weights(rng);
  const Tensor x = oracle::random_normal({3, 1, 6, 6}, rng);
  const std::vector<int> y{0, 2, 1};
  const ForwardResult fr = forward(net, x, Mode::kEval);
  const ParamMap g = backward(net, fr.cache, y);
  for (auto& [name, t] : net.params()) {
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double orig = t[j];
      t[j] = orig + 1e-6;
      const double up = softmax_crossentropy(forward(net, x, Mode::kEval).logits, y).loss;
      t[j] = orig - 1e-6;
      const double down = softmax_crossentropy(forward(net, x, Mode::kEval).logits, y).loss;
      t[j] = orig;
      CHECK(g.at(name)[j] == doctest::Approx((up - down) / 2e-6).epsilon(1e-5).scale(1e-3));
    }
  }
}

TEST_CASE("train mode needs distortion state, eval mode refuses it") {
  Network net = tiny_cnn(true);
  Rng rng(12);
  net.init_weights(rng);
  const Tensor x = oracle::random_normal({2, 1, 6, 6}, rng);
  CHECK_THROWS_AS(forward(net, x, Mode::kTrain), ConfigError);
  std::vector<DistortionState> states(2);
  CHECK_THROWS_AS(forward(net, x, states, Mode::kEval), ConfigError);
}

TEST_CASE("eval output does not depend on training masks") {
  Network net = tiny_cnn(true);
  Rng rng(13);
  net.init_weights(rng);
  const Tensor x = oracle::random_normal({2, 1, 6, 6}, rng);
  const Tensor before = forward(net, x, Mode::kEval).logits;
  AttachmentHook hook = [&](std::size_t, const Attachment&, const Tensor& f) {
    Tensor m = sample_element_mask(f.shape(), 0.5, rng, f.precision());
    return DistortedFeature{apply_dropout(f, m, 0.5), m, 0.5};
  };
  const Tensor train_out = forward(net, x, Mode::kTrain, hook).logits;
  CHECK_FALSE(train_out == before);
  CHECK(forward(net, x, Mode::kEval).logits == before);
}

TEST_CASE("masked positions receive no gradient") {
  Network net({4}, {LayerSpec::dense(4, 3), LayerSpec::relu(true), LayerSpec::dense(3, 2),
                    LayerSpec::softmax_head()},
              false, kF64);
  Rng rng(14);
  net.init_weights(rng);
  const Tensor x = Tensor::matrix({{1, 2, 3, 4}});
  const Tensor mask = Tensor::matrix({{1, 1, 1}});
  AttachmentHook hook = [&](std::size_t, const Attachment&, const Tensor& f) {
    return DistortedFeature{apply_distortion(f, mask, Tensor(f.shape(), kF64), 0.5), mask, 0.5};
  };
  const ForwardResult fr = forward(net, x, Mode::kTrain, hook);
  const ParamMap g = backward(net, fr.cache, std::vector<int>{1});
  CHECK(sum(abs(g.at(Network::weight_name(0)))) == 0.0);
  CHECK(sum(abs(g.at(Network::weight_name(2)))) > 0.0);
}

TEST_CASE("sgd with momentum and weight decay") {
  ParamMap params{{"w", Tensor::vector({1.0})}};
  ParamMap grads{{"w", Tensor::vector({0.5})}};
  ParamMap velocity;
  const SgdConfig cfg{0.1, 0.9, 0.01};
  sgd_step(params, grads, cfg, velocity);
  // v = 0.5 + 0.01; w = 1 − 0.1·0.51
  CHECK(velocity.at("w")[0] == doctest::Approx(0.51));
  CHECK(params.at("w")[0] == doctest::Approx(0.949));
  sgd_step(params, grads, cfg, velocity);
  const double v2 = 0.9 * 0.51 + 0.5 + 0.01 * 0.949;
  CHECK(velocity.at("w")[0] == doctest::Approx(v2));
  CHECK(params.at("w")[0] == doctest::Approx(0.949 - 0.1 * v2));
}

TEST_CASE("random weights score near chance") {
  BlobSpec spec;
  spec.n = 4000;
  spec.classes = 4;
  spec.sample_shape = {8};
  spec.separation = 0.0;
  spec.seed = 5;
  const Dataset ds = synthetic_blobs(spec);
  PresetOptions o;
  o.name = "mlp";
  o.sample_shape = {8};
  o.classes = 4;
  o.hidden = 16;
  Network net = make_preset(o);
  Rng rng(3);
  net.init_weights(rng);
  const EvalResult r = evaluate(net, ds);
  // Labels are independent of the inputs, so accuracy is Binomial(n, 1/4)/n.
  CHECK(std::abs(r.accuracy - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / 4000.0));
  CHECK(evaluate(net, ds).accuracy == r.accuracy);
}
