#include "disout/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "disout/errors.hpp"

namespace disout {

namespace {

double accuracy_of(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax(logits, 1);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hit += pred[i] == static_cast<std::size_t>(labels[i]);
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

Dataset take_first(const Dataset& ds, std::size_t k) {
  if (k == 0 || k >= ds.size()) return ds;
  return ds.slice(0, k);
}

}  // namespace

std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::kNone: return "none";
    case Regularizer::kDropout: return "dropout";
    case Regularizer::kDropBlock: return "dropblock";
    case Regularizer::kDisoutElement: return "disout-element";
    case Regularizer::kDisoutBlock: return "disout-block";
  }
  return "?";
}

Regularizer parse_regularizer(const std::string& s) {
  if (s == "none") return Regularizer::kNone;
  if (s == "dropout") return Regularizer::kDropout;
  if (s == "dropblock") return Regularizer::kDropBlock;
  if (s == "disout-element" || s == "disout") return Regularizer::kDisoutElement;
  if (s == "disout-block") return Regularizer::kDisoutBlock;
  throw ConfigError("unknown regularizer '" + s +
                    "' (expected none|dropout|dropblock|disout-element|disout-block)");
}

bool uses_distortion(Regularizer r) {
  return r == Regularizer::kDisoutElement || r == Regularizer::kDisoutBlock;
}

MaskKind mask_kind_for(Regularizer r) {
  return (r == Regularizer::kDropBlock || r == Regularizer::kDisoutBlock)
             ? MaskKind::kBlock
             : MaskKind::kElement;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (!(decay_factor > 0.0)) throw ConfigError("optim.decay_factor must be positive");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) {
      throw ConfigError("optim.decay_epochs must be strictly increasing");
    }
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("optim.momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
  if (log_every == 0) throw ConfigError("train.log_every must be positive");
  if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
  if (!(data.val_fraction >= 0.0 && data.val_fraction < 1.0)) {
    throw ConfigError("data.val_fraction must lie in [0, 1)");
  }
  DistortionConfig d = disout;
  d.mask_kind = mask_kind_for(regularizer);
  d.validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double out = lr;
  for (auto e : decay_epochs) {
    if (epoch >= e) out /= decay_factor;
  }
  return out;
}

TrainData load_train_data(const DataConfig& cfg) {
  TrainData out;
  Dataset test;
  bool has_test = false;
  if (cfg.format == "idx") {
    if (cfg.train_images.empty() || cfg.train_labels.empty()) {
      throw ConfigError("data.train_images and data.train_labels are required");
    }
    out.train = load_idx(cfg.train_images, cfg.train_labels, Split::kTrain);
    if (!cfg.test_images.empty()) {
      test = load_idx(cfg.test_images, cfg.test_labels, Split::kTest);
      has_test = true;
    }
  } else if (cfg.format == "cifar10") {
    if (cfg.cifar_train.empty()) throw ConfigError("data.cifar_train is required");
    out.train = load_cifar10_bin(cfg.cifar_train, Split::kTrain);
    if (!cfg.cifar_test.empty()) {
      test = load_cifar10_bin(cfg.cifar_test, Split::kTest);
      has_test = true;
    }
  } else if (cfg.format == "synthetic") {
    BlobSpec spec;
    spec.n = cfg.synthetic_n + cfg.synthetic_test_n;
    spec.classes = cfg.synthetic_classes;
    spec.sample_shape = cfg.synthetic_shape;
    spec.separation = cfg.synthetic_separation;
    spec.seed = cfg.synthetic_seed;
    Dataset all = synthetic_blobs(spec);
    out.train = all.slice(0, cfg.synthetic_n);
    if (cfg.synthetic_test_n > 0) {
      test = all.slice(cfg.synthetic_n, spec.n);
      test.split = Split::kTest;
      has_test = true;
    }
  } else {
    throw ConfigError("unknown data.format '" + cfg.format +
                      "' (expected idx|cifar10|synthetic)");
  }

  out.train = take_first(out.train, cfg.train_subset);
  if (cfg.val_fraction > 0.0) {
    const auto n = out.train.size();
    const auto n_val = static_cast<std::size_t>(
        std::floor(cfg.val_fraction * static_cast<double>(n)));
    if (n_val == 0 || n_val >= n) {
      throw ConfigError("data.val_fraction leaves an empty split");
    }
    Dataset val = out.train.slice(n - n_val, n);
    val.split = Split::kVal;
    out.val = std::move(val);
    out.train = out.train.slice(0, n - n_val);
  }
  if (has_test) out.test = take_first(test, cfg.test_subset);

  std::size_t classes = out.train.class_count;
  if (out.val) classes = std::max(classes, out.val->class_count);
  if (out.test) classes = std::max(classes, out.test->class_count);
  for (Dataset* ds : {&out.train, out.val ? &*out.val : nullptr,
                      out.test ? &*out.test : nullptr}) {
    if (!ds) continue;
    ds->class_count = classes;
    if (!cfg.normalize_mean.empty() || !cfg.normalize_std.empty()) {
      normalize(*ds, cfg.normalize_mean, cfg.normalize_std);
    }
    ds->validate();
  }
  if (out.test && out.test->sample_shape() != out.train.sample_shape()) {
    throw InputError("test samples " + to_string(out.test->sample_shape()) +
                     " differ from training samples " +
                     to_string(out.train.sample_shape()));
  }
  return out;
}

Network build_network(const TrainConfig& cfg, const Shape& sample_shape,
                      std::size_t classes) {
  PresetOptions o;
  o.name = cfg.model.preset;
  o.sample_shape = sample_shape;
  o.classes = classes;
  o.hidden = cfg.model.hidden;
  o.use_bias = cfg.model.bias;
  o.precision = cfg.precision;
  if (cfg.regularizer != Regularizer::kNone) {
    const bool block = mask_kind_for(cfg.regularizer) == MaskKind::kBlock;
    o.distort_dense = !block;
    o.distort_conv = block;
  }
  Network net = make_preset(o);
  if (cfg.regularizer != Regularizer::kNone) {
    if (net.attachments().empty()) {
      throw ConfigError("regularizer " + to_string(cfg.regularizer) +
                        " has no attachment point in preset '" + o.name + "'");
    }
    DistortionConfig d = cfg.disout;
    d.mask_kind = mask_kind_for(cfg.regularizer);
    for (const auto& a : net.attachments()) {
      Shape batch{1};
      batch.insert(batch.end(), a.sample_shape.begin(), a.sample_shape.end());
      d.validate_for(batch);
    }
  }
  return net;
}

EvalResult evaluate(const Network& net, const Dataset& ds,
                    std::size_t batch_size) {
  if (ds.size() == 0) throw InputError("evaluate: empty dataset");
  std::size_t hit = 0;
  double loss = 0.0;
  for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
    const std::size_t end = std::min(ds.size(), begin + batch_size);
    const Dataset part = ds.slice(begin, end);
    const ForwardResult r = forward(net, part.images, Mode::kEval);
    const LossResult lr = softmax_crossentropy(r.logits, part.labels);
    loss += lr.loss * static_cast<double>(end - begin);
    const auto pred = argmax(r.logits, 1);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      hit += pred[i] == static_cast<std::size_t>(part.labels[i]);
    }
  }
  const auto n = static_cast<double>(ds.size());
  return {static_cast<double>(hit) / n, loss / n};
}

RunRngs::RunRngs(std::uint64_t seed)
    : init(seed, RngStream::kInit),
      mask(seed, RngStream::kMask),
      sigma(seed, RngStream::kSigma),
      aux(seed, RngStream::kAux),
      augment(seed, RngStream::kAugment) {}

TrainState make_initial_state(const TrainConfig& cfg, const TrainData& data) {
  cfg.validate();
  TrainState st{build_network(cfg, data.train.sample_shape(), data.train.class_count),
                SgdOptimizer({cfg.lr, cfg.momentum, cfg.weight_decay}),
                RunRngs(cfg.seed), 0, 0};
  st.net.init_weights(st.rngs.init);
  return st;
}

TrainResult train(const TrainConfig& cfg, const TrainData& data,
                  const TrainOptions& opts) {
  return train(cfg, data, make_initial_state(cfg, data), opts);
}

TrainResult train(const TrainConfig& cfg, const TrainData& data,
                  TrainState state, const TrainOptions& opts) {
  cfg.validate();
  DistortionConfig dcfg = cfg.disout;
  dcfg.mask_kind = mask_kind_for(cfg.regularizer);

  BatchIterator batches(data.train, cfg.batch_size, cfg.seed);
  const std::size_t per_epoch = batches.batches_per_epoch();
  const std::size_t total_iters = cfg.epochs * per_epoch;
  const std::size_t last_epoch =
      std::min(cfg.epochs, opts.stop_after ? opts.stop_after : cfg.epochs);
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult result{std::move(state), {}, {}, {}, {}};
  TrainState& st = result.state;
  Network& net = st.net;

  for (; st.epoch < last_epoch; ++st.epoch) {
    const std::size_t epoch = st.epoch;
    st.optimizer.set_lr(cfg.lr_at(epoch));
    batches.start_epoch(epoch);
    const bool final_epoch = epoch + 1 == cfg.epochs;
    const bool eval_epoch = final_epoch || (epoch + 1) % cfg.eval_every == 0;

    Batch batch;
    std::size_t in_epoch = 0;
    while (batches.next(batch)) {
      const std::size_t iter = st.iter;
      const double p = cfg.regularizer == Regularizer::kNone
                           ? 0.0
                           : ramp_p(iter, total_iters, dcfg);
      Tensor images = augment(batch.images, cfg.data.augment, st.rngs.augment);
      if (images.precision() != cfg.precision) images = images.to(cfg.precision);

      MetricsRecord rec;
      rec.epoch = epoch;
      rec.iter = iter;
      rec.p_effective = p;

      AttachmentHook hook = [&](std::size_t, const Attachment& a,
                                const Tensor& clean) -> DistortedFeature {
        if (uses_distortion(cfg.regularizer)) {
          DistortionOutcome out = optimize_distortion(
              clean, net.next_layer(a), dcfg, cfg.grad_mode, p,
              {&st.rngs.mask, &st.rngs.sigma, &st.rngs.aux}, a.layer);
          rec.erc.push_back(out.report);
          return {apply_distortion(clean, out.state.mask, out.state.epsilon, p),
                  std::move(out.state.mask), p};
        }
        Tensor mask = dcfg.mask_kind == MaskKind::kElement
                          ? sample_element_mask(clean.shape(), p, st.rngs.mask,
                                                clean.precision())
                          : sample_block_mask(clean.shape(), p, dcfg.block_size,
                                              st.rngs.mask, clean.precision());
        return {apply_dropout(clean, mask, p), mask, p};
      };

      const ForwardResult fr = forward(net, images, Mode::kTrain, hook);
      const LossResult lr = softmax_crossentropy(fr.logits, batch.labels);
      if (!std::isfinite(lr.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", iteration " + std::to_string(iter));
      }
      ParamMap grads = backward(net, fr.cache, batch.labels);
      st.optimizer.step(net.params(), grads);
      ++st.iter;
      ++in_epoch;

      rec.train_loss = lr.loss;
      rec.train_acc = accuracy_of(fr.logits, batch.labels);
      const bool last_batch = in_epoch == per_epoch;
      if (last_batch && eval_epoch) {
        if (data.val) {
          rec.val_acc = evaluate(net, *data.val).accuracy;
          result.best_val_acc = std::max(result.best_val_acc.value_or(0.0), *rec.val_acc);
        }
        if (data.test) {
          rec.test_acc = evaluate(net, *data.test).accuracy;
          result.final_test_acc = rec.test_acc;
        }
        if (final_epoch) {
          rec.train_eval_acc = evaluate(net, data.train).accuracy;
          result.final_train_eval_acc = rec.train_eval_acc;
        }
      }
      rec.wall_time = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
      if (last_batch || iter % cfg.log_every == 0) {
        if (opts.on_record) opts.on_record(rec);
        result.metrics.push_back(std::move(rec));
      }
    }
    if (opts.on_epoch_end) {
      TrainState snapshot = st;
      ++snapshot.epoch;
      opts.on_epoch_end(snapshot, final_epoch);
    }
  }
  return result;
}

}  // namespace disout
