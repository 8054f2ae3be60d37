#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "disout/compare.hpp"
#include "disout/config.hpp"
#include "disout/distortion.hpp"
#include "disout/errors.hpp"
#include "disout/gradcheck.hpp"
#include "disout/mask_stats.hpp"
#include "disout/metrics.hpp"

namespace py = pybind11;
using namespace disout;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()),
                Precision::F64);
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::object optional_value(const std::optional<double>& v) {
  return v ? py::cast(*v) : py::none();
}

RunConfig resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = load_config(config_path);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

py::dict metrics_columns(const MetricsTable& t) {
  py::dict out;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    py::list col;
    for (const auto& row : t.rows) {
      col.append(row[c].empty() ? py::none() : py::cast(std::stod(row[c])));
    }
    out[py::str(t.header[c])] = col;
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Feature-map distortion: surrogate, gradients, masks and training runs";

  auto base = py::register_exception<Error>(m, "DisoutError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());

  m.def(
      "surrogate_fc",
      [](const Array& w, const Array& f_hat, const std::vector<int>& sigma, const Array& eps,
         double lam) {
        const ErcTerms t = erc_surrogate_fc(to_tensor(w), to_tensor(f_hat), sigma,
                                            to_tensor(eps), lam);
        return py::make_tuple(t.sup_term, t.penalty_term);
      },
      py::arg("weight"), py::arg("f_hat"), py::arg("sigma"), py::arg("epsilon"),
      py::arg("lam"), "(sup term, penalty term) for a dense next layer.");

  m.def(
      "exact_grad_fc",
      [](const Array& w, const Array& f_hat, const std::vector<int>& sigma, const Array& mask,
         const Array& eps, double lam) {
        return to_array(exact_grad_fc(to_tensor(w), to_tensor(f_hat), sigma, to_tensor(mask),
                                      to_tensor(eps), lam));
      },
      py::arg("weight"), py::arg("f_hat"), py::arg("sigma"), py::arg("mask"),
      py::arg("epsilon"), py::arg("lam"));

  m.def(
      "surrogate_conv",
      [](const Array& k, const Array& f_hat, const std::vector<int>& sigma, const Array& eps,
         double lam, std::size_t stride, std::size_t padding) {
        const ErcTerms t = erc_surrogate_conv(to_tensor(k), to_tensor(f_hat), sigma,
                                              to_tensor(eps), lam, {stride, padding});
        return py::make_tuple(t.sup_term, t.penalty_term);
      },
      py::arg("kernel"), py::arg("f_hat"), py::arg("sigma"), py::arg("epsilon"),
      py::arg("lam"), py::arg("stride") = 1, py::arg("padding") = 0);

  m.def(
      "exact_grad_conv",
      [](const Array& k, const Array& f_hat, const std::vector<int>& sigma, const Array& mask,
         const Array& eps, double lam, std::size_t stride, std::size_t padding) {
        return to_array(exact_grad_conv(to_tensor(k), to_tensor(f_hat), sigma, to_tensor(mask),
                                        to_tensor(eps), lam, {stride, padding}));
      },
      py::arg("kernel"), py::arg("f_hat"), py::arg("sigma"), py::arg("mask"),
      py::arg("epsilon"), py::arg("lam"), py::arg("stride") = 1, py::arg("padding") = 0);

  m.def(
      "element_mask",
      [](const std::vector<std::size_t>& shape, double p, std::uint64_t seed) {
        Rng rng(seed, RngStream::kMask);
        return to_array(sample_element_mask(Shape(shape.begin(), shape.end()), p, rng,
                                            Precision::F64));
      },
      py::arg("shape"), py::arg("p"), py::arg("seed") = 1);

  m.def(
      "block_mask",
      [](const std::vector<std::size_t>& shape, double p, std::size_t block_size,
         std::uint64_t seed) {
        Rng rng(seed, RngStream::kMask);
        return to_array(sample_block_mask(Shape(shape.begin(), shape.end()), p, block_size, rng,
                                          Precision::F64));
      },
      py::arg("shape"), py::arg("p"), py::arg("block_size"), py::arg("seed") = 1);

  m.def(
      "ramp_p",
      [](std::size_t iter, std::size_t total, double p_target, double ramp_fraction) {
        DistortionConfig cfg;
        cfg.p_target = p_target;
        cfg.ramp_fraction = ramp_fraction;
        return ramp_p(iter, total, cfg);
      },
      py::arg("iter"), py::arg("total_iters"), py::arg("p_target"),
      py::arg("ramp_fraction") = 1.0);

  m.def(
      "gradcheck",
      [](std::size_t instances, std::uint64_t seed, double tolerance, bool sign_flip) {
        GradcheckConfig cfg;
        cfg.instances = instances;
        cfg.seed = seed;
        cfg.tolerance = tolerance;
        cfg.inject_sign_flip = sign_flip;
        py::list out;
        for (const SuiteResult& s : run_gradcheck(cfg)) {
          py::dict d;
          d["name"] = s.name;
          d["instances"] = s.instances;
          d["rejected"] = s.rejected;
          d["max_rel_error"] = s.max_rel_error;
          d["worst_seed"] = s.worst_seed;
          d["passed"] = s.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("instances") = 100, py::arg("seed") = 1, py::arg("tolerance") = 1e-5,
      py::arg("inject_sign_flip") = false);

  m.def(
      "mask_stats",
      [](double p, std::size_t block_size, std::size_t samples, std::size_t map_size,
         std::uint64_t seed) {
        MaskStatsConfig cfg{p, block_size, samples, map_size, seed};
        const MaskStats s = compute_mask_stats(cfg);
        py::dict d;
        d["element_fraction"] = s.element_fraction;
        d["element_sigma"] = s.element_sigma;
        d["element_samples"] = s.element_samples;
        d["block_fraction"] = s.block_fraction;
        d["block_samples"] = s.block_samples;
        d["block_shapes"] = s.block_shapes;
        return d;
      },
      py::arg("p") = 0.5, py::arg("block_size") = 1, py::arg("samples") = 1000000,
      py::arg("map_size") = 32, py::arg("seed") = 1);

  m.def(
      "config_snapshot",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return config_snapshot(resolve(path, overrides));
      },
      py::arg("config"), py::arg("overrides") = std::vector<std::string>{},
      "Resolved configuration text after applying key=value overrides.");

  m.def(
      "train",
      [](const std::string& path, const std::string& out_dir,
         const std::vector<std::string>& overrides, bool resume) {
        const RunConfig cfg = resolve(path, overrides);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = run_to_directory(cfg, out_dir, resume);
        }
        py::dict d;
        d["test_acc"] = optional_value(r.final_test_acc);
        d["train_eval_acc"] = optional_value(r.final_train_eval_acc);
        d["best_val_acc"] = optional_value(r.best_val_acc);
        d["epochs"] = r.state.epoch;
        d["iterations"] = r.state.iter;
        return d;
      },
      py::arg("config"), py::arg("out_dir"),
      py::arg("overrides") = std::vector<std::string>{}, py::arg("resume") = false,
      "Trains into out_dir (snapshot, metrics.csv, timing.csv, checkpoints/).");

  m.def(
      "read_metrics",
      [](const std::string& path) { return metrics_columns(read_metrics_csv(path)); },
      py::arg("path"), "metrics.csv as {column: [value or None]}.");
}
