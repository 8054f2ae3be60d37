#include "disout/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "disout/errors.hpp"

namespace disout {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

std::uint64_t to_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

double to_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

Precision to_precision(const std::string& s) {
  if (s == "32" || s == "f32") return Precision::F32;
  if (s == "64" || s == "f64") return Precision::F64;
  throw ConfigError("expected precision 32 or 64, got '" + s + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F f, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += f(xs[i]);
  }
  return out;
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
  return fs::absolute(p).lexically_normal().string();
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class M>
Key uint_key(std::string name, M member) {
  return {name,
          [member](RunConfig& c, const std::string& v, const std::string&) {
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(
                to_uint(v));
          },
          [member](const RunConfig& c) {
            return std::to_string(member(const_cast<RunConfig&>(c)));
          }};
}

template <class M>
Key double_key(std::string name, M member) {
  return {name,
          [member](RunConfig& c, const std::string& v, const std::string&) {
            member(c) = to_double(v);
          },
          [member](const RunConfig& c) {
            return fmt(member(const_cast<RunConfig&>(c)));
          }};
}

template <class M>
Key bool_key(std::string name, M member) {
  return {name,
          [member](RunConfig& c, const std::string& v, const std::string&) {
            member(c) = to_bool(v);
          },
          [member](const RunConfig& c) {
            return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
          }};
}

template <class M>
Key string_key(std::string name, M member) {
  return {name,
          [member](RunConfig& c, const std::string& v, const std::string&) {
            member(c) = v;
          },
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }};
}

template <class M>
Key path_key(std::string name, M member) {
  return {name,
          [member](RunConfig& c, const std::string& v, const std::string& base) {
            member(c) = resolve(v, base);
          },
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }};
}

template <class M>
Key double_list_key(std::string name, M member) {
  return {name,
          [member](RunConfig& c, const std::string& v, const std::string&) {
            std::vector<double> out;
            for (const auto& s : split(v, ',')) out.push_back(to_double(s));
            member(c) = out;
          },
          [member](const RunConfig& c) {
            return join(member(const_cast<RunConfig&>(c)), fmt);
          }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
#define M(expr) [](RunConfig& c) -> auto& { return expr; }
    k.push_back(string_key("data.format", M(c.train.data.format)));
    k.push_back(path_key("data.train_images", M(c.train.data.train_images)));
    k.push_back(path_key("data.train_labels", M(c.train.data.train_labels)));
    k.push_back(path_key("data.test_images", M(c.train.data.test_images)));
    k.push_back(path_key("data.test_labels", M(c.train.data.test_labels)));
    for (const char* name : {"data.cifar_train", "data.cifar_test"}) {
      const bool is_train = std::string(name) == "data.cifar_train";
      k.push_back({name,
                   [is_train](RunConfig& c, const std::string& v, const std::string& base) {
                     std::vector<std::string> out;
                     for (const auto& s : split(v, ',')) out.push_back(resolve(s, base));
                     (is_train ? c.train.data.cifar_train : c.train.data.cifar_test) = out;
                   },
                   [is_train](const RunConfig& c) {
                     return join(is_train ? c.train.data.cifar_train : c.train.data.cifar_test,
                                 [](const std::string& s) { return s; });
                   }});
    }
    k.push_back(uint_key("data.train_subset", M(c.train.data.train_subset)));
    k.push_back(uint_key("data.test_subset", M(c.train.data.test_subset)));
    k.push_back(double_key("data.val_fraction", M(c.train.data.val_fraction)));
    k.push_back(uint_key("data.synthetic_n", M(c.train.data.synthetic_n)));
    k.push_back(uint_key("data.synthetic_test_n", M(c.train.data.synthetic_test_n)));
    k.push_back(uint_key("data.synthetic_classes", M(c.train.data.synthetic_classes)));
    k.push_back({"data.synthetic_shape",
                 [](RunConfig& c, const std::string& v, const std::string&) {
                   Shape s;
                   for (const auto& d : split(v, 'x')) s.push_back(to_uint(d));
                   if (s.empty()) throw ConfigError("expected a shape such as 16 or 1x8x8");
                   c.train.data.synthetic_shape = s;
                 },
                 [](const RunConfig& c) {
                   return join(c.train.data.synthetic_shape,
                               [](std::size_t d) { return std::to_string(d); }, "x");
                 }});
    k.push_back(double_key("data.synthetic_separation", M(c.train.data.synthetic_separation)));
    k.push_back(uint_key("data.synthetic_seed", M(c.train.data.synthetic_seed)));
    k.push_back(double_list_key("data.normalize_mean", M(c.train.data.normalize_mean)));
    k.push_back(double_list_key("data.normalize_std", M(c.train.data.normalize_std)));
    k.push_back(bool_key("augment.flip", M(c.train.data.augment.flip)));
    k.push_back(uint_key("augment.crop_pad", M(c.train.data.augment.crop_pad)));
    k.push_back(double_key("augment.rotate_deg", M(c.train.data.augment.rotate_deg)));

    k.push_back({"model.preset",
                 [](RunConfig& c, const std::string& v, const std::string&) {
                   const auto names = preset_names();
                   if (std::find(names.begin(), names.end(), v) == names.end()) {
                     throw ConfigError("unknown preset '" + v + "'");
                   }
                   c.train.model.preset = v;
                 },
                 [](const RunConfig& c) { return c.train.model.preset; }});
    k.push_back(uint_key("model.hidden", M(c.train.model.hidden)));
    k.push_back(bool_key("model.bias", M(c.train.model.bias)));

    k.push_back(uint_key("train.epochs", M(c.train.epochs)));
    k.push_back(uint_key("train.batch_size", M(c.train.batch_size)));
    k.push_back(uint_key("train.seed", M(c.train.seed)));
    k.push_back({"train.precision",
                 [](RunConfig& c, const std::string& v, const std::string&) {
                   c.train.precision = to_precision(v);
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.precision == Precision::F32 ? "32" : "64");
                 }});
    k.push_back(uint_key("train.log_every", M(c.train.log_every)));
    k.push_back(uint_key("train.eval_every", M(c.train.eval_every)));
    k.push_back(uint_key("train.checkpoint_every", M(c.train.checkpoint_every)));

    k.push_back(double_key("optim.lr", M(c.train.lr)));
    k.push_back(double_key("optim.momentum", M(c.train.momentum)));
    k.push_back(double_key("optim.weight_decay", M(c.train.weight_decay)));
    k.push_back({"optim.decay_epochs",
                 [](RunConfig& c, const std::string& v, const std::string&) {
                   std::vector<std::size_t> out;
                   for (const auto& s : split(v, ',')) out.push_back(to_uint(s));
                   c.train.decay_epochs = out;
                 },
                 [](const RunConfig& c) {
                   return join(c.train.decay_epochs,
                               [](std::size_t e) { return std::to_string(e); });
                 }});
    k.push_back(double_key("optim.decay_factor", M(c.train.decay_factor)));

    k.push_back({"regularizer",
                 [](RunConfig& c, const std::string& v, const std::string&) {
                   c.train.regularizer = parse_regularizer(v);
                 },
                 [](const RunConfig& c) { return to_string(c.train.regularizer); }});
    k.push_back(double_key("disout.p_target", M(c.train.disout.p_target)));
    k.push_back(double_key("disout.gamma", M(c.train.disout.gamma)));
    k.push_back(double_key("disout.lambda", M(c.train.disout.lambda)));
    k.push_back(uint_key("disout.block_size", M(c.train.disout.block_size)));
    k.push_back(uint_key("disout.steps_per_batch", M(c.train.disout.steps_per_batch)));
    k.push_back(double_key("disout.ramp_fraction", M(c.train.disout.ramp_fraction)));
    k.push_back({"disout.grad_mode",
                 [](RunConfig& c, const std::string& v, const std::string&) {
                   c.train.grad_mode = parse_grad_mode(v);
                 },
                 [](const RunConfig& c) { return to_string(c.train.grad_mode); }});

    k.push_back({"compare.regularizers",
                 [](RunConfig& c, const std::string& v, const std::string&) {
                   std::vector<Regularizer> out;
                   for (const auto& s : split(v, ',')) out.push_back(parse_regularizer(s));
                   c.compare_regularizers = out;
                 },
                 [](const RunConfig& c) {
                   return join(c.compare_regularizers,
                               [](Regularizer r) { return to_string(r); });
                 }});
    k.push_back({"compare.seeds",
                 [](RunConfig& c, const std::string& v, const std::string&) {
                   std::vector<std::uint64_t> out;
                   for (const auto& s : split(v, ',')) out.push_back(to_uint(s));
                   c.compare_seeds = out;
                 },
                 [](const RunConfig& c) {
                   return join(c.compare_seeds,
                               [](std::uint64_t s) { return std::to_string(s); });
                 }});
#undef M
    return k;
  }();
  return table;
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key,
                      const std::string& value, const std::string& where,
                      const std::string& base_dir) {
  for (const Key& k : keys()) {
    if (k.name != key) continue;
    try {
      k.set(cfg, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": key '" + key + "': " + e.what());
    }
    return;
  }
  throw ConfigError(where + ": unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& text, const std::string& source,
                       const std::string& base_dir) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected 'key = value', got '" + t + "'");
    }
    set_config_value(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), where,
                     base_dir);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const fs::path dir = fs::absolute(fs::path(path)).parent_path();
  return parse_config(ss.str(), path, dir.string());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set '" + assignment + "': expected key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  set_config_value(cfg, key, trim(assignment.substr(eq + 1)), "--set " + key,
                   fs::current_path().string());
}

std::string config_snapshot(const RunConfig& cfg) {
  std::string out = "# resolved configuration\n";
  for (const Key& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

}  // namespace disout
