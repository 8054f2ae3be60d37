#include "disout/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "disout/errors.hpp"

namespace disout {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'O', 'U', 'T', 'C', 'K', '1'};
constexpr std::uint8_t kTagF32 = 1, kTagF64 = 2, kTagWords = 3;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <class T>
  T get(const char* what) {
    T v{};
    if (!in_.read(reinterpret_cast<char*>(&v), sizeof v)) {
      throw FormatError("checkpoint '" + path_ + "' truncated while reading " + what);
    }
    return v;
  }

  void bytes(char* dst, std::size_t n, const char* what) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) {
      throw FormatError("checkpoint '" + path_ + "' truncated while reading " + what);
    }
  }

 private:
  std::istream& in_;
  std::string path_;
};

CheckpointEntry tensor_entry(std::string name, const Tensor& t) {
  CheckpointEntry e;
  e.name = std::move(name);
  e.tensor = t;
  return e;
}

CheckpointEntry words_entry(std::string name, std::vector<std::uint64_t> w) {
  CheckpointEntry e;
  e.name = std::move(name);
  e.is_words = true;
  e.words = std::move(w);
  return e;
}

}  // namespace

void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, entries.size());
  for (const auto& e : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    if (e.is_words) {
      put<std::uint8_t>(out, kTagWords);
      put<std::uint32_t>(out, 1);
      put<std::uint64_t>(out, e.words.size());
      for (auto w : e.words) put<std::uint64_t>(out, w);
      continue;
    }
    const bool f32 = e.tensor.precision() == Precision::F32;
    put<std::uint8_t>(out, f32 ? kTagF32 : kTagF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) put<std::uint64_t>(out, d);
    for (double v : e.tensor.values()) {
      if (f32) {
        put<float>(out, static_cast<float>(v));
      } else {
        put<double>(out, v);
      }
    }
  }
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  Reader r(in, path);
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto count = r.get<std::uint64_t>("entry count");
  if (count > (1u << 20)) {
    throw FormatError("checkpoint '" + path + "' has an implausible entry count");
  }
  std::vector<CheckpointEntry> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.get<std::uint32_t>("name length");
    if (len > 4096) throw FormatError("checkpoint '" + path + "': corrupt name length");
    e.name.resize(len);
    r.bytes(e.name.data(), len, "name");
    const auto tag = r.get<std::uint8_t>("tag");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("checkpoint '" + path + "': corrupt rank");
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>("dims");
      total *= d;
    }
    if (total > (std::uint64_t{1} << 32)) {
      throw FormatError("checkpoint '" + path + "': corrupt dims for " + e.name);
    }
    if (tag == kTagWords) {
      e.is_words = true;
      e.words.resize(total);
      for (auto& w : e.words) w = r.get<std::uint64_t>("words");
    } else if (tag == kTagF32 || tag == kTagF64) {
      std::vector<double> values(total);
      for (auto& v : values) {
        v = tag == kTagF32 ? static_cast<double>(r.get<float>("values"))
                           : r.get<double>("values");
      }
      e.tensor = Tensor(shape, std::move(values),
                        tag == kTagF32 ? Precision::F32 : Precision::F64);
    } else {
      throw FormatError("checkpoint '" + path + "': unknown tag " +
                        std::to_string(tag) + " for " + e.name);
    }
    entries.push_back(std::move(e));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint '" + path + "' has trailing bytes");
  }
  return entries;
}

void save_train_state(const std::string& path, const TrainState& state) {
  std::vector<CheckpointEntry> entries;
  for (const auto& [name, t] : state.net.params()) {
    entries.push_back(tensor_entry("param/" + name, t));
  }
  for (const auto& [name, t] : state.optimizer.velocity()) {
    entries.push_back(tensor_entry("velocity/" + name, t));
  }
  entries.push_back(words_entry("rng/init", state.rngs.init.state()));
  entries.push_back(words_entry("rng/mask", state.rngs.mask.state()));
  entries.push_back(words_entry("rng/sigma", state.rngs.sigma.state()));
  entries.push_back(words_entry("rng/aux", state.rngs.aux.state()));
  entries.push_back(words_entry("rng/augment", state.rngs.augment.state()));
  entries.push_back(words_entry("counters", {state.epoch, state.iter}));
  write_checkpoint(path, entries);
}

void load_train_state(const std::string& path, TrainState& state) {
  std::map<std::string, CheckpointEntry> byname;
  for (auto& e : read_checkpoint(path)) byname[e.name] = std::move(e);
  auto need = [&](const std::string& name) -> CheckpointEntry& {
    auto it = byname.find(name);
    if (it == byname.end()) {
      throw FormatError("checkpoint '" + path + "' lacks entry " + name);
    }
    return it->second;
  };
  for (auto& [name, t] : state.net.params()) {
    CheckpointEntry& e = need("param/" + name);
    if (e.is_words || e.tensor.shape() != t.shape()) {
      throw FormatError("checkpoint '" + path + "': " + name + " has shape " +
                        to_string(e.tensor.shape()) + ", network expects " +
                        to_string(t.shape()));
    }
    t = e.tensor.to(t.precision());
  }
  auto& velocity = state.optimizer.velocity();
  velocity.clear();
  for (auto& [name, e] : byname) {
    if (name.rfind("velocity/", 0) == 0 && !e.is_words) {
      velocity[name.substr(9)] = e.tensor;
    }
  }
  state.rngs.init.set_state(need("rng/init").words);
  state.rngs.mask.set_state(need("rng/mask").words);
  state.rngs.sigma.set_state(need("rng/sigma").words);
  state.rngs.aux.set_state(need("rng/aux").words);
  state.rngs.augment.set_state(need("rng/augment").words);
  const auto& counters = need("counters").words;
  if (counters.size() != 2) {
    throw FormatError("checkpoint '" + path + "': corrupt counters");
  }
  state.epoch = counters[0];
  state.iter = counters[1];
}

}  // namespace disout
