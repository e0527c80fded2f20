#include "tricov/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tricov/errors.hpp"

namespace tricov {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'I', 'C', 'O', 'V', 'C', 'K'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename V>
  void put(V value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(V));
  }
  template <typename V>
  void put_array(const std::vector<V>& values) {
    put<std::uint64_t>(values.size());
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(V)));
  }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}
  template <typename V>
  V get() {
    V value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(V));
    check();
    return value;
  }
  template <typename V>
  std::vector<V> get_array(std::size_t expected) {
    const auto n = get<std::uint64_t>();
    if (n != expected) {
      throw InputError(name_ + ": array of " + std::to_string(n) + " values, expected " +
                       std::to_string(expected));
    }
    std::vector<V> values(n);
    in_.read(reinterpret_cast<char*>(values.data()),
             static_cast<std::streamsize>(n * sizeof(V)));
    check();
    return values;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > 64) throw InputError(name_ + ": corrupt string field");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check();
    return s;
  }

 private:
  void check() {
    if (!in_) throw IoError(name_ + ": truncated checkpoint");
  }
  std::istream& in_;
  std::string name_;
};

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
  static_assert(std::endian::native == std::endian::little);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    Writer w(out);
    out.write(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(sizeof(T));
    w.put_string(to_string(ck.loss.variant));
    w.put<double>(ck.loss.alpha);
    w.put<double>(ck.loss.beta);
    w.put<double>(ck.loss.identity_weight);
    w.put<std::int32_t>(ck.loss.affine_enabled_epoch);

    w.put<std::uint32_t>(static_cast<std::uint32_t>(kNumLayers));
    for (const auto& layer : ck.network.layers()) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.in_channels));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.out_channels));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.kernel_size));
      w.put<std::uint32_t>(layer.has_relu ? 1u : 0u);
      w.put_array(layer.weights.data);
      w.put_array(layer.bias.data);
    }

    const auto& opt = ck.optimizer;
    w.put<double>(opt.momentum);
    w.put<double>(opt.base_learning_rate);
    w.put<double>(opt.learning_rate);
    w.put<double>(opt.decay_rate);
    w.put<std::uint32_t>(opt.epoch);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(opt.velocity.size()));
    for (const auto& v : opt.velocity) w.put_array(v);

    w.put<std::uint32_t>(ck.epoch);
    w.put<std::uint64_t>(ck.step_in_epoch);
    w.put<std::uint64_t>(ck.global_step);
    w.put<std::uint32_t>(ck.total_epochs);
    w.put<std::uint32_t>(ck.batch_size);
    w.put<std::uint64_t>(ck.tuple_count);
    w.put<std::uint64_t>(ck.seed);
    out.flush();
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string name = path.string();
  Reader r(in, name);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw IoError(name + " is not a checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw InputError(name + ": checkpoint version " + std::to_string(version) +
                     " is not supported (expected " + std::to_string(kCheckpointVersion) +
                     ")");
  }
  const auto scalar = r.get<std::uint32_t>();
  if (scalar != sizeof(T)) {
    throw InputError(name + ": stored with " + std::to_string(8 * scalar) +
                     "-bit values, loader expects " + std::to_string(8 * sizeof(T)));
  }
  Checkpoint<T> ck;
  ck.loss.variant = parse_loss_variant(r.get_string());
  ck.loss.alpha = r.get<double>();
  ck.loss.beta = r.get<double>();
  ck.loss.identity_weight = r.get<double>();
  ck.loss.affine_enabled_epoch = r.get<std::int32_t>();

  if (r.get<std::uint32_t>() != kNumLayers) throw InputError(name + ": wrong layer count");
  for (auto& layer : ck.network.layers()) {
    const auto in_c = r.get<std::uint32_t>();
    const auto out_c = r.get<std::uint32_t>();
    const auto k = r.get<std::uint32_t>();
    const auto relu = r.get<std::uint32_t>();
    if (in_c != layer.in_channels || out_c != layer.out_channels || k != layer.kernel_size ||
        (relu != 0) != layer.has_relu) {
      throw InputError(name + ": layer " + layer.name + " does not match the architecture");
    }
    layer.weights.data = r.get_array<T>(layer.weights.size());
    layer.bias.data = r.get_array<T>(layer.bias.size());
  }

  auto& opt = ck.optimizer;
  opt.momentum = r.get<double>();
  opt.base_learning_rate = r.get<double>();
  opt.learning_rate = r.get<double>();
  opt.decay_rate = r.get<double>();
  opt.epoch = r.get<std::uint32_t>();
  const auto buffers = r.get<std::uint32_t>();
  if (buffers != 0 && buffers != 2 * kNumLayers) {
    throw InputError(name + ": corrupt optimizer state");
  }
  for (std::uint32_t i = 0; i < buffers; ++i) {
    const auto& layer = ck.network.layers()[i / 2];
    opt.velocity.push_back(
        r.get_array<T>(i % 2 == 0 ? layer.weights.size() : layer.bias.size()));
  }

  ck.epoch = r.get<std::uint32_t>();
  ck.step_in_epoch = r.get<std::uint64_t>();
  ck.global_step = r.get<std::uint64_t>();
  ck.total_epochs = r.get<std::uint32_t>();
  ck.batch_size = r.get<std::uint32_t>();
  ck.tuple_count = r.get<std::uint64_t>();
  ck.seed = r.get<std::uint64_t>();
  return ck;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return fnv1a_hex(buffer.str());
}

template void save_checkpoint<float>(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace tricov
