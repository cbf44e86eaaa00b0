#include "battta/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "battta/errors.hpp"

namespace battta::clip {
namespace {

constexpr char kMagic[4] = {'B', 'T', 'C', '1'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    std::make_unsigned_t<T> v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> rest() const { return bytes_.subspan(pos_); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> encode(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, ckpt.version);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) throw CheckpointError("tensor name too long: " + t.name.substr(0, 32));
    if (t.value.ndim() > 0xff) throw CheckpointError("tensor rank too large: " + t.name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(t.is_layernorm ? 1 : 0);
    out.push_back(static_cast<std::uint8_t>(t.value.ndim()));
    for (std::size_t d : t.value.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  const std::string meta = ckpt.meta.dump();
  out.insert(out.end(), meta.begin(), meta.end());
  return out;
}

Checkpoint decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw CheckpointError("bad checkpoint magic");
  Checkpoint ckpt;
  ckpt.version = r.le<std::uint32_t>();
  if (ckpt.version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.le<std::uint16_t>());
    t.is_layernorm = r.le<std::uint8_t>() != 0;
    const auto ndim = r.le<std::uint8_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = r.le<std::uint64_t>();
    std::vector<double> data(numel(shape));
    for (double& v : data) v = std::bit_cast<double>(r.le<std::uint64_t>());
    t.value = Tensor(std::move(shape), std::move(data));
    ckpt.tensors.push_back(std::move(t));
  }
  auto rest = r.rest();
  if (!rest.empty()) {
    try {
      ckpt.meta = nlohmann::json::parse(rest.begin(), rest.end());
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
  }
  return ckpt;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

Checkpoint snapshot(const DualEncoder& model) {
  Checkpoint ckpt;
  for (const auto& p : model.parameters()) ckpt.tensors.push_back({p.name, p.is_layernorm, p.value.detach()});
  ckpt.meta = {{"arch", model.arch().to_json()}, {"tau", model.temperature()}};
  return ckpt;
}

void restore(DualEncoder& model, const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("arch")) throw CheckpointError("checkpoint has no architecture record");
  ArchConfig arch;
  try {
    arch = ArchConfig::from_json(ckpt.meta.at("arch"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed architecture record: ") + e.what());
  }
  if (!(arch == model.arch())) throw CheckpointError("checkpoint architecture does not match the model");
  // Validate everything before touching the model so a failed restore leaves it intact.
  for (const auto& p : model.parameters()) {
    const NamedTensor* t = ckpt.find(p.name);
    if (!t) throw CheckpointError("checkpoint is missing tensor '" + p.name + "'");
    if (t->value.shape() != p.value.shape()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + shape_str(t->value.shape()) + ", model expects " +
                            shape_str(p.value.shape()));
    }
  }
  for (auto& p : model.parameters()) {
    auto src = ckpt.find(p.name)->value.data();
    std::copy(src.begin(), src.end(), p.value.mutable_data().begin());
    p.value.zero_grad();
  }
}

DualEncoder model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("arch")) throw CheckpointError("checkpoint has no architecture record");
  DualEncoder model(ArchConfig::from_json(ckpt.meta.at("arch")), 0);
  restore(model, ckpt);
  return model;
}

std::string fingerprint(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace battta::clip
