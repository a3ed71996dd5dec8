#include "mars/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "mars/errors.hpp"

namespace mars::ckpt {

namespace {

constexpr char kMagic[4] = {'M', 'A', 'R', 'S'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int k = 0; k < 8; ++k) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
  }
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) v = (v << 8) | bytes_[pos_ + k];
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int k = 7; k >= 0; --k) bits = (bits << 8) | bytes_[pos_ + k];
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw IoError("checkpoint: truncated file");
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data),
              static_cast<uInt>(n)));
}

}  // namespace

const num::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize(const Checkpoint& c) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(c.config_text.size()));
  out.insert(out.end(), c.config_text.begin(), c.config_text.end());
  put_u32(out, c.epoch);
  put_f64(out, c.metric);
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    if (!t.defined()) throw IoError("checkpoint: undefined tensor " + name);
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int dim : t.shape()) put_u32(out, static_cast<std::uint32_t>(dim));
    for (double v : t.values()) put_f64(out, v);
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("checkpoint: bad magic bytes");
  }
  // checksum covers everything before the final word
  if (bytes.size() < 4) throw IoError("checkpoint: truncated file");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int k = 3; k >= 0; --k) stored = (stored << 8) | bytes[body + k];
  if (crc_of(bytes.data(), body) != stored) {
    throw IoError("checkpoint: checksum mismatch, file corrupt or truncated");
  }

  Reader r(bytes);
  r.str(4);  // magic, already verified
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw IoError("checkpoint: format version " + std::to_string(version) +
                  ", expected " + std::to_string(kFormatVersion));
  }
  Checkpoint c;
  c.config_text = r.str(r.u32());
  c.epoch = r.u32();
  c.metric = r.f64();
  const std::uint32_t count = r.u32();
  c.tensors.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    num::Shape shape(rank);
    std::size_t numel = 1;
    for (auto& dim : shape) {
      dim = static_cast<int>(r.u32());
      if (dim <= 0) throw IoError("checkpoint: bad dimension in " + name);
      numel *= static_cast<std::size_t>(dim);
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f64();
    c.tensors.emplace_back(
        std::move(name), num::Tensor::from_values(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 4) {
    throw IoError("checkpoint: trailing bytes after tensor table");
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const auto bytes = serialize(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void restore_parameters(
    const Checkpoint& c,
    const std::vector<std::pair<std::string, num::Tensor>>& live) {
  std::unordered_map<std::string, const num::Tensor*> stored;
  for (const auto& [name, t] : c.tensors) stored[name] = &t;
  if (stored.size() != c.tensors.size()) {
    throw IoError("checkpoint: duplicate tensor names");
  }
  for (const auto& [name, t] : live) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      throw IoError("checkpoint: missing tensor " + name);
    }
    if (it->second->shape() != t.shape()) {
      throw IoError("checkpoint: shape mismatch for " + name);
    }
    num::Tensor target = t;
    auto dst = target.mutable_values();
    auto src = it->second->values();
    std::copy(src.begin(), src.end(), dst.begin());
    stored.erase(it);
  }
  if (!stored.empty()) {
    throw IoError("checkpoint: unknown tensor " + stored.begin()->first);
  }
}

}  // namespace mars::ckpt
