#include "msg3d/autodiff/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace msg3d::ad {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'G', '3', 'D', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
    return out;
  }
}

template <typename U>
void put(std::ostream& out, U v) {
  v = to_little(v);
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  out.write(bytes, sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  char bytes[sizeof(U)];
  if (!in.read(bytes, sizeof(U))) {
    throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  }
  U v;
  std::memcpy(&v, bytes, sizeof(U));
  return to_little(v);
}

}  // namespace

void save_checkpoint(std::ostream& out, const std::vector<NamedTensor>& entries) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, entries.size());
  for (const NamedTensor& e : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) put<std::uint64_t>(out, d);
    for (double v : e.tensor.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

std::vector<NamedTensor> load_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  if (const auto version = get<std::uint32_t>(in, "version"); version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(in, "entry count");
  std::vector<NamedTensor> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, "name length");
    if (len > (1u << 16)) throw std::runtime_error("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw std::runtime_error("checkpoint: truncated name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > 16) throw std::runtime_error("checkpoint: implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in, "dimension");
    const std::size_t n = numel(shape);
    if (n > (std::size_t{1} << 32)) throw std::runtime_error("checkpoint: tensor too large");
    std::vector<double> values(n);
    for (double& v : values) v = std::bit_cast<double>(get<std::uint64_t>(in, "values"));
    entries.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return entries;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  save_checkpoint(out, entries);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return load_checkpoint(in);
}

void restore_values(const std::vector<NamedTensor>& source, std::vector<NamedTensor>& target) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const NamedTensor& e : source) by_name[e.name] = &e.tensor;
  for (NamedTensor& e : target) {
    const auto it = by_name.find(e.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing tensor '" + e.name + "'");
    if (it->second->shape() != e.tensor.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + e.name + "': " +
                               to_string(it->second->shape()) + " vs " +
                               to_string(e.tensor.shape()));
    }
    const auto v = it->second->values();
    std::copy(v.begin(), v.end(), e.tensor.values().begin());
  }
}

}  // namespace msg3d::ad
