#include "iecl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace iecl {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'I', 'E', 'C', 'L', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw CheckpointError("truncated checkpoint: " + path.string());
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<nn::Param>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.rank()));
    for (Index extent : e.value.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(extent));
    const auto data = e.value.data();
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  }
  if (!os) throw CheckpointError("failed writing checkpoint: " + path.string());
}

std::vector<nn::Param> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic): " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  }
  const auto count = get<std::uint32_t>(is, path);
  std::vector<nn::Param> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(is, path), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) {
      throw CheckpointError("truncated checkpoint: " + path.string());
    }
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& extent : shape) extent = static_cast<Index>(get<std::uint64_t>(is, path));
    std::vector<double> data(static_cast<std::size_t>(numel(shape)));
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw CheckpointError("truncated checkpoint: " + path.string());
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint: " + path.string());
  return out;
}

void restore(const std::vector<nn::Param>& src, const std::vector<nn::Param>& dst) {
  std::unordered_map<std::string, const nn::Param*> by_name;
  for (const auto& p : src) by_name[p.name] = &p;
  for (const auto& p : dst) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint has no entry '" + p.name + "'");
    if (it->second->value.shape() != p.value.shape()) {
      throw CheckpointError("checkpoint entry '" + p.name + "' has shape " + to_string(it->second->value.shape()) +
                            ", expected " + to_string(p.value.shape()));
    }
    Tensor target = p.value;
    std::copy(it->second->value.data().begin(), it->second->value.data().end(), target.mutable_data().begin());
  }
}

}  // namespace iecl
