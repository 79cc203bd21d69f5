#include "avatar/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "avatar/errors.hpp"

namespace avatar {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'V', 'C', 'K', 'P', 'T', '\0', '\0'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(path.string() + ": truncated checkpoint");
  return v;
}

std::string get_string(std::ifstream& in, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError(path.string() + ": truncated checkpoint");
  return s;
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<uint32_t>(out, kCheckpointVersion);
    const std::string meta = checkpoint.meta.dump();
    put<uint64_t>(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<uint64_t>(out, checkpoint.tensors.size());
    for (const auto& [name, t] : checkpoint.tensors) {
      put<uint32_t>(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<uint32_t>(out, static_cast<uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) put<uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError(path.string() + ": not a checkpoint file");
  const auto version = get<uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto meta_len = get<uint64_t>(in, path);
  try {
    ck.meta = nlohmann::json::parse(get_string(in, meta_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad metadata: " + e.what());
  }
  const auto n = get<uint64_t>(in, path);
  for (uint64_t i = 0; i < n; ++i) {
    const std::string name = get_string(in, get<uint32_t>(in, path), path);
    const auto rank = get<uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = get<uint64_t>(in, path);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError(path.string() + ": truncated tensor '" + name + "'");
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

}  // namespace avatar
