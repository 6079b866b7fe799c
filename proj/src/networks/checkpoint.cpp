#include "cyclestain/networks/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "cyclestain/core/error.hpp"

namespace cyclestain {
namespace {

constexpr std::array<char, 8> kMagic = {'C', 'Y', 'S', 'T', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw DataError("truncated checkpoint header: " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["config"] = ckpt.config;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors.entries()) {
    const Shape s = t.shape();
    header["tensors"].push_back({{"name", name},
                                 {"shape", {s.n, s.c, s.h, s.w}},
                                 {"offset", offset},
                                 {"count", t.size()}});
    offset += t.size() * sizeof(float);
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + tmp.string());
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::vector<float> buf;
    for (const auto& [name, t] : ckpt.tensors.entries()) {
      buf.resize(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t[i]);
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!os) throw DataError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw DataError("not a checkpoint file (bad magic): " + path.string());
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                    std::to_string(kCheckpointVersion) + "): " + path.string());
  const auto header_len = get<std::uint64_t>(is, "header length");
  std::string text(header_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw DataError("truncated checkpoint header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint header: " + std::string(e.what()));
  }
  if (header.value("version", 0U) != kCheckpointVersion)
    throw DataError("checkpoint header version mismatch: " + path.string());

  const std::streamoff payload_start = is.tellg();
  Checkpoint ckpt;
  ckpt.config = header.value("config", nlohmann::json::object());
  ckpt.meta = header.value("meta", nlohmann::json::object());
  std::vector<float> buf;
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape.size() != 4) throw DataError("checkpoint tensor shape must have 4 axes");
    const Shape s{shape[0], shape[1], shape[2], shape[3]};
    const auto count = entry.at("count").get<std::size_t>();
    if (count != s.size()) throw DataError("checkpoint tensor count/shape mismatch");
    is.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    buf.resize(count);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float))))
      throw DataError("truncated checkpoint payload for " + entry.at("name").get<std::string>());
    Tensor t(s);
    for (std::size_t i = 0; i < count; ++i) t[i] = buf[i];
    ckpt.tensors.set(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

}  // namespace cyclestain
