#include "gwnet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gwnet {

namespace fs = std::filesystem;
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

void Checkpoint::set(const std::string& key, const std::string& value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw std::invalid_argument("checkpoint config entry '" + key + "' is not one line");
  }
  for (auto& [k, v] : config) {
    if (k == key) {
      v = value;
      return;
    }
  }
  config.emplace_back(key, value);
}

const std::string& Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  throw DataError("checkpoint: missing config key '" + key + "'");
}

bool Checkpoint::has(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return true;
  }
  return false;
}

const Tensor& Checkpoint::blob(const std::string& name) const {
  for (const auto& [n, t] : blobs) {
    if (n == name) return t;
  }
  throw DataError("checkpoint: missing tensor '" + name + "'");
}

bool Checkpoint::has_blob(const std::string& name) const {
  for (const auto& [n, t] : blobs) {
    if (n == name) return true;
  }
  return false;
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in, const std::string& what) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw DataError("checkpoint truncated while reading " + what);
  }
  return v;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(ckpt.magic.data(), static_cast<std::streamsize>(ckpt.magic.size()));
    put<std::uint32_t>(out, kCheckpointVersion);
    std::string text;
    for (const auto& [k, v] : ckpt.config) text += k + " = " + v + "\n";
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.blobs.size()));
    for (const auto& [name, t] : ckpt.blobs) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      const Shape& s = t.shape();
      for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(out, d);
      auto data = t.data();
      out.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    out.flush();
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path, const std::string& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string got(magic.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw DataError(path.string() + ": not a " + magic + " checkpoint");
  }
  auto version = take<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": checkpoint version " + std::to_string(version) +
                    " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.magic = magic;
  auto len = take<std::uint64_t>(in, "config length");
  if (len > (1u << 24)) throw DataError(path.string() + ": config block too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw DataError(path.string() + ": truncated config block");
  }
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    auto eq = line.find(" = ");
    if (eq == std::string::npos) throw DataError(path.string() + ": bad config line '" + line + "'");
    ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  auto count = take<std::uint32_t>(in, "blob count");
  for (std::uint32_t b = 0; b < count; ++b) {
    auto nlen = take<std::uint32_t>(in, "blob name");
    if (nlen > 4096) throw DataError(path.string() + ": corrupt blob name");
    std::string name(nlen, '\0');
    if (!in.read(name.data(), nlen)) throw DataError(path.string() + ": truncated blob name");
    Shape s;
    s.n = take<std::int32_t>(in, name);
    s.c = take<std::int32_t>(in, name);
    s.h = take<std::int32_t>(in, name);
    s.w = take<std::int32_t>(in, name);
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 || s.numel() > (1ull << 31)) {
      throw DataError(path.string() + ": corrupt shape for " + name);
    }
    std::vector<double> v(s.numel());
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
      throw DataError(path.string() + ": truncated tensor " + name);
    }
    ckpt.blobs.emplace_back(name, Tensor(s, std::move(v)));
  }
  return ckpt;
}

}  // namespace gwnet
