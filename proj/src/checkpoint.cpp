#include "refdet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace refdet {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::string read_str(std::istream& is) {
  std::uint32_t len = read_u32(is);
  if (len > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(len, '\0');
  is.read(s.data(), len);
  return s;
}

void write_entry(std::ostream& os, const std::string& name, const Tensor& t) {
  write_str(os, name);
  write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
  for (int d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
  write_u64(os, t.numel());
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const std::string& fingerprint,
                     const std::vector<std::pair<std::string, Tensor>>& params,
                     const std::vector<std::pair<std::string, Tensor>>& buffers) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_str(os, fingerprint);
  write_u32(os, static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (const auto& [name, t] : params) write_entry(os, name, t);
  for (const auto& [name, t] : buffers) write_entry(os, "buffer/" + name, t);
  if (!os) throw std::runtime_error("checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.fingerprint = read_str(is);
  std::uint32_t count = read_u32(is);
  ck.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = read_str(is);
    std::uint32_t ndim = read_u32(is);
    if (ndim > 8) throw std::runtime_error("checkpoint: implausible rank");
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = static_cast<int>(read_u32(is));
    std::uint64_t numel = read_u64(is);
    if (numel > (1ull << 31)) throw std::runtime_error("checkpoint: implausible array size");
    e.data.resize(numel);
    is.read(reinterpret_cast<char*>(e.data.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

}  // namespace refdet
