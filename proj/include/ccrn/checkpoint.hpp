#pragma once

// Checkpoint container.
//
//   bytes  "CCRN01"
//   u32    header length H, then H bytes of key=value text (one per line)
//   u32    array count
//   per array:
//     u32  name length, name bytes
//     u32  rank, rank x u32 dims
//     product(dims) x f32 (row-major over dims)
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ccrn/error.hpp"

namespace ccrn::checkpoint {

inline constexpr char kMagic[6] = {'C', 'C', 'R', 'N', '0', '1'};

struct Array {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct File {
  std::map<std::string, std::string> header;
  std::vector<Array> arrays;

  const Array* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ValidationError(where_ + ": truncated checkpoint");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const File& f) {
  std::string out(kMagic, sizeof(kMagic));
  std::string header;
  for (const auto& [k, v] : f.header) header += k + "=" + v + "\n";
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  detail::put_u32(out, static_cast<std::uint32_t>(f.arrays.size()));
  for (const auto& a : f.arrays) {
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::put_u32(out, static_cast<std::uint32_t>(a.dims.size()));
    std::size_t n = 1;
    for (auto d : a.dims) {
      detail::put_u32(out, d);
      n *= d;
    }
    require(n == a.values.size(), "checkpoint array " + a.name + " has inconsistent size");
    out.append(reinterpret_cast<const char*>(a.values.data()), a.values.size() * sizeof(float));
  }
  return out;
}

inline File deserialize(const std::string& bytes, const std::string& where = "checkpoint") {
  detail::Reader r(bytes, where);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0)
    throw ValidationError(where + ": bad magic (not a CCRN01 checkpoint)");
  File f;
  const auto hlen = r.u32();
  std::istringstream hs(std::string(r.take(hlen), hlen));
  std::string line;
  while (std::getline(hs, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": malformed header line '" + line + "'");
    f.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Array a;
    const auto nlen = r.u32();
    a.name.assign(r.take(nlen), nlen);
    const auto rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.dims.push_back(r.u32());
      n *= a.dims.back();
    }
    a.values.resize(n);
    std::memcpy(a.values.data(), r.take(n * sizeof(float)), n * sizeof(float));
    f.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw ValidationError(where + ": trailing bytes after last array");
  return f;
}

inline void save(const std::filesystem::path& path, const File& f) {
  const auto bytes = serialize(f);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw RuntimeFailure("cannot write checkpoint " + tmp);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw RuntimeFailure("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline File load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

}  // namespace ccrn::checkpoint
