#pragma once

// Versioned binary container used for parameter snapshots, checkpoints,
// fitted topic models and embedding tables.
//
// Layout (all integers little-endian):
//   magic "MWPC" | u32 format version | u64 FNV-1a checksum of body | u64 body length | body
// body:
//   str kind
//   u32 count, then per tensor:  str name | u32 rank | u64 dims... | f64 values...
//   u32 count, then per int array: str name | u64 length | i64 values...
//   u32 count, then per string:  str name | str value
// where str = u64 length + bytes. Entries are written in name order so equal
// containers serialize to equal bytes.

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mwpgen/tensor.hpp"

namespace mwpgen {

class FormatError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint32_t kContainerVersion = 1;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct Container {
  struct Array {
    Shape shape;
    std::vector<double> values;
  };

  std::string kind;
  std::map<std::string, Array> tensors;
  std::map<std::string, std::vector<std::int64_t>> integers;
  std::map<std::string, std::string> strings;

  void put(const std::string& name, const Tensor& t) {
    tensors[name] = {t.shape(), std::vector<double>(t.values().begin(), t.values().end())};
  }
  Tensor tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("container has no tensor '" + name + "'");
    return Tensor(it->second.shape, it->second.values);
  }
  const std::vector<std::int64_t>& ints(const std::string& name) const {
    auto it = integers.find(name);
    if (it == integers.end()) throw FormatError("container has no integer array '" + name + "'");
    return it->second;
  }
  const std::string& str(const std::string& name) const {
    auto it = strings.find(name);
    if (it == strings.end()) throw FormatError("container has no string '" + name + "'");
    return it->second;
  }

  std::string serialize() const {
    std::string body;
    put_str(body, kind);
    put_u32(body, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, a] : tensors) {
      put_str(body, name);
      put_u32(body, static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) put_u64(body, d);
      for (double v : a.values) put_u64(body, std::bit_cast<std::uint64_t>(v));
    }
    put_u32(body, static_cast<std::uint32_t>(integers.size()));
    for (const auto& [name, a] : integers) {
      put_str(body, name);
      put_u64(body, a.size());
      for (auto v : a) put_u64(body, static_cast<std::uint64_t>(v));
    }
    put_u32(body, static_cast<std::uint32_t>(strings.size()));
    for (const auto& [name, s] : strings) {
      put_str(body, name);
      put_str(body, s);
    }
    std::string out = "MWPC";
    put_u32(out, kContainerVersion);
    put_u64(out, fnv1a64(body));
    put_u64(out, body.size());
    out += body;
    return out;
  }

  static Container deserialize(std::string_view bytes) {
    Reader head{bytes.substr(0, std::min<std::size_t>(bytes.size(), 24))};
    if (bytes.size() < 24 || bytes.substr(0, 4) != "MWPC") throw FormatError("not a container file");
    head.pos = 4;
    const auto version = head.u32();
    if (version != kContainerVersion)
      throw FormatError("unsupported container version " + std::to_string(version));
    const auto checksum = head.u64();
    const auto length = head.u64();
    if (bytes.size() - 24 != length) throw FormatError("container body truncated");
    std::string_view body = bytes.substr(24);
    if (fnv1a64(body) != checksum) throw FormatError("container checksum mismatch");

    Reader r{body};
    Container c;
    c.kind = r.str();
    for (auto n = r.u32(); n > 0; --n) {
      auto name = r.str();
      Array a;
      a.shape.resize(r.u32());
      for (auto& d : a.shape) d = r.u64();
      a.values.resize(shape_size(a.shape));
      for (auto& v : a.values) v = std::bit_cast<double>(r.u64());
      c.tensors.emplace(std::move(name), std::move(a));
    }
    for (auto n = r.u32(); n > 0; --n) {
      auto name = r.str();
      std::vector<std::int64_t> a(r.u64());
      for (auto& v : a) v = static_cast<std::int64_t>(r.u64());
      c.integers.emplace(std::move(name), std::move(a));
    }
    for (auto n = r.u32(); n > 0; --n) {
      auto name = r.str();
      c.strings.emplace(std::move(name), r.str());
    }
    if (r.pos != body.size()) throw FormatError("trailing bytes in container");
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    const auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path);
  }

  static Container load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
  }

 private:
  static void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void put_str(std::string& out, std::string_view s) {
    put_u64(out, s.size());
    out.append(s);
  }

  struct Reader {
    std::string_view data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
      if (pos + n > data.size()) throw FormatError("container truncated");
    }
    std::uint32_t u32() {
      need(4);
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(data[pos + i])) << (8 * i);
      pos += 4;
      return v;
    }
    std::uint64_t u64() {
      need(8);
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data[pos + i])) << (8 * i);
      pos += 8;
      return v;
    }
    std::string str() {
      const auto n = u64();
      need(n);
      std::string s(data.substr(pos, n));
      pos += n;
      return s;
    }
  };
};

}  // namespace mwpgen
