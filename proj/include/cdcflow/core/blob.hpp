#pragma once

// Binary container shared by the gamma store and model checkpoints:
//
//   bytes 0..7    magic "CDCFLOW\x01"
//   bytes 8..15   header length H, uint64 little-endian
//   next H bytes  UTF-8 JSON header; "blocks" lists {"name", "count"} in order
//   remainder     float64 little-endian values, blocks concatenated in order
//
// The payload size must equal 8 * sum(count) exactly.

#include "cdcflow/core/error.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace cdcflow::blob {

inline constexpr std::array<char, 8> kMagic = {'C', 'D', 'C', 'F', 'L', 'O', 'W', '\x01'};

struct Block {
  std::string name;
  std::vector<double> values;
};

struct Container {
  nlohmann::ordered_json header;
  std::vector<Block> blocks;

  const Block& block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    throw FormatError("missing block '" + name + "'");
  }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f64(std::string& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }

inline double get_f64(const char* p) { return std::bit_cast<double>(get_u64(p)); }

}  // namespace detail

inline std::string encode(const Container& c) {
  nlohmann::ordered_json header = c.header;
  auto blocks = nlohmann::ordered_json::array();
  for (const auto& b : c.blocks) blocks.push_back({{"name", b.name}, {"count", b.values.size()}});
  header["blocks"] = blocks;
  const std::string text = header.dump();

  std::string out(kMagic.begin(), kMagic.end());
  detail::put_u64(out, text.size());
  out += text;
  for (const auto& b : c.blocks)
    for (double x : b.values) detail::put_f64(out, x);
  return out;
}

inline Container decode(std::span<const char> bytes) {
  if (bytes.size() < 16) throw FormatError("truncated container: missing preamble");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) throw FormatError("bad magic: not a cdcflow container");
  const std::uint64_t header_len = detail::get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw FormatError("truncated container: header extends past end of file");

  Container c;
  try {
    c.header = nlohmann::ordered_json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed container header: ") + e.what());
  }
  if (!c.header.contains("blocks") || !c.header["blocks"].is_array()) throw FormatError("container header lacks a block table");

  std::uint64_t expected = 0;
  for (const auto& b : c.header["blocks"]) {
    if (!b.contains("count") || !b["count"].is_number_unsigned() || !b.contains("name"))
      throw FormatError("malformed block table entry");
    expected += b["count"].get<std::uint64_t>();
  }
  const std::uint64_t payload = bytes.size() - 16 - header_len;
  if (payload < expected * 8)
    throw FormatError("truncated container: payload has " + std::to_string(payload) + " bytes, header declares " +
                      std::to_string(expected * 8));
  if (payload != expected * 8)
    throw FormatError("size mismatch: payload has " + std::to_string(payload) + " bytes, header declares " +
                      std::to_string(expected * 8));

  const char* p = bytes.data() + 16 + header_len;
  for (const auto& entry : c.header["blocks"]) {
    Block b{entry["name"].get<std::string>(), {}};
    const auto n = entry["count"].get<std::uint64_t>();
    b.values.resize(n);
    for (std::uint64_t i = 0; i < n; ++i, p += 8) b.values[i] = detail::get_f64(p);
    c.blocks.push_back(std::move(b));
  }
  c.header.erase("blocks");
  return c;
}

inline void write_file(const Container& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  const std::string bytes = encode(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

inline Container read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

/// Checks header["format"] and header["version"].
inline void expect_format(const Container& c, const std::string& format, int version) {
  if (!c.header.contains("format") || c.header["format"] != format)
    throw FormatError("expected a '" + format + "' container");
  if (!c.header.contains("version") || !c.header["version"].is_number_integer() || c.header["version"].get<int>() != version)
    throw FormatError("version mismatch: expected " + std::to_string(version) + ", found " +
                      (c.header.contains("version") ? c.header["version"].dump() : std::string("none")));
}

}  // namespace cdcflow::blob
