#pragma once

// Parameter file format, little-endian throughout:
//   bytes 0..3   magic "TRCT"
//   u32          version (currently 1)
//   u32          tensor count
//   per tensor:  u32 layer index, u32 kind (0 = weight, 1 = bias),
//                u32 rows, u32 cols
//   payload:     row-major float32 per tensor, in table order

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tract/nn.hpp"

namespace tract {

namespace detail {
inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}
inline uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
}  // namespace detail

inline void save_params(const ParamStore& store, const std::string& path) {
  std::vector<uint8_t> out;
  out.push_back('T');
  out.push_back('R');
  out.push_back('C');
  out.push_back('T');
  detail::put_u32(out, 1);

  struct Entry {
    uint32_t layer, kind;
    const Mat* m;
  };
  std::vector<Entry> table;
  for (size_t li = 0; li < store.layers.size(); ++li) {
    const Param& p = store.layers[li];
    if (p.w.rows > 0) table.push_back({static_cast<uint32_t>(li), 0, &p.w});
    if (p.b.rows > 0) table.push_back({static_cast<uint32_t>(li), 1, &p.b});
  }
  detail::put_u32(out, static_cast<uint32_t>(table.size()));
  for (const Entry& e : table) {
    detail::put_u32(out, e.layer);
    detail::put_u32(out, e.kind);
    detail::put_u32(out, static_cast<uint32_t>(e.m->rows));
    detail::put_u32(out, static_cast<uint32_t>(e.m->cols));
  }
  for (const Entry& e : table) {
    for (double v : e.m->data) {
      const uint32_t bits = std::bit_cast<uint32_t>(static_cast<float>(v));
      detail::put_u32(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("save_params: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("save_params: write failed: " + path);
}

inline ParamStore load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("load_params: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 12) throw FormatError(path + ": truncated header");
  if (std::memcmp(buf.data(), "TRCT", 4) != 0) {
    throw FormatError(path + ": bad magic, expected TRCT");
  }
  const uint32_t version = detail::get_u32(buf.data() + 4);
  if (version != 1) {
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  }
  const uint32_t n_tensors = detail::get_u32(buf.data() + 8);
  const size_t table_bytes = static_cast<size_t>(n_tensors) * 16;
  if (buf.size() < 12 + table_bytes) throw FormatError(path + ": truncated table");

  struct Entry {
    uint32_t layer, kind, rows, cols;
  };
  std::vector<Entry> table(n_tensors);
  size_t payload = 0;
  uint32_t max_layer = 0;
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint8_t* p = buf.data() + 12 + static_cast<size_t>(i) * 16;
    table[i] = {detail::get_u32(p), detail::get_u32(p + 4), detail::get_u32(p + 8),
                detail::get_u32(p + 12)};
    if (table[i].kind > 1) throw FormatError(path + ": bad tensor kind");
    payload += static_cast<size_t>(table[i].rows) * table[i].cols * 4;
    max_layer = std::max(max_layer, table[i].layer);
  }
  if (buf.size() != 12 + table_bytes + payload) {
    throw FormatError(path + ": payload size mismatch, expected " +
                      std::to_string(payload) + " bytes");
  }

  ParamStore store;
  store.layers.resize(max_layer + 1);
  const uint8_t* cur = buf.data() + 12 + table_bytes;
  for (const Entry& e : table) {
    Mat m(static_cast<int>(e.rows), static_cast<int>(e.cols));
    for (size_t i = 0; i < m.data.size(); ++i) {
      m.data[i] = std::bit_cast<float>(detail::get_u32(cur));
      cur += 4;
    }
    Param& p = store.layers[e.layer];
    (e.kind == 0 ? p.w : p.b) = std::move(m);
  }
  return store;
}

}  // namespace tract
