#pragma once

// Binary field snapshot:
//   offset  0  char[8]  magic "MFLD0001"
//   offset  8  u32      n
//   offset 12  u32      reserved (0)
//   offset 16  f64      side_length
//   offset 24  f64      time
//   offset 32  f64      rho
//   offset 40  f64[n*n] samples, row-major
// All numbers little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "meanflow/grid.hpp"

namespace meanflow {

inline constexpr std::array<char, 8> kSnapshotMagic{'M', 'F', 'L', 'D', '0', '0', '0', '1'};
inline constexpr std::size_t kSnapshotHeaderBytes = 40;

struct Snapshot {
  Field field;
  double time = 0.0;
  double rho = 0.0;
};

namespace detail {

template <class T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> b{};
    std::memcpy(b.data(), &value, sizeof(T));
    std::reverse(b.begin(), b.end());
    std::memcpy(&value, b.data(), sizeof(T));
  }
  return value;
}

template <class T>
void put(std::string& buf, T value) {
  value = to_little(value);
  const auto* p = reinterpret_cast<const char*>(&value);
  buf.append(p, sizeof(T));
}

template <class T>
T get(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return to_little(value);
}

}  // namespace detail

[[nodiscard]] inline std::string encode_snapshot(const Field& f, double time, double rho) {
  std::string buf;
  buf.reserve(kSnapshotHeaderBytes + 8 * f.size());
  buf.append(kSnapshotMagic.data(), kSnapshotMagic.size());
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(f.grid().n()));
  detail::put<std::uint32_t>(buf, 0U);
  detail::put<double>(buf, f.grid().side_length());
  detail::put<double>(buf, time);
  detail::put<double>(buf, rho);
  for (double v : f.values()) detail::put<double>(buf, v);
  return buf;
}

[[nodiscard]] inline Snapshot decode_snapshot(const std::string& buf) {
  if (buf.size() < kSnapshotHeaderBytes ||
      std::memcmp(buf.data(), kSnapshotMagic.data(), kSnapshotMagic.size()) != 0) {
    throw IoError("not a field snapshot (bad magic or truncated header)");
  }
  const auto n = detail::get<std::uint32_t>(buf.data() + 8);
  const auto side = detail::get<double>(buf.data() + 16);
  const auto time = detail::get<double>(buf.data() + 24);
  const auto rho = detail::get<double>(buf.data() + 32);
  const std::size_t count = static_cast<std::size_t>(n) * n;
  if (buf.size() != kSnapshotHeaderBytes + 8 * count) {
    throw IoError("snapshot payload size does not match header");
  }
  const TorusGrid grid(static_cast<int>(n), side);
  std::vector<double> values(count);
  for (std::size_t k = 0; k < count; ++k) {
    values[k] = detail::get<double>(buf.data() + kSnapshotHeaderBytes + 8 * k);
  }
  return Snapshot{Field(grid, std::move(values)), time, rho};
}

inline void write_snapshot(const std::filesystem::path& path, const Field& f, double time, double rho) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string buf = encode_snapshot(f, time, rho);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

[[nodiscard]] inline Snapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_snapshot(buf);
}

}  // namespace meanflow
