#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "x2teeth/io.hpp"

namespace x2t {

/// Two-digit FDI tooth code: quadrant 1-4, position 1-8. Position 8 is the
/// wisdom tooth. index() enumerates the 32 codes as 11..18, 21..28, 31..38, 41..48.
struct FdiCode {
  int quadrant = 1;
  int position = 1;

  static constexpr int kCount = 32;

  static FdiCode from_code(int code) {
    FdiCode f{code / 10, code % 10};
    if (!f.valid()) throw std::invalid_argument("invalid FDI code " + std::to_string(code));
    return f;
  }
  static FdiCode from_index(int index) {
    if (index < 0 || index >= kCount) {
      throw std::invalid_argument("FDI index out of range: " + std::to_string(index));
    }
    return FdiCode{index / 8 + 1, index % 8 + 1};
  }
  static bool is_valid_code(int code) {
    return FdiCode{code / 10, code % 10}.valid() && code >= 11;
  }

  constexpr bool valid() const {
    return quadrant >= 1 && quadrant <= 4 && position >= 1 && position <= 8;
  }
  constexpr int code() const { return quadrant * 10 + position; }
  constexpr int index() const { return (quadrant - 1) * 8 + (position - 1); }
  constexpr bool is_wisdom() const { return position == 8; }
  constexpr bool is_upper() const { return quadrant <= 2; }

  friend constexpr bool operator==(FdiCode a, FdiCode b) { return a.code() == b.code(); }
  friend constexpr auto operator<=>(FdiCode a, FdiCode b) { return a.code() <=> b.code(); }
};

inline std::vector<FdiCode> all_fdi_codes() {
  std::vector<FdiCode> out;
  for (int i = 0; i < FdiCode::kCount; ++i) out.push_back(FdiCode::from_index(i));
  return out;
}

/// Tooth identity plus its inclusive pixel box; x runs along columns, y along rows.
struct ToothBox {
  FdiCode tooth;
  std::int64_t x_min = 0, x_max = 0, y_min = 0, y_max = 0;

  std::int64_t center_row() const { return (y_min + y_max) / 2; }
  std::int64_t center_col() const { return (x_min + x_max) / 2; }
  std::int64_t width() const { return x_max - x_min + 1; }
  std::int64_t height() const { return y_max - y_min + 1; }
  bool contains(std::int64_t row, std::int64_t col) const {
    return row >= y_min && row <= y_max && col >= x_min && col <= x_max;
  }
  friend bool operator==(const ToothBox&, const ToothBox&) = default;
};

enum class VolumeKind : std::uint8_t { intensity = 0, label = 1, mask = 2 };

/// Dense 3D grid with isotropic spacing (mm). Axes are ordered slowest to
/// fastest; cavity volumes use (z, y, x), patch and flat grids use
/// (row, arc column, depth).
template <class T>
struct Volume {
  std::array<std::int64_t, 3> extents{0, 0, 0};
  double spacing = 1.0;
  std::vector<T> data;

  Volume() = default;
  Volume(std::array<std::int64_t, 3> e, double spacing_mm, T fill = T{})
      : extents(e), spacing(spacing_mm),
        data(static_cast<std::size_t>(e[0] * e[1] * e[2]), fill) {
    if (e[0] <= 0 || e[1] <= 0 || e[2] <= 0) throw std::invalid_argument("volume extents must be positive");
    if (!(spacing_mm > 0)) throw std::invalid_argument("volume spacing must be positive");
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t index(std::int64_t a, std::int64_t b, std::int64_t c) const {
    return (a * extents[1] + b) * extents[2] + c;
  }
  bool contains(std::int64_t a, std::int64_t b, std::int64_t c) const {
    return a >= 0 && b >= 0 && c >= 0 && a < extents[0] && b < extents[1] && c < extents[2];
  }
  T& at(std::int64_t a, std::int64_t b, std::int64_t c) { return data[index(a, b, c)]; }
  const T& at(std::int64_t a, std::int64_t b, std::int64_t c) const { return data[index(a, b, c)]; }

  friend bool operator==(const Volume&, const Volume&) = default;
};

using IntensityVolume = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

/// Row-major, channels-last 2D map (rows × cols × channels).
template <class T>
struct Image {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(std::int64_t r, std::int64_t c, std::int64_t ch = 1, T fill = T{})
      : rows(r), cols(c), channels(ch), data(static_cast<std::size_t>(r * c * ch), fill) {}

  T& at(std::int64_t r, std::int64_t c, std::int64_t ch = 0) {
    return data[static_cast<std::size_t>((r * cols + c) * channels + ch)];
  }
  const T& at(std::int64_t r, std::int64_t c, std::int64_t ch = 0) const {
    return data[static_cast<std::size_t>((r * cols + c) * channels + ch)];
  }
  bool contains(std::int64_t r, std::int64_t c) const {
    return r >= 0 && c >= 0 && r < rows && c < cols;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

template <class T>
void validate_volume_payload(const Volume<T>& v, VolumeKind kind, const std::string& where) {
  if constexpr (std::is_same_v<T, float>) {
    if (kind != VolumeKind::intensity) throw IoError(where + ": float payload must be intensity");
    for (float x : v.data) {
      if (!(x >= 0.0f)) throw IoError(where + ": intensity volume has negative or NaN element");
    }
  } else {
    if (kind == VolumeKind::intensity) throw IoError(where + ": byte payload cannot be intensity");
    for (std::uint8_t x : v.data) {
      const bool ok = kind == VolumeKind::mask ? x <= 1 : (x == 0 || FdiCode::is_valid_code(x));
      if (!ok) throw IoError(where + ": invalid element " + std::to_string(x));
    }
  }
}

}  // namespace detail

/// X2TV file: "X2TV", kind (u8), spacing (f64 mm), 3 × u64 extents, raw
/// little-endian payload (f32 for intensity, u8 for label and mask).
template <class T>
void write_volume(const std::filesystem::path& path, const Volume<T>& v, VolumeKind kind) {
  detail::validate_volume_payload(v, kind, path.string());
  BinaryWriter w(path);
  w.magic("X2TV");
  w.u8(static_cast<std::uint8_t>(kind));
  w.f64(v.spacing);
  for (auto e : v.extents) w.u64(static_cast<std::uint64_t>(e));
  w.array(std::span<const T>(v.data));
  w.close();
}

template <class T>
Volume<T> read_volume(const std::filesystem::path& path, VolumeKind kind) {
  BinaryReader r(path);
  r.expect_magic("X2TV");
  const auto got = r.u8();
  if (got != static_cast<std::uint8_t>(kind)) {
    throw IoError(path.string() + ": volume kind " + std::to_string(got) + ", expected " +
                  std::to_string(static_cast<int>(kind)));
  }
  Volume<T> v;
  v.spacing = r.f64();
  if (!(v.spacing > 0)) throw IoError(path.string() + ": non-positive spacing");
  for (auto& e : v.extents) {
    const auto x = r.u64();
    if (x == 0 || x > (1ull << 31)) throw IoError(path.string() + ": bad extent");
    e = static_cast<std::int64_t>(x);
  }
  v.data.resize(static_cast<std::size_t>(v.extents[0] * v.extents[1] * v.extents[2]));
  r.array(std::span<T>(v.data));
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes");
  detail::validate_volume_payload(v, kind, path.string());
  return v;
}

}  // namespace x2t
