#pragma once

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mevius/common.hpp"

namespace mevius {

enum class TerrainKind : std::uint32_t { Flat = 0, Slope = 1, Steps = 2, Rough = 3 };

inline const char* terrain_kind_name(TerrainKind k) {
  switch (k) {
    case TerrainKind::Flat: return "flat";
    case TerrainKind::Slope: return "slope";
    case TerrainKind::Steps: return "steps";
    case TerrainKind::Rough: return "rough";
  }
  return "?";
}

inline TerrainKind terrain_kind_from_name(const std::string& s) {
  if (s == "flat") return TerrainKind::Flat;
  if (s == "slope") return TerrainKind::Slope;
  if (s == "steps") return TerrainKind::Steps;
  if (s == "rough") return TerrainKind::Rough;
  throw ConfigError("terrain.kind: unknown kind '" + s + "'");
}

/// Regular heightfield; heights[iy * nx + ix] is the ground height at
/// (origin_x + ix * resolution, origin_y + iy * resolution). Queries outside
/// the grid clamp to the border.
struct Terrain {
  TerrainKind kind = TerrainKind::Flat;
  double resolution = 0.05;
  int nx = 0;
  int ny = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  std::vector<double> heights;
  double friction = 1.0;
  double restitution = 0.0;

  double at(int ix, int iy) const {
    ix = clamp(ix, 0, nx - 1);
    iy = clamp(iy, 0, ny - 1);
    return heights[static_cast<std::size_t>(iy) * nx + ix];
  }

  /// Bilinear height and its gradient.
  double height(double x, double y, double* dzdx = nullptr, double* dzdy = nullptr) const {
    const double gx = clamp((x - origin_x) / resolution, 0.0, static_cast<double>(nx - 1));
    const double gy = clamp((y - origin_y) / resolution, 0.0, static_cast<double>(ny - 1));
    const int ix = std::min(static_cast<int>(gx), nx - 2);
    const int iy = std::min(static_cast<int>(gy), ny - 2);
    const double fx = gx - ix, fy = gy - iy;
    const double h00 = at(ix, iy), h10 = at(ix + 1, iy), h01 = at(ix, iy + 1), h11 = at(ix + 1, iy + 1);
    if (dzdx) *dzdx = ((h10 - h00) * (1 - fy) + (h11 - h01) * fy) / resolution;
    if (dzdy) *dzdy = ((h01 - h00) * (1 - fx) + (h11 - h10) * fx) / resolution;
    return (h00 * (1 - fx) + h10 * fx) * (1 - fy) + (h01 * (1 - fx) + h11 * fx) * fy;
  }

  Vec3 normal(double x, double y) const {
    double gx = 0.0, gy = 0.0;
    height(x, y, &gx, &gy);
    return Vec3{-gx, -gy, 1.0}.normalized();
  }

  void validate() const {
    if (nx < 2 || ny < 2) throw ConfigError("terrain: grid needs at least 2x2 samples");
    if (!(resolution > 0.0)) throw ConfigError("terrain.resolution: must be positive");
    if (heights.size() != static_cast<std::size_t>(nx) * ny) throw ConfigError("terrain: height count mismatch");
    for (double h : heights)
      if (!std::isfinite(h)) throw ConfigError("terrain: heightfield must be finite everywhere");
    if (!(friction >= 0.0)) throw ConfigError("terrain.friction: must be non-negative");
  }
};

struct TerrainParams {
  double slope_deg = 5.0;
  double step_height = 0.05;
  double step_period = 0.4;
  /// Distance ahead of the origin where steps begin.
  double step_start = 1.0;
  double roughness = 0.05;
  double roughness_wavelength = 0.1;
  double friction = 1.0;
  double resolution = 0.02;
  double x_min = -4.0, x_max = 16.0;
  double y_min = -4.0, y_max = 4.0;
};

/// Deterministic for a given seed; only the rough kind consumes randomness.
/// Slope terrain overlays steps when step_height > 0 is requested explicitly
/// through `params.step_height` with kind Slope and `overlay_steps`.
inline Terrain sample_terrain(TerrainKind kind, const TerrainParams& p, std::uint64_t seed,
                              bool overlay_steps = false) {
  if (p.step_height < 0.0) throw ConfigError("terrain.step_height: must be non-negative");
  if (!(p.step_period > 0.0)) throw ConfigError("terrain.step_period: must be positive");
  if (p.roughness < 0.0) throw ConfigError("terrain.roughness: must be non-negative");
  if (!(p.roughness_wavelength > 0.0)) throw ConfigError("terrain.roughness_wavelength: must be positive");
  if (!(std::abs(p.slope_deg) < 45.0)) throw ConfigError("terrain.slope_deg: must lie in (-45, 45)");
  if (!(p.resolution > 0.0) || !(p.x_max > p.x_min) || !(p.y_max > p.y_min))
    throw ConfigError("terrain: invalid grid extent");
  if (!(p.friction >= 0.0)) throw ConfigError("terrain.friction: must be non-negative");

  Terrain t;
  t.kind = kind;
  t.resolution = p.resolution;
  t.origin_x = p.x_min;
  t.origin_y = p.y_min;
  t.nx = static_cast<int>(std::round((p.x_max - p.x_min) / p.resolution)) + 1;
  t.ny = static_cast<int>(std::round((p.y_max - p.y_min) / p.resolution)) + 1;
  t.friction = p.friction;
  t.heights.assign(static_cast<std::size_t>(t.nx) * t.ny, 0.0);

  const double slope = std::tan(p.slope_deg * std::numbers::pi / 180.0);
  auto steps = [&](double x) {
    return x < p.step_start ? 0.0 : p.step_height * (1.0 + std::floor((x - p.step_start) / p.step_period));
  };

  // Rough: value noise on a coarse lattice, bilinearly resampled.
  std::vector<double> lattice;
  int lx = 0, ly = 0;
  if (kind == TerrainKind::Rough) {
    lx = static_cast<int>(std::ceil((p.x_max - p.x_min) / p.roughness_wavelength)) + 2;
    ly = static_cast<int>(std::ceil((p.y_max - p.y_min) / p.roughness_wavelength)) + 2;
    Rng rng(seed);
    lattice.resize(static_cast<std::size_t>(lx) * ly);
    for (double& v : lattice) v = rng.uniform(-0.5, 0.5) * p.roughness;
  }

  for (int iy = 0; iy < t.ny; ++iy) {
    for (int ix = 0; ix < t.nx; ++ix) {
      const double x = t.origin_x + ix * t.resolution;
      double h = 0.0;
      switch (kind) {
        case TerrainKind::Flat: break;
        case TerrainKind::Slope:
          h = x * slope + (overlay_steps ? steps(x) : 0.0);
          break;
        case TerrainKind::Steps: h = steps(x); break;
        case TerrainKind::Rough: {
          const double gx = (ix * t.resolution) / p.roughness_wavelength;
          const double gy = (iy * t.resolution) / p.roughness_wavelength;
          const int i0 = static_cast<int>(gx), j0 = static_cast<int>(gy);
          const double fx = gx - i0, fy = gy - j0;
          auto v = [&](int i, int j) { return lattice[static_cast<std::size_t>(j) * lx + i]; };
          h = (v(i0, j0) * (1 - fx) + v(i0 + 1, j0) * fx) * (1 - fy) +
              (v(i0, j0 + 1) * (1 - fx) + v(i0 + 1, j0 + 1) * fx) * fy;
          // Keep the spawn area level so every scenario starts from the same stance.
          const double r = std::hypot(x, p.y_min + iy * t.resolution);
          h *= clamp((r - 0.5) / 0.5, 0.0, 1.0);
          break;
        }
      }
      t.heights[static_cast<std::size_t>(iy) * t.nx + ix] = h;
    }
  }
  t.validate();
  return t;
}

inline Terrain flat_terrain() { return sample_terrain(TerrainKind::Flat, TerrainParams{.resolution = 0.5}, 0); }

// ---------------------------------------------------------------------------
// Binary grid file: little-endian throughout.
//   char[8]  magic "MVTERR01"
//   u32      kind
//   u32      nx
//   u32      ny
//   f64      resolution
//   f64      origin_x
//   f64      origin_y
//   f64      friction
//   f64      restitution
//   f64[nx*ny] heights, row-major (iy outer, ix inner)

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline void write_terrain(std::ostream& os, const Terrain& t) {
  os.write("MVTERR01", 8);
  detail::put_u32(os, static_cast<std::uint32_t>(t.kind));
  detail::put_u32(os, static_cast<std::uint32_t>(t.nx));
  detail::put_u32(os, static_cast<std::uint32_t>(t.ny));
  detail::put_f64(os, t.resolution);
  detail::put_f64(os, t.origin_x);
  detail::put_f64(os, t.origin_y);
  detail::put_f64(os, t.friction);
  detail::put_f64(os, t.restitution);
  for (double h : t.heights) detail::put_f64(os, h);
}

inline Terrain read_terrain(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "MVTERR01", 8) != 0) throw FormatError("not a terrain grid file");
  Terrain t;
  const std::uint32_t kind = detail::get_u32(is);
  if (kind > 3) throw FormatError("terrain file: unknown kind " + std::to_string(kind));
  t.kind = static_cast<TerrainKind>(kind);
  t.nx = static_cast<int>(detail::get_u32(is));
  t.ny = static_cast<int>(detail::get_u32(is));
  if (t.nx < 2 || t.ny < 2 || static_cast<std::uint64_t>(t.nx) * t.ny > (1ull << 28))
    throw FormatError("terrain file: implausible grid dimensions");
  t.resolution = detail::get_f64(is);
  t.origin_x = detail::get_f64(is);
  t.origin_y = detail::get_f64(is);
  t.friction = detail::get_f64(is);
  t.restitution = detail::get_f64(is);
  t.heights.resize(static_cast<std::size_t>(t.nx) * t.ny);
  for (double& h : t.heights) h = detail::get_f64(is);
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("terrain file: ") + e.what());
  }
  return t;
}

inline void save_terrain(const std::filesystem::path& path, const Terrain& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  write_terrain(os, t);
}

inline Terrain load_terrain(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_terrain(is);
}

}  // namespace mevius
