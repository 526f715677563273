#pragma once

// Independent metric oracles shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "usbrain/random.hpp"
#include "usbrain/volume.hpp"

namespace oracle {

using namespace usbrain;

inline Mask empty_mask(Dims d, float spacing = 1.f) { return Mask(make_geometry(d, spacing)); }

inline Mask random_mask(Dims d, double density, Rng& rng, float spacing = 1.f) {
  Mask m = empty_mask(d, spacing);
  for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
  return m;
}

struct P {
  double x, y, z;
};

// Surface points by the face-neighbour rule, recomputed here.
inline std::vector<P> surface_points(const Mask& m) {
  const auto& d = m.geom.dims;
  auto in = [&](long x, long y, long z) {
    return x >= 0 && y >= 0 && z >= 0 && x < long(d.w) && y < long(d.h) && z < long(d.d) &&
           m.at(std::size_t(x), std::size_t(y), std::size_t(z));
  };
  std::vector<P> out;
  for (long z = 0; z < long(d.d); ++z)
    for (long y = 0; y < long(d.h); ++y)
      for (long x = 0; x < long(d.w); ++x) {
        if (!in(x, y, z)) continue;
        if (!in(x - 1, y, z) || !in(x + 1, y, z) || !in(x, y - 1, z) || !in(x, y + 1, z) || !in(x, y, z - 1) ||
            !in(x, y, z + 1))
          out.push_back({x * double(m.geom.spacing[0]), y * double(m.geom.spacing[1]), z * double(m.geom.spacing[2])});
      }
  return out;
}

inline double brute_hausdorff(const Mask& a, const Mask& b) {
  const auto pa = surface_points(a), pb = surface_points(b);
  auto directed = [](const std::vector<P>& from, const std::vector<P>& to) {
    double worst = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to)
        best = std::min(best, (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y) + (p.z - q.z) * (p.z - q.z));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::sqrt(std::max(directed(pa, pb), directed(pb, pa)));
}

// Lattice-preserving moves on a cubic grid: quarter turn about z, then an
// integer shift (content must stay inside).
inline Mask quarter_turn_z(const Mask& m) {
  const auto n = m.geom.dims.w;
  Mask out(m.geom);
  for (std::uint32_t z = 0; z < n; ++z)
    for (std::uint32_t y = 0; y < n; ++y)
      for (std::uint32_t x = 0; x < n; ++x) out.at(n - 1 - y, x, z) = m.at(x, y, z);
  return out;
}

inline Mask shift(const Mask& m, int dx, int dy, int dz) {
  Mask out(m.geom);
  const auto& d = m.geom.dims;
  for (int z = 0; z < int(d.d); ++z)
    for (int y = 0; y < int(d.h); ++y)
      for (int x = 0; x < int(d.w); ++x)
        if (m.at(x, y, z)) out.at(x + dx, y + dy, z + dz) = 1;
  return out;
}

}  // namespace oracle
