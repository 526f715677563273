#include "usbrain/transform.hpp"

#include <Eigen/LU>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "usbrain/error.hpp"

namespace usbrain {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct IndexMap {
  Mat3 a;
  Vec3 b;
};

// Maps an output voxel index to the source index under t^-1.
IndexMap source_index_map(const Geometry& g, const SimilarityTransform& t) {
  const Vec3 sp(g.spacing[0], g.spacing[1], g.spacing[2]);
  const Vec3 origin(g.origin[0], g.origin[1], g.origin[2]);
  const Vec3 c = grid_center(g);
  const Mat3 inv_lin = t.rotation().transpose() / t.scale();
  IndexMap m;
  m.a = sp.cwiseInverse().asDiagonal() * inv_lin * sp.asDiagonal();
  m.b = sp.cwiseInverse().asDiagonal() *
        (inv_lin * (origin - c - t.translation()) + c - origin);
  return m;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Mat3 rotation_from_euler(double alpha_deg, double beta_deg, double gamma_deg) {
  const double a = alpha_deg * kDeg, b = beta_deg * kDeg, g = gamma_deg * kDeg;
  Mat3 rz, ry, rx;
  rz << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  ry << std::cos(b), 0, std::sin(b), 0, 1, 0, -std::sin(b), 0, std::cos(b);
  rx << 1, 0, 0, 0, std::cos(g), -std::sin(g), 0, std::sin(g), std::cos(g);
  return rz * ry * rx;
}

EulerAngles euler_from_rotation(const Mat3& r) {
  if (!r.allFinite() || (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(r.determinant() - 1.0) > 1e-6)
    throw Error(Errc::NotARotation, "matrix is not orthonormal with determinant +1");
  EulerAngles e;
  const double cos_beta = std::hypot(r(0, 0), r(1, 0));
  e.beta = std::atan2(-r(2, 0), cos_beta) / kDeg;
  if (cos_beta < 1e-7) {
    e.gimbal_locked = true;
    e.gamma = 0.0;
    e.alpha = std::atan2(-r(0, 1), r(1, 1)) / kDeg;
  } else {
    e.alpha = std::atan2(r(1, 0), r(0, 0)) / kDeg;
    e.gamma = std::atan2(r(2, 1), r(2, 2)) / kDeg;
  }
  return e;
}

SimilarityTransform::SimilarityTransform(EulerAngles euler, double scale, Vec3 translation)
    : euler_(euler),
      rotation_(rotation_from_euler(euler.alpha, euler.beta, euler.gamma)),
      scale_(scale),
      translation_(std::move(translation)) {
  if (!(scale > 0.0) || !std::isfinite(scale) || !translation_.allFinite() ||
      !rotation_.allFinite())
    throw Error(Errc::InvalidTransform, "similarity transform needs finite parameters and scale > 0");
}

SimilarityTransform::SimilarityTransform(const Mat3& rotation, double scale, Vec3 translation)
    : euler_(euler_from_rotation(rotation)),
      rotation_(rotation),
      scale_(scale),
      translation_(std::move(translation)) {
  if (!(scale > 0.0) || !std::isfinite(scale) || !translation_.allFinite())
    throw Error(Errc::InvalidTransform, "similarity transform needs finite parameters and scale > 0");
}

Vec3 SimilarityTransform::apply(const Vec3& p, const Vec3& center) const {
  return scale_ * (rotation_ * (p - center)) + center + translation_;
}

SimilarityTransform invert_similarity(const SimilarityTransform& t) {
  const Mat3 rt = t.rotation().transpose();
  const double s = 1.0 / t.scale();
  return SimilarityTransform(rt, s, -s * (rt * t.translation()));
}

SimilarityTransform compose_similarity(const SimilarityTransform& a, const SimilarityTransform& b) {
  const Mat3 r = a.rotation() * b.rotation();
  return SimilarityTransform(r, a.scale() * b.scale(),
                             a.scale() * (a.rotation() * b.translation()) + a.translation());
}

Vec3 grid_center(const Geometry& g) {
  const auto c = g.center();
  return Vec3(c[0], c[1], c[2]);
}

Mask apply_similarity(const Mask& m, const SimilarityTransform& t) {
  m.geom.validate();
  const auto map = source_index_map(m.geom, t);
  const auto& d = m.geom.dims;
  Mask out(m.geom);
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y) {
      const Vec3 row = map.a * Vec3(0, y, z) + map.b;
      for (std::uint32_t x = 0; x < d.w; ++x) {
        const Vec3 src = row + map.a.col(0) * double(x);
        const double sx = std::floor(src[0] + 0.5), sy = std::floor(src[1] + 0.5),
                     sz = std::floor(src[2] + 0.5);
        if (sx < 0 || sy < 0 || sz < 0 || sx >= d.w || sy >= d.h || sz >= d.d) continue;
        out.at(x, y, z) = m.at(std::size_t(sx), std::size_t(sy), std::size_t(sz));
      }
    }
  return out;
}

Volume apply_similarity(const Volume& v, const SimilarityTransform& t) {
  v.validate();
  const auto map = source_index_map(v.geom, t);
  const auto& d = v.geom.dims;
  Volume out(v.geom, DType::Float32);
  const double lim[3] = {d.w - 0.5, d.h - 0.5, d.d - 0.5};
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y) {
      const Vec3 row = map.a * Vec3(0, y, z) + map.b;
      for (std::uint32_t x = 0; x < d.w; ++x) {
        Vec3 src = row + map.a.col(0) * double(x);
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
          if (src[a] < -0.5 || src[a] > lim[a]) inside = false;
          src[a] = std::clamp(src[a], 0.0, lim[a] - 0.5);
        }
        if (!inside) continue;
        const auto x0 = std::size_t(std::floor(src[0]));
        const auto y0 = std::size_t(std::floor(src[1]));
        const auto z0 = std::size_t(std::floor(src[2]));
        const auto x1 = std::min<std::size_t>(x0 + 1, d.w - 1);
        const auto y1 = std::min<std::size_t>(y0 + 1, d.h - 1);
        const auto z1 = std::min<std::size_t>(z0 + 1, d.d - 1);
        const double fx = src[0] - double(x0), fy = src[1] - double(y0), fz = src[2] - double(z0);
        auto at = [&](std::size_t xi, std::size_t yi, std::size_t zi) {
          return double(v.at(xi, yi, zi));
        };
        const double c0 = (at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx) * (1 - fy) +
                          (at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx) * fy;
        const double c1 = (at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx) * (1 - fy) +
                          (at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx) * fy;
        out.at(x, y, z) = float(c0 * (1 - fz) + c1 * fz);
      }
    }
  return out;
}

std::string to_key_values(const SimilarityTransform& t) {
  const auto& e = t.euler();
  const auto& tr = t.translation();
  return "euler=" + fmt(e.alpha) + "," + fmt(e.beta) + "," + fmt(e.gamma) + "\n" +
         "scale=" + fmt(t.scale()) + "\n" + "translation=" + fmt(tr[0]) + "," + fmt(tr[1]) + "," +
         fmt(tr[2]) + "\n";
}

}  // namespace usbrain
