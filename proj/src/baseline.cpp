#include "usbrain/baseline.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "usbrain/error.hpp"

namespace usbrain {

namespace {

std::string fmt3(const Vec3& v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", v[0], v[1], v[2]);
  return buf;
}

Vec3 parse_vec3(const std::string& key, const std::string& value) {
  Vec3 out;
  std::stringstream ss(value);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) break;
    char* end = nullptr;
    out[i++] = std::strtod(item.c_str(), &end);
    if (end == item.c_str()) throw Error(Errc::InvalidConfig, "bad number in " + key);
  }
  if (i != 3 || std::getline(ss, item, ','))
    throw Error(Errc::InvalidConfig, key + " needs three values");
  return out;
}

}  // namespace

Ellipsoid fit_ellipsoid(const Volume& prob) {
  prob.validate();
  const auto& g = prob.geom;
  const auto& d = g.dims;
  double mass = 0.0;
  Vec3 first = Vec3::Zero();
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y)
      for (std::uint32_t x = 0; x < d.w; ++x) {
        const double w = prob.at(x, y, z);
        if (w <= 0.0) continue;
        const auto p = g.world(x, y, z);
        mass += w;
        first += w * Vec3(p[0], p[1], p[2]);
      }
  if (!(mass > 0.0)) throw Error(Errc::ZeroMass, "probability map has no mass");
  Ellipsoid e;
  e.center = first / mass;
  Mat3 cov = Mat3::Zero();
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y)
      for (std::uint32_t x = 0; x < d.w; ++x) {
        const double w = prob.at(x, y, z);
        if (w <= 0.0) continue;
        const auto p = g.world(x, y, z);
        const Vec3 r = Vec3(p[0], p[1], p[2]) - e.center;
        cov.noalias() += w * r * r.transpose();
      }
  cov /= mass;

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  // Eigen sorts ascending; reverse to descending.
  Vec3 lambda;
  for (int i = 0; i < 3; ++i) {
    lambda[i] = std::max(0.0, eig.eigenvalues()[2 - i]);
    e.axes.col(i) = eig.eigenvectors().col(2 - i);
  }
  if (e.axes.determinant() < 0.0) e.axes.col(2) = -e.axes.col(2);
  e.degenerate = !(lambda[0] > 0.0) || lambda[2] / lambda[0] < 1e-9;
  const double floor = std::min({g.spacing[0], g.spacing[1], g.spacing[2]});
  for (int i = 0; i < 3; ++i) e.radii[i] = std::max(floor, std::sqrt(5.0 * lambda[i]));
  return e;
}

Mask rasterize_ellipsoid(const Ellipsoid& e, const Geometry& grid) {
  grid.validate();
  const Mat3 to_unit = e.radii.cwiseInverse().asDiagonal() * e.axes.transpose();
  const auto& d = grid.dims;
  Mask m(grid);
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y)
      for (std::uint32_t x = 0; x < d.w; ++x) {
        const auto p = grid.world(x, y, z);
        const Vec3 u = to_unit * (Vec3(p[0], p[1], p[2]) - e.center);
        m.at(x, y, z) = u.squaredNorm() <= 1.0 ? 1 : 0;
      }
  return m;
}

std::string to_key_values(const Ellipsoid& e) {
  const EulerAngles a = euler_from_rotation(e.axes);
  return "center=" + fmt3(e.center) + "\nradii=" + fmt3(e.radii) + "\neuler=" +
         fmt3(Vec3(a.alpha, a.beta, a.gamma)) + "\n";
}

Ellipsoid parse_ellipsoid(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::InvalidConfig, "malformed record line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"center", "radii", "euler"})
    if (!kv.count(key)) throw Error(Errc::InvalidConfig, std::string("ellipsoid record lacks ") + key);
  Ellipsoid e;
  e.center = parse_vec3("center", kv["center"]);
  e.radii = parse_vec3("radii", kv["radii"]);
  if (!(e.radii.minCoeff() > 0.0)) throw Error(Errc::InvalidConfig, "ellipsoid radii must be positive");
  const Vec3 a = parse_vec3("euler", kv["euler"]);
  e.axes = rotation_from_euler(a[0], a[1], a[2]);
  return e;
}

}  // namespace usbrain
