#include "usbrain/atlas.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "usbrain/error.hpp"

namespace usbrain {

namespace {

// Shape parameters in units of the occipitofrontal half-length.
constexpr double kHemiOffsetX = 0.15;
constexpr double kHemiRadiusX = 0.65;
constexpr double kHemiRadiusZ = 0.68;
constexpr double kHemiCenterZ = 0.05;
constexpr double kCerebCenterY = -0.60;
constexpr double kCerebCenterZ = -0.45;
constexpr double kCerebRadiusX = 0.50;
constexpr double kCerebRadiusY = 0.28;
constexpr double kCerebRadiusZ = 0.27;

constexpr float kBackground = 0.10f;
constexpr float kInterior = 0.45f;
constexpr float kSkull = 0.90f;

void check_ga(double ga) {
  if (!(ga >= kGaMinWeeks && ga <= kGaMaxWeeks))
    throw Error(Errc::GaOutOfRange, "gestational age " + std::to_string(ga) + " outside [14, 31]");
}

bool inside_brain(double x, double y, double z, double half_ofd) {
  const double u = std::abs(x) / half_ofd, v = y / half_ofd, w = z / half_ofd;
  const double hx = (u - kHemiOffsetX) / kHemiRadiusX;
  const double hz = (w - kHemiCenterZ) / kHemiRadiusZ;
  if (hx * hx + v * v + hz * hz <= 1.0) return true;
  const double cx = u / kCerebRadiusX;
  const double cy = (v - kCerebCenterY) / kCerebRadiusY;
  const double cz = (w - kCerebCenterZ) / kCerebRadiusZ;
  return cx * cx + cy * cy + cz * cz <= 1.0;
}

// Mask voxels within `width` face-steps of the outside.
Mask rim_of(const Mask& m, int width) {
  Mask eroded = m;
  const auto& d = m.geom.dims;
  for (int pass = 0; pass < width; ++pass) {
    Mask next = eroded;
    for (std::uint32_t z = 0; z < d.d; ++z)
      for (std::uint32_t y = 0; y < d.h; ++y)
        for (std::uint32_t x = 0; x < d.w; ++x) {
          if (!eroded.at(x, y, z)) continue;
          const bool edge = x == 0 || y == 0 || z == 0 || x + 1 == d.w || y + 1 == d.h ||
                            z + 1 == d.d || !eroded.at(x - 1, y, z) || !eroded.at(x + 1, y, z) ||
                            !eroded.at(x, y - 1, z) || !eroded.at(x, y + 1, z) ||
                            !eroded.at(x, y, z - 1) || !eroded.at(x, y, z + 1);
          if (edge) next.at(x, y, z) = 0;
        }
    eroded = std::move(next);
  }
  Mask rim(m.geom);
  for (std::size_t i = 0; i < m.data.size(); ++i) rim.data[i] = m.data[i] && !eroded.data[i];
  return rim;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<double> parse_list(const std::string& key, const std::string& value, std::size_t n) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end == item.c_str()) throw Error(Errc::InvalidConfig, "bad number in " + key + ": " + item);
    out.push_back(v);
  }
  if (out.size() != n) throw Error(Errc::InvalidConfig, key + " needs " + std::to_string(n) + " values");
  return out;
}

}  // namespace

double growth_factor(double ga_weeks) { return 1.0 + 0.025 * (ga_weeks - kReferenceGaWeeks); }

Geometry desk_grid() {
  const float sp = 3.0f;
  const float o = -15.5f * sp;
  return make_geometry(Dims{32, 32, 32}, sp, {o, o, o});
}

Mask make_atlas_mask(double ga_weeks, const Geometry& grid) {
  check_ga(ga_weeks);
  grid.validate();
  const double half_ofd = 0.5 * kReferenceOfdMm * growth_factor(ga_weeks);
  const auto& d = grid.dims;
  Mask m(grid);
  for (std::uint32_t z = 0; z < d.d; ++z) {
    const double wz = (z - (d.d - 1) / 2.0) * grid.spacing[2];
    for (std::uint32_t y = 0; y < d.h; ++y) {
      const double wy = (y - (d.h - 1) / 2.0) * grid.spacing[1];
      for (std::uint32_t x = 0; x < d.w; ++x) {
        // Offsets from the mid-plane are exact negatives for mirrored
        // indices, so the mask is exactly symmetric.
        const double wx = (x - (d.w - 1) / 2.0) * grid.spacing[0];
        m.at(x, y, z) = inside_brain(wx, wy, wz, half_ofd) ? 1 : 0;
      }
    }
  }
  return m;
}

double extent_y_mm(const Mask& m) {
  const auto& d = m.geom.dims;
  std::uint32_t count = 0;
  for (std::uint32_t y = 0; y < d.h; ++y) {
    bool any = false;
    for (std::uint32_t z = 0; z < d.d && !any; ++z)
      for (std::uint32_t x = 0; x < d.w && !any; ++x) any = m.at(x, y, z) != 0;
    count += any ? 1 : 0;
  }
  return count * double(m.geom.spacing[1]);
}

Mask annotate_scan(const Mask& atlas, const SimilarityTransform& align) {
  return apply_similarity(atlas, invert_similarity(align));
}

void PhantomSpec::validate() const {
  check_ga(ga_weeks);
  if (!(noise_level >= 0.0 && noise_level <= 1.0))
    throw Error(Errc::InvalidConfig, "noise_level must lie in [0, 1]");
  if (!(occlusion_strength >= 0.0 && occlusion_strength <= 1.0))
    throw Error(Errc::InvalidConfig, "occlusion_strength must lie in [0, 1]");
}

int proximal_side(const SimilarityTransform& pose) {
  // Hemisphere centers in canonical offsets, moved into the scan.
  const SimilarityTransform inv = invert_similarity(pose);
  const Vec3 origin = Vec3::Zero();
  const double z_left = inv.apply(Vec3(-1, 0, 0), origin)[2];
  const double z_right = inv.apply(Vec3(1, 0, 0), origin)[2];
  return z_right > z_left + 1e-9 ? 1 : -1;
}

Phantom generate_phantom(const PhantomSpec& spec, const Geometry& grid) {
  spec.validate();
  grid.validate();
  Phantom ph;
  ph.pose = spec.pose;
  ph.truth = annotate_scan(make_atlas_mask(spec.ga_weeks, grid), spec.pose);
  const Mask rim = rim_of(ph.truth, 2);
  const auto& d = grid.dims;
  const Vec3 c = grid_center(grid);
  const int proximal = proximal_side(spec.pose);
  const double artifact = std::min(1.0, 2.0 * spec.noise_level);
  Rng rng(spec.seed);

  // Random ingredients are drawn up front in a fixed order.
  struct Wave {
    Vec3 k;
    double phase;
  };
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    const Vec3 dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    w.k = dir * (2.0 * std::numbers::pi / rng.uniform(8.0, 20.0));
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  struct Blob {
    Vec3 center;
    double sigma, amplitude;
  };
  std::vector<Blob> blobs(3 + rng.below(4));
  for (auto& b : blobs) {
    b.center = Vec3(rng.uniform(-0.5, 0.5) * d.w * grid.spacing[0],
                    rng.uniform(-0.5, 0.5) * d.h * grid.spacing[1],
                    rng.uniform(-0.5, 0.5) * d.d * grid.spacing[2]) +
               c;
    b.sigma = rng.uniform(4.0, 9.0);
    b.amplitude = rng.uniform(0.10, 0.30);
  }
  const double half_ofd = 0.5 * kReferenceOfdMm * growth_factor(spec.ga_weeks) / spec.pose.scale();
  const Vec3 brain_center = invert_similarity(spec.pose).apply(c, c);
  std::vector<double> arc_radius(1 + rng.below(3));
  for (std::size_t i = 0; i < arc_radius.size(); ++i)
    arc_radius[i] = 0.75 * half_ofd + 5.0 + 4.0 * double(i) + rng.uniform(0.0, 2.0);
  const double arc_half_width = 0.6 * grid.spacing[2];

  const SimilarityTransform& pose = spec.pose;
  ph.volume = Volume(grid, DType::Float32);
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y)
      for (std::uint32_t x = 0; x < d.w; ++x) {
        const auto w = grid.world(x, y, z);
        const Vec3 p(w[0], w[1], w[2]);
        const std::size_t i = grid.index(x, y, z);
        double value = kBackground;
        if (ph.truth.data[i]) {
          value = rim.data[i] ? kSkull : kInterior;
          if (!rim.data[i] && artifact > 0.0) {
            double tex = 0.0;
            for (const auto& wv : waves) tex += std::cos(wv.k.dot(p) + wv.phase);
            value *= 1.0 + 0.25 * artifact * tex / 3.0;
          }
          const double side = pose.apply(p, c)[0] - c[0];
          if ((side < 0.0 ? -1 : 1) == proximal) value *= 1.0 - spec.occlusion_strength;
        } else if (artifact > 0.0) {
          for (const auto& b : blobs) {
            const double r2 = (p - b.center).squaredNorm();
            value += artifact * b.amplitude * std::exp(-0.5 * r2 / (b.sigma * b.sigma));
          }
          const Vec3 rel = p - brain_center;
          const double r = rel.norm();
          if (r > 0.0 && rel[2] / r > std::cos(50.0 * std::numbers::pi / 180.0)) {
            for (double ar : arc_radius)
              if (std::abs(r - ar) <= arc_half_width) value = std::max(value, 0.8 * artifact);
          }
        }
        ph.volume.data[i] = float(value);
      }

  if (spec.noise_level > 0.0) {
    for (auto& v : ph.volume.data) {
      const double speckle = std::max(0.0, 1.0 + 0.5 * spec.noise_level * rng.normal());
      v = float(v * speckle);
    }
  }
  for (auto& v : ph.volume.data) v = std::clamp(v, 0.f, 1.f);
  return ph;
}

SimilarityTransform random_pose(Rng& rng, const PoseRandomization& opts) {
  EulerAngles e;
  if (opts.rotate) {
    // Uniform unit quaternion.
    const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    const double t2 = 2.0 * std::numbers::pi * u2, t3 = 2.0 * std::numbers::pi * u3;
    const Eigen::Quaterniond q(b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3));
    e = euler_from_rotation(q.toRotationMatrix());
    e.gimbal_locked = false;
  }
  const double s = 1.0 + rng.uniform(-opts.scale_jitter, opts.scale_jitter);
  const double m = opts.max_translation_mm;
  const Vec3 t(rng.uniform(-m, m), rng.uniform(-m, m), rng.uniform(-m, m));
  return SimilarityTransform(e, s, t);
}

std::string to_key_values(const PhantomSpec& spec) {
  return "ga_weeks=" + fmt(spec.ga_weeks) + "\n" + to_key_values(spec.pose) +
         "noise_level=" + fmt(spec.noise_level) + "\n" +
         "occlusion_strength=" + fmt(spec.occlusion_strength) + "\n" +
         "seed=" + std::to_string(spec.seed) + "\n";
}

PhantomSpec parse_phantom_spec(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::InvalidConfig, "malformed record line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&kv](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(Errc::InvalidConfig, "phantom record lacks " + key);
    return it->second;
  };
  PhantomSpec spec;
  spec.ga_weeks = parse_list("ga_weeks", need("ga_weeks"), 1)[0];
  const auto e = parse_list("euler", need("euler"), 3);
  const auto t = parse_list("translation", need("translation"), 3);
  const double s = parse_list("scale", need("scale"), 1)[0];
  spec.pose = SimilarityTransform(EulerAngles{e[0], e[1], e[2], false}, s, Vec3(t[0], t[1], t[2]));
  spec.noise_level = parse_list("noise_level", need("noise_level"), 1)[0];
  spec.occlusion_strength = parse_list("occlusion_strength", need("occlusion_strength"), 1)[0];
  spec.seed = std::stoull(need("seed"));
  spec.validate();
  return spec;
}

void save_phantom_spec(const PhantomSpec& spec, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(Errc::IoFailure, "cannot write " + path.string());
  f << to_key_values(spec);
  if (!f) throw Error(Errc::IoFailure, "short write to " + path.string());
}

PhantomSpec load_phantom_spec(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_phantom_spec(ss.str());
}

}  // namespace usbrain
