#include "usbrain/metrics.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <limits>

#include "usbrain/error.hpp"

namespace usbrain {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_geometry(const Geometry& a, const Geometry& b) {
  if (!(a == b)) throw Error(Errc::ShapeMismatch, "masks do not share a geometry");
}

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) along one line.
// `f` holds n samples at stride `stride`; `s` is the spacing along the line.
void edt_line(double* f, std::size_t n, std::size_t stride, double s, std::vector<double>& in,
              std::vector<std::size_t>& v, std::vector<double>& z) {
  in.resize(n);
  for (std::size_t i = 0; i < n; ++i) in[i] = f[i * stride];
  v.clear();
  z.clear();
  const double s2 = s * s;
  for (std::size_t q = 0; q < n; ++q) {
    if (in[q] == kInf) continue;
    if (v.empty()) {
      v.push_back(q);
      z.push_back(-kInf);
      continue;
    }
    double cut;
    while (true) {
      const std::size_t p = v.back();
      const double dq = double(q), dp = double(p);
      cut = ((in[q] + s2 * dq * dq) - (in[p] + s2 * dp * dp)) / (2.0 * s2 * (dq - dp));
      if (cut > z.back()) break;
      v.pop_back();
      z.pop_back();
    }
    v.push_back(q);
    z.push_back(cut);
  }
  if (v.empty()) {
    for (std::size_t i = 0; i < n; ++i) f[i * stride] = kInf;
    return;
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k + 1 < v.size() && z[k + 1] < double(i)) ++k;
    const double d = s * (double(i) - double(v[k]));
    f[i * stride] = d * d + in[v[k]];
  }
}

}  // namespace

Mask threshold_mask(const Volume& prob, double t) {
  prob.validate();
  const double cut = t >= 1.0 ? 1.0 - 1e-6 : t;
  Mask m(prob.geom);
  for (std::size_t i = 0; i < prob.data.size(); ++i) m.data[i] = double(prob.data[i]) >= cut ? 1 : 0;
  return m;
}

double centroid_ed(const Mask& a, const Mask& b) {
  require_same_geometry(a.geom, b.geom);
  struct Moments {
    std::array<std::int64_t, 3> sum{0, 0, 0};
    std::int64_t n = 0;
  };
  auto moments = [](const Mask& m) {
    const auto& d = m.geom.dims;
    Moments r;
    for (std::uint32_t z = 0; z < d.d; ++z)
      for (std::uint32_t y = 0; y < d.h; ++y)
        for (std::uint32_t x = 0; x < d.w; ++x)
          if (m.at(x, y, z)) {
            r.sum[0] += x;
            r.sum[1] += y;
            r.sum[2] += z;
            ++r.n;
          }
    if (r.n == 0) throw Error(Errc::EmptyMask, "centroid of an empty mask");
    return r;
  };
  const Moments ma = moments(a), mb = moments(b);
  // Centroid offsets as exact integer ratios, squared terms summed in sorted
  // order: lattice moves of both masks leave the result bit-identical.
  std::array<double, 3> sq{};
  const double den = double(ma.n) * double(mb.n);
  for (int k = 0; k < 3; ++k) {
    const double num = double(ma.sum[k] * mb.n - mb.sum[k] * ma.n);
    const double mm = num / den * double(a.geom.spacing[k]);
    sq[k] = mm * mm;
  }
  std::sort(sq.begin(), sq.end());
  return std::sqrt(sq[0] + sq[1] + sq[2]);
}

Mask surface_voxels(const Mask& m) {
  const auto& d = m.geom.dims;
  Mask s(m.geom);
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y)
      for (std::uint32_t x = 0; x < d.w; ++x) {
        if (!m.at(x, y, z)) continue;
        const bool edge = x == 0 || y == 0 || z == 0 || x + 1 == d.w || y + 1 == d.h ||
                          z + 1 == d.d || !m.at(x - 1, y, z) || !m.at(x + 1, y, z) ||
                          !m.at(x, y - 1, z) || !m.at(x, y + 1, z) || !m.at(x, y, z - 1) ||
                          !m.at(x, y, z + 1);
        s.at(x, y, z) = edge ? 1 : 0;
      }
  return s;
}

std::vector<double> squared_distance_transform(const Mask& m) {
  const auto& d = m.geom.dims;
  const std::size_t w = d.w, h = d.h, dd = d.d;
  std::vector<double> f(m.data.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = m.data[i] ? 0.0 : kInf;
  std::vector<double> in, z;
  std::vector<std::size_t> v;
  for (std::size_t k = 0; k < dd; ++k)
    for (std::size_t j = 0; j < h; ++j)
      edt_line(&f[(k * h + j) * w], w, 1, m.geom.spacing[0], in, v, z);
  for (std::size_t k = 0; k < dd; ++k)
    for (std::size_t i = 0; i < w; ++i) edt_line(&f[k * h * w + i], h, w, m.geom.spacing[1], in, v, z);
  for (std::size_t j = 0; j < h; ++j)
    for (std::size_t i = 0; i < w; ++i) edt_line(&f[j * w + i], dd, h * w, m.geom.spacing[2], in, v, z);
  return f;
}

double hausdorff(const Mask& a, const Mask& b) {
  require_same_geometry(a.geom, b.geom);
  if (a.empty() || b.empty()) throw Error(Errc::EmptyMask, "Hausdorff distance of an empty mask");
  const Mask sa = surface_voxels(a), sb = surface_voxels(b);
  const auto da = squared_distance_transform(sa), db = squared_distance_transform(sb);
  double worst = 0.0;
  for (std::size_t i = 0; i < sa.data.size(); ++i) {
    if (sa.data[i]) worst = std::max(worst, db[i]);
    if (sb.data[i]) worst = std::max(worst, da[i]);
  }
  return std::sqrt(worst);
}

double dsc(const Mask& a, const Mask& b) {
  require_same_geometry(a.geom, b.geom);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    na += a.data[i];
    nb += b.data[i];
    both += a.data[i] & b.data[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

SymmetryResult symmetry_coefficient(const Mask& pred, const SimilarityTransform& align) {
  if (pred.empty()) throw Error(Errc::EmptyMask, "symmetry coefficient of an empty mask");
  const Mask c = apply_similarity(pred, align);
  const auto& d = c.geom.dims;
  const std::uint32_t half = d.w / 2;
  std::size_t nl = 0, nr = 0, both = 0;
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y)
      // x and its mirror w-1-x; for odd w the central slab is never visited.
      for (std::uint32_t x = 0; x < half; ++x) {
        const std::uint8_t l = c.at(x, y, z);
        const std::uint8_t r = c.at(d.w - 1 - x, y, z);
        nl += l;
        nr += r;
        both += l & r;
      }
  SymmetryResult res;
  if (nl == 0 || nr == 0) {
    res.empty_half = true;
    return res;
  }
  res.sc = 2.0 * double(both) / double(nl + nr);
  return res;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw Error(Errc::LengthMismatch, "Pearson correlation needs two series of equal length >= 2");
  const double n = double(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(Errc::ConstantSeries, "Pearson correlation of a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

WelchResult welch_t(std::span<const double> x, std::span<const double> y) {
  auto moments = [](std::span<const double> s) {
    if (s.size() < 2) throw Error(Errc::DegenerateSeries, "Welch test needs at least two samples per group");
    double m = 0.0;
    for (double v : s) m += v;
    m /= double(s.size());
    double ss = 0.0;
    for (double v : s) ss += (v - m) * (v - m);
    const double var = ss / double(s.size() - 1);
    if (!(var > 0.0)) throw Error(Errc::DegenerateSeries, "Welch test needs positive variance");
    return std::pair{m, var};
  };
  const auto [mx, vx] = moments(x);
  const auto [my, vy] = moments(y);
  const double ax = vx / double(x.size()), ay = vy / double(y.size());
  WelchResult r;
  r.t = (mx - my) / std::sqrt(ax + ay);
  r.df = (ax + ay) * (ax + ay) /
         (ax * ax / double(x.size() - 1) + ay * ay / double(y.size() - 1));
  // Two-sided tail of Student's t: I_{df/(df+t^2)}(df/2, 1/2).
  r.p = boost::math::ibeta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
  return r;
}

FpFnMap aggregate_fpfn(std::span<const FpFnCase> cases) {
  if (cases.empty()) throw Error(Errc::EmptyList, "no cases to aggregate");
  const Geometry g = cases.front().truth->geom;
  std::vector<std::uint32_t> fp(g.voxel_count(), 0), fn(g.voxel_count(), 0);
  for (const auto& c : cases) {
    require_same_geometry(c.pred->geom, g);
    require_same_geometry(c.truth->geom, g);
    const Mask p = apply_similarity(*c.pred, c.align);
    const Mask t = apply_similarity(*c.truth, c.align);
    for (std::size_t i = 0; i < fp.size(); ++i) {
      fp[i] += (p.data[i] && !t.data[i]) ? 1 : 0;
      fn[i] += (!p.data[i] && t.data[i]) ? 1 : 0;
    }
  }
  FpFnMap out{Volume(g), Volume(g), cases.size()};
  for (std::size_t i = 0; i < fp.size(); ++i) {
    out.fp.data[i] = float(double(fp[i]) / double(cases.size()));
    out.fn.data[i] = float(double(fn[i]) / double(cases.size()));
  }
  return out;
}

}  // namespace usbrain
