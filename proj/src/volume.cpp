#include "usbrain/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "usbrain/error.hpp"

namespace usbrain {

namespace {

constexpr char kMagic[6] = {'V', 'O', 'L', 'B', '1', '\n'};
constexpr std::size_t kHeaderSize = 6 + 3 * 4 + 3 * 4 + 3 * 4 + 1 + 3;

static_assert(std::endian::native == std::endian::little,
              "VOLB1 IO assumes a little-endian host");

template <typename T>
void put(std::vector<char>& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

std::size_t dtype_size(DType t) { return t == DType::Float32 ? 4 : 1; }

double sample_clamped(const Volume& v, double x, double y, double z) {
  const auto& d = v.geom.dims;
  x = std::clamp(x, 0.0, double(d.w - 1));
  y = std::clamp(y, 0.0, double(d.h - 1));
  z = std::clamp(z, 0.0, double(d.d - 1));
  const auto x0 = std::size_t(std::floor(x));
  const auto y0 = std::size_t(std::floor(y));
  const auto z0 = std::size_t(std::floor(z));
  const auto x1 = std::min<std::size_t>(x0 + 1, d.w - 1);
  const auto y1 = std::min<std::size_t>(y0 + 1, d.h - 1);
  const auto z1 = std::min<std::size_t>(z0 + 1, d.d - 1);
  const double fx = x - double(x0), fy = y - double(y0), fz = z - double(z0);
  auto at = [&](std::size_t xi, std::size_t yi, std::size_t zi) { return double(v.at(xi, yi, zi)); };
  const double c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx;
  const double c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx;
  const double c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx;
  const double c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

// Samples v on a new grid laid over the same physical extent: output voxel i
// along an axis sits at extent_start + (i + 0.5) * new_spacing.
Volume resample_grid(const Volume& v, Dims dims, std::array<double, 3> new_spacing) {
  v.validate();
  Geometry g;
  g.dims = dims;
  std::array<double, 3> scale{};  // input index per output index
  std::array<double, 3> offset{};
  for (int a = 0; a < 3; ++a) {
    const double old_sp = v.geom.spacing[a];
    const double start = v.geom.origin[a] - 0.5 * old_sp;
    g.spacing[a] = float(new_spacing[a]);
    g.origin[a] = float(start + 0.5 * new_spacing[a]);
    scale[a] = new_spacing[a] / old_sp;
    offset[a] = 0.5 * scale[a] - 0.5;
  }
  Volume out(g, DType::Float32);
  for (std::uint32_t z = 0; z < dims.d; ++z) {
    const double sz = z * scale[2] + offset[2];
    for (std::uint32_t y = 0; y < dims.h; ++y) {
      const double sy = y * scale[1] + offset[1];
      for (std::uint32_t x = 0; x < dims.w; ++x) {
        const double sx = x * scale[0] + offset[0];
        out.at(x, y, z) = float(sample_clamped(v, sx, sy, sz));
      }
    }
  }
  return out;
}

template <typename Grid>
Grid crop_impl(const Grid& in, Dims target) {
  if (target.d == 0 || target.h == 0 || target.w == 0)
    throw Error(Errc::NonPositiveDim, "center_crop target must be positive");
  const std::array<std::int64_t, 3> in_dims{in.geom.dims.w, in.geom.dims.h, in.geom.dims.d};
  const std::array<std::int64_t, 3> out_dims{target.w, target.h, target.d};
  std::array<std::int64_t, 3> offset{};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t diff = in_dims[a] - out_dims[a];
    // Extra voxel removed from / padded on the high side in both cases.
    offset[a] = diff >= 0 ? diff / 2 : -((-diff) / 2);
  }
  Geometry g = in.geom;
  g.dims = target;
  for (int a = 0; a < 3; ++a)
    g.origin[a] = float(double(in.geom.origin[a]) + double(offset[a]) * in.geom.spacing[a]);
  Grid out(g);
  for (std::int64_t z = 0; z < out_dims[2]; ++z) {
    const std::int64_t sz = z + offset[2];
    if (sz < 0 || sz >= in_dims[2]) continue;
    for (std::int64_t y = 0; y < out_dims[1]; ++y) {
      const std::int64_t sy = y + offset[1];
      if (sy < 0 || sy >= in_dims[1]) continue;
      for (std::int64_t x = 0; x < out_dims[0]; ++x) {
        const std::int64_t sx = x + offset[0];
        if (sx < 0 || sx >= in_dims[0]) continue;
        out.at(x, y, z) = in.at(sx, sy, sz);
      }
    }
  }
  return out;
}

}  // namespace

void Geometry::validate() const {
  if (dims.d == 0 || dims.h == 0 || dims.w == 0)
    throw Error(Errc::NonPositiveDim, "volume dims must be positive");
  for (float s : spacing)
    if (!(s > 0.f) || !std::isfinite(s))
      throw Error(Errc::NonPositiveSpacing, "voxel spacing must be positive and finite");
}

Geometry make_geometry(Dims dims, float spacing, std::array<float, 3> origin) {
  Geometry g;
  g.dims = dims;
  g.spacing = {spacing, spacing, spacing};
  g.origin = origin;
  return g;
}

void Volume::validate() const {
  geom.validate();
  if (data.size() != geom.voxel_count())
    throw Error(Errc::LengthMismatch, "volume data length does not match dims");
}

std::size_t Mask::count() const {
  return std::size_t(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

void Mask::validate() const {
  geom.validate();
  if (data.size() != geom.voxel_count())
    throw Error(Errc::LengthMismatch, "mask data length does not match dims");
  for (auto v : data)
    if (v > 1) throw Error(Errc::InvalidConfig, "mask voxels must be 0 or 1");
}

bool bit_identical(const Volume& a, const Volume& b) {
  if (!(a.geom == b.geom) || a.dtype != b.dtype || a.data.size() != b.data.size()) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

std::size_t volb1_file_size(const Dims& dims, DType dtype) {
  return kHeaderSize + dims.count() * dtype_size(dtype);
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw Error(Errc::BadMagic, path.string() + " is not a VOLB1 file");
  if (bytes.size() < kHeaderSize)
    throw Error(Errc::TruncatedPayload, path.string() + ": header truncated");

  const char* p = bytes.data() + sizeof(kMagic);
  Geometry g;
  g.dims.d = get<std::uint32_t>(p);
  g.dims.h = get<std::uint32_t>(p + 4);
  g.dims.w = get<std::uint32_t>(p + 8);
  p += 12;
  for (int a = 0; a < 3; ++a) g.spacing[a] = get<float>(p + 4 * a);
  p += 12;
  for (int a = 0; a < 3; ++a) g.origin[a] = get<float>(p + 4 * a);
  p += 12;
  const auto raw_dtype = static_cast<std::uint8_t>(*p);
  if (raw_dtype > 1) throw Error(Errc::BadMagic, path.string() + ": unknown dtype");
  const auto dtype = static_cast<DType>(raw_dtype);
  if (g.dims.d == 0 || g.dims.h == 0 || g.dims.w == 0)
    throw Error(Errc::NonPositiveDim, path.string() + ": zero dimension");

  const std::size_t n = g.dims.count();
  const std::size_t payload = bytes.size() - kHeaderSize;
  if (payload < n * dtype_size(dtype))
    throw Error(Errc::TruncatedPayload,
                path.string() + ": expected " + std::to_string(n * dtype_size(dtype)) +
                    " payload bytes, found " + std::to_string(payload));

  Volume v;
  v.geom = g;
  v.dtype = dtype;
  v.data.resize(n);
  const char* payload_ptr = bytes.data() + kHeaderSize;
  if (dtype == DType::Float32) {
    std::memcpy(v.data.data(), payload_ptr, n * sizeof(float));
  } else {
    for (std::size_t i = 0; i < n; ++i) v.data[i] = float(static_cast<std::uint8_t>(payload_ptr[i]));
  }
  return v;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  v.validate();
  std::vector<char> out;
  out.reserve(volb1_file_size(v.geom.dims, v.dtype));
  out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
  put(out, v.geom.dims.d);
  put(out, v.geom.dims.h);
  put(out, v.geom.dims.w);
  for (float s : v.geom.spacing) put(out, s);
  for (float o : v.geom.origin) put(out, o);
  put(out, static_cast<std::uint8_t>(v.dtype));
  for (int i = 0; i < 3; ++i) put(out, std::uint8_t{0});
  if (v.dtype == DType::Float32) {
    const auto* p = reinterpret_cast<const char*>(v.data.data());
    out.insert(out.end(), p, p + v.data.size() * sizeof(float));
  } else {
    for (float x : v.data) {
      const float c = std::clamp(std::round(x), 0.f, 255.f);
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(c)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IoFailure, "cannot write " + path.string());
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw Error(Errc::IoFailure, "short write to " + path.string());
}

Mask to_mask(const Volume& v) {
  Mask m(v.geom);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] != 0.f && v.data[i] != 1.f)
      throw Error(Errc::InvalidConfig, "mask volume holds a value other than 0/1");
    m.data[i] = v.data[i] == 1.f ? 1 : 0;
  }
  return m;
}

Volume to_volume(const Mask& m) {
  Volume v(m.geom, DType::UInt8);
  for (std::size_t i = 0; i < m.data.size(); ++i) v.data[i] = m.data[i];
  return v;
}

Mask load_mask(const std::filesystem::path& path) { return to_mask(load_volume(path)); }

void save_mask(const Mask& m, const std::filesystem::path& path) { save_volume(to_volume(m), path); }

Volume center_crop(const Volume& v, Dims target) {
  Volume out = crop_impl(v, target);
  out.dtype = v.dtype;
  return out;
}

Mask center_crop(const Mask& m, Dims target) { return crop_impl(m, target); }

Volume resample_isotropic(const Volume& v, double new_spacing) {
  if (!(new_spacing > 0.0) || !std::isfinite(new_spacing))
    throw Error(Errc::NonPositiveSpacing, "resample spacing must be positive");
  v.validate();
  const std::array<std::uint32_t, 3> old{v.geom.dims.w, v.geom.dims.h, v.geom.dims.d};
  std::array<std::uint32_t, 3> nd{};
  for (int a = 0; a < 3; ++a) {
    const double extent = double(old[a]) * v.geom.spacing[a];
    nd[a] = std::max<std::uint32_t>(1, std::uint32_t(std::lround(extent / new_spacing)));
  }
  return resample_grid(v, Dims{nd[2], nd[1], nd[0]}, {new_spacing, new_spacing, new_spacing});
}

Volume resample_to_dims(const Volume& v, Dims dims) {
  v.validate();
  if (dims.d == 0 || dims.h == 0 || dims.w == 0)
    throw Error(Errc::NonPositiveDim, "resample target dims must be positive");
  if (dims == v.geom.dims) {
    Volume out = v;
    out.dtype = DType::Float32;
    return out;
  }
  const std::array<std::uint32_t, 3> old{v.geom.dims.w, v.geom.dims.h, v.geom.dims.d};
  const std::array<std::uint32_t, 3> nd{dims.w, dims.h, dims.d};
  std::array<double, 3> sp{};
  for (int a = 0; a < 3; ++a) sp[a] = double(old[a]) * v.geom.spacing[a] / double(nd[a]);
  return resample_grid(v, dims, sp);
}

Volume normalize_intensity(const Volume& v) {
  v.validate();
  const auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
  const double lo = *lo_it, hi = *hi_it;
  Volume out(v.geom, DType::Float32);
  if (hi > lo) {
    const double range = hi - lo;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      out.data[i] = float((double(v.data[i]) - lo) / range);
    }
    // Exact end points regardless of float rounding.
    out.data[std::size_t(lo_it - v.data.begin())] = 0.f;
    out.data[std::size_t(hi_it - v.data.begin())] = 1.f;
  }
  return out;
}

}  // namespace usbrain
