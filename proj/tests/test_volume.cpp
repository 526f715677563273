#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "usbrain/error.hpp"
#include "usbrain/random.hpp"
#include "usbrain/volume.hpp"
#include "test_util.hpp"

using namespace usbrain;

namespace {

Volume random_volume(Dims d, std::uint64_t seed, float spacing = 1.f) {
  Volume v(make_geometry(d, spacing, {-3.f, 2.5f, 7.f}));
  Rng rng(seed);
  for (auto& x : v.data) x = float(rng.uniform(-5.0, 5.0));
  return v;
}

}  // namespace

TEST(Volb1, ZeroPayloadRoundTrip) {
  TempDir dir;
  Volume v(make_geometry(Dims{2, 2, 2}, 1.f));
  save_volume(v, dir / "z.volb");
  const Volume r = load_volume(dir / "z.volb");
  EXPECT_EQ(r.geom.dims, (Dims{2, 2, 2}));
  ASSERT_EQ(r.data.size(), 8u);
  for (float x : r.data) EXPECT_EQ(x, 0.f);
}

TEST(Volb1, RoundTripIsBitIdentical) {
  TempDir dir;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Volume v = random_volume(Dims{3, 4, 5}, seed, 0.6f);
    v.data[0] = -0.0f;
    v.data[1] = std::nanf("");
    save_volume(v, dir / "v.volb");
    EXPECT_TRUE(bit_identical(v, load_volume(dir / "v.volb")));
  }
  Volume u(make_geometry(Dims{2, 3, 4}, 0.5f), DType::UInt8);
  for (std::size_t i = 0; i < u.data.size(); ++i) u.data[i] = float(i * 10 % 256);
  save_volume(u, dir / "u.volb");
  EXPECT_TRUE(bit_identical(u, load_volume(dir / "u.volb")));
}

TEST(Volb1, HeaderLayoutMatchesFormat) {
  TempDir dir;
  Volume v(make_geometry(Dims{1, 2, 3}, 0.5f, {1.f, 2.f, 3.f}));
  v.data = {1, 2, 3, 4, 5, 6};
  save_volume(v, dir / "h.volb");
  const auto bytes = read_bytes(dir / "h.volb");
  ASSERT_EQ(bytes.size(), 46u + 6 * 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "VOLB1\n");
  std::uint32_t dims[3];
  std::memcpy(dims, bytes.data() + 6, 12);
  EXPECT_EQ(dims[0], 1u);
  EXPECT_EQ(dims[1], 2u);
  EXPECT_EQ(dims[2], 3u);
  float f[6];
  std::memcpy(f, bytes.data() + 18, 24);
  EXPECT_EQ(f[0], 0.5f);
  EXPECT_EQ(f[3], 1.f);
  EXPECT_EQ(f[5], 3.f);
  EXPECT_EQ(f[1], 0.5f);
  EXPECT_EQ(bytes[42], 0);  // dtype float32
  EXPECT_EQ(bytes[43] | bytes[44] | bytes[45], 0);
  float first;
  std::memcpy(&first, bytes.data() + 46, 4);
  EXPECT_EQ(first, 1.f);
}

TEST(Volb1, FileSizeFor160Cube) {
  // 6 magic + 12 dims + 12 spacing + 12 origin + 1 dtype + 3 reserved.
  const std::size_t header = 6 + 3 * 4 + 3 * 4 + 3 * 4 + 1 + 3;
  EXPECT_EQ(volb1_file_size(Dims{160, 160, 160}, DType::Float32), header + 160ull * 160 * 160 * 4);
  EXPECT_EQ(volb1_file_size(Dims{160, 160, 160}, DType::UInt8), header + 160ull * 160 * 160);
}

TEST(Volb1, Errors) {
  TempDir dir;
  Volume v(make_geometry(Dims{4, 4, 4}, 1.f));
  save_volume(v, dir / "t.volb");
  auto bytes = read_bytes(dir / "t.volb");
  bytes.resize(46 + 60 * 4);
  write_bytes(dir / "short.volb", bytes);
  EXPECT_ERRC(load_volume(dir / "short.volb"), Errc::TruncatedPayload);

  bytes[0] = 'X';
  write_bytes(dir / "magic.volb", bytes);
  EXPECT_ERRC(load_volume(dir / "magic.volb"), Errc::BadMagic);

  auto zero = read_bytes(dir / "t.volb");
  std::memset(zero.data() + 6, 0, 4);
  write_bytes(dir / "zero.volb", zero);
  EXPECT_ERRC(load_volume(dir / "zero.volb"), Errc::NonPositiveDim);

  EXPECT_ERRC(save_volume(v, dir / "missing" / "sub" / "x.volb"), Errc::IoFailure);
  EXPECT_ERRC(load_volume(dir / "absent.volb"), Errc::IoFailure);
}

TEST(Volb1, MaskRoundTrip) {
  TempDir dir;
  Mask m(make_geometry(Dims{3, 3, 3}, 0.6f));
  m.at(1, 1, 1) = 1;
  m.at(0, 2, 1) = 1;
  save_mask(m, dir / "m.volb");
  const Mask r = load_mask(dir / "m.volb");
  EXPECT_EQ(r.geom, m.geom);
  EXPECT_EQ(r.data, m.data);
}

TEST(CenterCrop, SixToFourKeepsMiddle) {
  Volume v(make_geometry(Dims{6, 6, 6}, 1.f));
  for (std::size_t z = 0; z < 6; ++z)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) v.at(x, y, z) = float(100 * z + 10 * y + x);
  const Volume c = center_crop(v, Dims{4, 4, 4});
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(c.at(x, y, z), v.at(x + 1, y + 1, z + 1));
  EXPECT_EQ(c.geom.world(0, 0, 0), v.geom.world(1, 1, 1));
}

TEST(CenterCrop, IdentityAndIdempotent) {
  const Volume v = random_volume(Dims{4, 4, 4}, 3);
  EXPECT_TRUE(bit_identical(center_crop(v, Dims{4, 4, 4}), v));
  const Volume w = random_volume(Dims{7, 6, 9}, 4);
  const Volume once = center_crop(w, Dims{4, 5, 3});
  EXPECT_TRUE(bit_identical(center_crop(once, Dims{4, 5, 3}), once));
}

TEST(CenterCrop, PadsWithHighSideTie) {
  Volume v(make_geometry(Dims{3, 3, 3}, 1.f));
  for (auto& x : v.data) x = 1.f;
  const Volume p = center_crop(v, Dims{5, 5, 5});
  for (std::size_t z = 0; z < 5; ++z)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        const bool inside = x >= 1 && x <= 3 && y >= 1 && y <= 3 && z >= 1 && z <= 3;
        EXPECT_EQ(p.at(x, y, z), inside ? 1.f : 0.f);
      }
  // Odd difference: the extra padding voxel goes to the high side.
  const Volume q = center_crop(v, Dims{3, 3, 4});
  EXPECT_EQ(q.at(0, 1, 1), 1.f);
  EXPECT_EQ(q.at(3, 1, 1), 0.f);
  // Odd difference when cropping: the extra removed voxel is taken from the high side.
  Volume r(make_geometry(Dims{1, 1, 4}, 1.f));
  r.data = {0, 1, 2, 3};
  EXPECT_EQ(center_crop(r, Dims{1, 1, 3}).data, (std::vector<float>{0, 1, 2}));
}

TEST(CenterCrop, WorldCoordinatesPreserved) {
  const Volume v = random_volume(Dims{9, 8, 7}, 5, 0.6f);
  const Volume c = center_crop(v, Dims{4, 11, 6});
  // Find a voxel retained in both: match by world coordinate.
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 11; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        const auto w = c.geom.world(double(x), double(y), double(z));
        const double sx = (w[0] - v.geom.origin[0]) / v.geom.spacing[0];
        const double sy = (w[1] - v.geom.origin[1]) / v.geom.spacing[1];
        const double sz = (w[2] - v.geom.origin[2]) / v.geom.spacing[2];
        const long ix = std::lround(sx), iy = std::lround(sy), iz = std::lround(sz);
        ASSERT_NEAR(sx, double(ix), 1e-4);
        if (ix < 0 || iy < 0 || iz < 0 || ix >= 7 || iy >= 8 || iz >= 9) {
          EXPECT_EQ(c.at(x, y, z), 0.f);
        } else {
          EXPECT_EQ(c.at(x, y, z), v.at(std::size_t(ix), std::size_t(iy), std::size_t(iz)));
        }
      }
}

TEST(Resample, IdentityAtSameSpacing) {
  const Volume v = random_volume(Dims{5, 6, 7}, 6, 0.6f);
  const Volume r = resample_isotropic(v, double(v.geom.spacing[0]));
  ASSERT_EQ(r.geom.dims, v.geom.dims);
  for (std::size_t i = 0; i < v.data.size(); ++i) EXPECT_NEAR(r.data[i], v.data[i], 1e-6);
}

TEST(Resample, ConstantStaysConstant) {
  Volume v(make_geometry(Dims{5, 4, 3}, 0.7f));
  for (auto& x : v.data) x = 2.25f;
  for (double s : {0.3, 0.5, 1.1, 2.0}) {
    const Volume r = resample_isotropic(v, s);
    for (float x : r.data) EXPECT_EQ(x, 2.25f);
  }
}

TEST(Resample, DimsRule) {
  Volume v(make_geometry(Dims{10, 7, 5}, 1.f));
  v.geom.spacing = {0.5f, 1.f, 2.f};
  const Volume r = resample_isotropic(v, 1.0);
  EXPECT_EQ(r.geom.dims, (Dims{20, 7, 3}));  // round(10*2), round(7*1), round(5*0.5) = 3 (2.5 rounds up)
  for (float s : r.geom.spacing) EXPECT_EQ(s, 1.f);
  EXPECT_ERRC(resample_isotropic(v, 0.0), Errc::NonPositiveSpacing);
  EXPECT_ERRC(resample_isotropic(v, -1.0), Errc::NonPositiveSpacing);
  const Volume tiny = resample_isotropic(v, 100.0);
  EXPECT_EQ(tiny.geom.dims, (Dims{1, 1, 1}));
}

TEST(Resample, LinearRampMatchesAnalytic) {
  // f = x (in voxel units of spacing 1); at spacing 0.5 the sample i sits at
  // world offset 0.25 + 0.5 i from the grid's low edge, i.e. source index
  // 0.5 i - 0.25.
  Volume v(make_geometry(Dims{4, 4, 8}, 1.f));
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 8; ++x) v.at(x, y, z) = float(x);
  const Volume r = resample_isotropic(v, 0.5);
  ASSERT_EQ(r.geom.dims.w, 16u);
  for (std::size_t z = 0; z < r.geom.dims.d; ++z)
    for (std::size_t y = 0; y < r.geom.dims.h; ++y)
      for (std::size_t i = 1; i + 1 < 16; ++i) EXPECT_NEAR(r.at(i, y, z), 0.5 * double(i) - 0.25, 1e-6);
}

TEST(Resample, StaysWithinInputRange) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Volume v = random_volume(Dims{5, 6, 4}, seed, 0.9f);
    const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
    for (double s : {0.4, 0.75, 1.6}) {
      const Volume r = resample_isotropic(v, s);
      for (float x : r.data) {
        EXPECT_GE(x, *lo);
        EXPECT_LE(x, *hi);
      }
    }
  }
}

TEST(Normalize, Examples) {
  Volume v(make_geometry(Dims{1, 1, 3}, 1.f));
  v.data = {0.f, 127.f, 255.f};
  const Volume n = normalize_intensity(v);
  EXPECT_EQ(n.data[0], 0.f);
  EXPECT_NEAR(n.data[1], 127.0 / 255.0, 1e-7);
  EXPECT_EQ(n.data[2], 1.f);

  for (auto& x : v.data) x = 4.f;
  for (float x : normalize_intensity(v).data) EXPECT_EQ(x, 0.f);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Volume r = normalize_intensity(random_volume(Dims{3, 3, 3}, seed));
    EXPECT_EQ(*std::min_element(r.data.begin(), r.data.end()), 0.f);
    EXPECT_EQ(*std::max_element(r.data.begin(), r.data.end()), 1.f);
  }
}

TEST(Geometry, Validation) {
  EXPECT_ERRC(make_geometry(Dims{0, 1, 1}, 1.f).validate(), Errc::NonPositiveDim);
  EXPECT_ERRC(make_geometry(Dims{1, 1, 1}, 0.f).validate(), Errc::NonPositiveSpacing);
  Geometry g = make_geometry(Dims{2, 3, 4}, 1.f);
  EXPECT_EQ(g.index(1, 2, 1), (1u * 3 + 2) * 4 + 1);
}
