#pragma once

// Volume data model and the VOLB1 on-disk format.
//
// Voxel data is stored x-fastest: index = (z * h + y) * w + x, with dims
// ordered (d, h, w) = (z, y, x) and spacing / origin ordered (x, y, z).

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace usbrain {

enum class DType : std::uint8_t { Float32 = 0, UInt8 = 1 };

struct Dims {
  std::uint32_t d = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;

  std::size_t count() const { return std::size_t(d) * h * w; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Geometry {
  Dims dims;
  std::array<float, 3> spacing{1.f, 1.f, 1.f};  // mm / voxel, (x, y, z)
  std::array<float, 3> origin{0.f, 0.f, 0.f};   // world mm of voxel (0,0,0)

  std::size_t voxel_count() const { return dims.count(); }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (z * dims.h + y) * dims.w + x;
  }
  // World coordinate (mm) of a voxel center.
  std::array<double, 3> world(double x, double y, double z) const {
    return {origin[0] + x * double(spacing[0]), origin[1] + y * double(spacing[1]),
            origin[2] + z * double(spacing[2])};
  }
  // World coordinate of the grid center, midway between the extreme voxel
  // centers along every axis.
  std::array<double, 3> center() const {
    return world((dims.w - 1) / 2.0, (dims.h - 1) / 2.0, (dims.d - 1) / 2.0);
  }

  // Throws NonPositiveDim / NonPositiveSpacing.
  void validate() const;

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

Geometry make_geometry(Dims dims, float spacing, std::array<float, 3> origin = {0.f, 0.f, 0.f});

struct Volume {
  Geometry geom;
  DType dtype = DType::Float32;
  std::vector<float> data;

  Volume() = default;
  Volume(Geometry g, DType t = DType::Float32) : geom(g), dtype(t), data(g.voxel_count(), 0.f) {}

  float& at(std::size_t x, std::size_t y, std::size_t z) { return data[geom.index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return data[geom.index(x, y, z)]; }

  void validate() const;
};

struct Mask {
  Geometry geom;
  std::vector<std::uint8_t> data;

  Mask() = default;
  explicit Mask(Geometry g) : geom(g), data(g.voxel_count(), 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t z) { return data[geom.index(x, y, z)]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return data[geom.index(x, y, z)]; }

  std::size_t count() const;
  bool empty() const { return count() == 0; }
  void validate() const;
};

bool bit_identical(const Volume& a, const Volume& b);

Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& v, const std::filesystem::path& path);

// Masks travel as uint8 VOLB1 volumes whose voxels are exactly 0 or 1.
Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& m, const std::filesystem::path& path);

Mask to_mask(const Volume& v);
Volume to_volume(const Mask& m);

// Size in bytes of a VOLB1 file for the given geometry and dtype.
std::size_t volb1_file_size(const Dims& dims, DType dtype);

// Crops (or zero-pads) symmetrically about the grid center. When the size
// difference along an axis is odd, the extra voxel is removed from / added
// to the high-index side. World coordinates of retained voxels are kept.
Volume center_crop(const Volume& v, Dims target);
Mask center_crop(const Mask& m, Dims target);

// Trilinear resampling to isotropic spacing; the physical extent of the
// input grid is preserved and out-of-grid samples clamp to the border.
Volume resample_isotropic(const Volume& v, double new_spacing);

// Trilinear resampling onto `dims` voxels covering the same physical extent.
Volume resample_to_dims(const Volume& v, Dims dims);

// Min-max rescale to [0, 1]; a constant volume maps to all zeros.
Volume normalize_intensity(const Volume& v);

}  // namespace usbrain
