#pragma once

// Ellipsoid approximation of a brain probability map.

#include <filesystem>
#include <string>

#include "usbrain/transform.hpp"
#include "usbrain/volume.hpp"

namespace usbrain {

struct Ellipsoid {
  Vec3 center = Vec3::Zero();      // world mm
  Vec3 radii = Vec3::Ones();       // mm, along the columns of `axes`
  Mat3 axes = Mat3::Identity();    // orthonormal, det +1, descending extent
  bool degenerate = false;         // moment matrix was (nearly) singular
};

// Moment fit: probability-weighted centroid, covariance eigenvectors in
// descending eigenvalue order, radii = sqrt(5 * eigenvalue) floored at the
// smallest voxel spacing. Flags `degenerate` when the smallest/largest
// eigenvalue ratio is below 1e-9. Throws ZeroMass.
Ellipsoid fit_ellipsoid(const Volume& prob);

// Voxel is set iff its world center lies inside the ellipsoid.
Mask rasterize_ellipsoid(const Ellipsoid& e, const Geometry& grid);

// key=value text: center, radii, euler (degrees, intrinsic Z-Y-X).
std::string to_key_values(const Ellipsoid& e);
Ellipsoid parse_ellipsoid(const std::string& text);

}  // namespace usbrain
