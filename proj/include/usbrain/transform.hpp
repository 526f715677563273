#pragma once

// Similarity transforms acting on world coordinates about a volume's center.
//
// With c the world center of the grid, a transform maps
//   x -> scale * R * (x - c) + c + translation,
// R = Rz(alpha) * Ry(beta) * Rx(gamma) (intrinsic Z-Y-X, degrees).

#include <Eigen/Core>
#include <array>
#include <string>

#include "usbrain/volume.hpp"

namespace usbrain {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct EulerAngles {
  double alpha = 0.0;  // about z, degrees
  double beta = 0.0;   // about y, degrees, in [-90, 90]
  double gamma = 0.0;  // about x, degrees
  bool gimbal_locked = false;
};

Mat3 rotation_from_euler(double alpha_deg, double beta_deg, double gamma_deg);

// Intrinsic Z-Y-X decomposition. At gimbal lock (|cos beta| < 1e-7) gamma is
// set to 0, the remaining rotation is folded into alpha and the result is
// flagged. Throws NotARotation when R is not orthonormal with det +1 (1e-6).
EulerAngles euler_from_rotation(const Mat3& r);

class SimilarityTransform {
 public:
  SimilarityTransform() = default;
  // Throws InvalidTransform for non-positive or non-finite scale.
  SimilarityTransform(EulerAngles euler, double scale, Vec3 translation);
  SimilarityTransform(const Mat3& rotation, double scale, Vec3 translation);

  static SimilarityTransform identity() { return {}; }

  // Euler angles used at construction, or extracted from the rotation when
  // the transform was derived (inverse, composition).
  const EulerAngles& euler() const { return euler_; }
  const Mat3& rotation() const { return rotation_; }
  double scale() const { return scale_; }
  const Vec3& translation() const { return translation_; }

  // Action on a world point for a grid centered at `center`.
  Vec3 apply(const Vec3& p, const Vec3& center) const;

 private:
  EulerAngles euler_;
  Mat3 rotation_ = Mat3::Identity();
  double scale_ = 1.0;
  Vec3 translation_ = Vec3::Zero();
};

SimilarityTransform invert_similarity(const SimilarityTransform& t);
// Acts as b first, then a.
SimilarityTransform compose_similarity(const SimilarityTransform& a, const SimilarityTransform& b);

// Resamples the input onto its own grid so content moves by t: output(y) =
// input(t^-1(y)). Masks use nearest neighbour, volumes trilinear; samples
// falling outside the grid are 0.
Mask apply_similarity(const Mask& m, const SimilarityTransform& t);
Volume apply_similarity(const Volume& v, const SimilarityTransform& t);

// Flat key=value serialisation (euler, scale, translation), full precision.
std::string to_key_values(const SimilarityTransform& t);

Vec3 grid_center(const Geometry& g);

}  // namespace usbrain
