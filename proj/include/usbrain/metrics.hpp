#pragma once

// Segmentation metrics (ED, HD, DSC, SC), thresholding, and the two
// statistics used by the reports (Pearson r, Welch's t-test).

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "usbrain/transform.hpp"
#include "usbrain/volume.hpp"

namespace usbrain {

// p >= t per voxel; t == 1 is read as p >= 1 - 1e-6 so saturated sigmoid
// outputs still count.
Mask threshold_mask(const Volume& prob, double t);

// Distance between world-space centroids, mm. Throws EmptyMask.
double centroid_ed(const Mask& a, const Mask& b);

// Voxels with at least one face neighbour outside the mask (grid border
// counts as outside).
Mask surface_voxels(const Mask& m);

// Squared Euclidean distance (mm^2) from every voxel center to the nearest
// set voxel of `m`; +inf everywhere when `m` is empty.
std::vector<double> squared_distance_transform(const Mask& m);

// Symmetric Hausdorff distance over surface voxel centers, mm.
// Throws EmptyMask, ShapeMismatch.
double hausdorff(const Mask& a, const Mask& b);

// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dsc(const Mask& a, const Mask& b);

struct SymmetryResult {
  double sc = 0.0;
  bool empty_half = false;
};

// Aligns `pred` to canonical pose, mirrors the right half (x >= w/2 for even
// w; the central slab is dropped for odd w) and returns DSC against the left
// half. Throws EmptyMask for an empty prediction.
SymmetryResult symmetry_coefficient(const Mask& pred, const SimilarityTransform& align);

// Throws LengthMismatch, ConstantSeries.
double pearson_r(std::span<const double> x, std::span<const double> y);

struct WelchResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
};

// Two-sided Welch test. Throws DegenerateSeries.
WelchResult welch_t(std::span<const double> x, std::span<const double> y);

struct MetricsReport {
  std::string case_id;
  double ga_weeks = 0.0;
  std::array<double, 3> euler{0.0, 0.0, 0.0};
  double threshold = 0.5;
  std::optional<double> ed_mm;  // missing for empty predictions
  std::optional<double> hd_mm;
  double dsc = 0.0;
  double sc = 0.0;
  bool empty_prediction = false;
};

struct FpFnCase {
  const Mask* pred = nullptr;
  const Mask* truth = nullptr;
  SimilarityTransform align;
};

struct FpFnMap {
  Volume fp;
  Volume fn;
  std::size_t count = 0;
};

// Per-voxel FP / FN rates in canonical pose. Counts are accumulated as
// integers, so the result does not depend on case order. Throws EmptyList.
FpFnMap aggregate_fpfn(std::span<const FpFnCase> cases);

}  // namespace usbrain
