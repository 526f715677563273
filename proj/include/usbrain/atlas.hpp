#pragma once

// Synthetic atlas surrogate, atlas-based annotation and ultrasound-like
// phantom generation.
//
// Canonical frame: x is left-right (the mid-sagittal plane is the grid's
// mid-x plane), y is posterior-anterior (occipitofrontal axis), z is
// inferior-superior. The probe sits on the +z side of every scan.

#include <cstdint>
#include <filesystem>
#include <string>

#include "usbrain/random.hpp"
#include "usbrain/transform.hpp"
#include "usbrain/volume.hpp"

namespace usbrain {

inline constexpr double kGaMinWeeks = 14.0;
inline constexpr double kGaMaxWeeks = 31.0;
inline constexpr double kReferenceGaWeeks = 22.0;
inline constexpr double kReferenceOfdMm = 62.0;

// Size factor relative to 22 weeks; g(22) = 1, strictly increasing.
double growth_factor(double ga_weeks);

// 32^3 voxels at 3 mm (a 96 mm field), centered on the world origin.
Geometry desk_grid();

// Canonical-pose brain mask: two mirrored half-ellipsoid hemispheres plus a
// cerebellar lobe. Occipitofrontal diameter 62 mm * g(ga); exactly mirror
// symmetric about the mid-x plane. Throws GaOutOfRange.
Mask make_atlas_mask(double ga_weeks, const Geometry& grid);

// Extent of a mask along the grid's y axis in mm (slices touched * spacing).
double extent_y_mm(const Mask& m);

// The atlas moved into scan coordinates: apply_similarity(atlas, align^-1),
// where `align` maps the scan into canonical pose.
Mask annotate_scan(const Mask& atlas, const SimilarityTransform& align);

struct PhantomSpec {
  double ga_weeks = kReferenceGaWeeks;
  SimilarityTransform pose;  // scan -> canonical
  double noise_level = 0.3;
  double occlusion_strength = 0.5;
  std::uint64_t seed = 0;

  // Throws GaOutOfRange / InvalidConfig.
  void validate() const;
};

struct Phantom {
  Volume volume;
  Mask truth;
  SimilarityTransform pose;
};

// Deterministic per spec. Volume: bright 2-voxel skull rim on the truth
// mask, mid-intensity interior, proximal hemisphere attenuated by
// (1 - occlusion_strength); with noise_level > 0 also interior texture,
// background clutter blobs, 1-3 reverberation arcs above the skull and
// multiplicative speckle, all scaled by noise_level.
Phantom generate_phantom(const PhantomSpec& spec, const Geometry& grid);

// Which canonical hemisphere faces the probe: -1 for x < mid, +1 otherwise.
int proximal_side(const SimilarityTransform& pose);

struct PoseRandomization {
  bool rotate = true;              // uniformly distributed rotations
  double max_translation_mm = 2.0; // per axis
  double scale_jitter = 0.03;      // scale in [1 - j, 1 + j]
};

SimilarityTransform random_pose(Rng& rng, const PoseRandomization& opts);

// key=value sidecar records.
std::string to_key_values(const PhantomSpec& spec);
PhantomSpec parse_phantom_spec(const std::string& text);
void save_phantom_spec(const PhantomSpec& spec, const std::filesystem::path& path);
PhantomSpec load_phantom_spec(const std::filesystem::path& path);

}  // namespace usbrain
