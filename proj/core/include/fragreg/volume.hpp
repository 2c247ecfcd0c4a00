// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Voxel grids and label maps, HU-to-attenuation conversion, trilinear
// sampling, isotropic resampling, and tight per-object sub-volume
// extraction.

#pragma once

#include "fragreg/geom.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace fragreg {

// Object labels stored in a LabelMap voxel.
enum class Label : std::uint8_t {
  background = 0,
  pelvis = 1,
  fragment = 2,
  cut = 3,
  femur_left = 4,
  femur_right = 5,
};

const char* label_name(Label l);
Label label_from_name(const std::string& name);
inline Label femur_label(Side s) {
  return s == Side::left ? Label::femur_left : Label::femur_right;
}

// Regular 3D scalar grid. Voxel (i,j,k) is centered at
// origin + spacing .* (i,j,k) in the frame named by `frame`; i is the
// fastest-varying index in memory.
template <typename T>
struct Grid3 {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();
  std::string frame = "volume";
  std::vector<T> voxels;

  static Grid3 make(int nx, int ny, int nz, const Vec3& spacing,
                    const Vec3& origin, T fill = T{}) {
    Grid3 g;
    g.dims = {nx, ny, nz};
    g.spacing = spacing;
    g.origin = origin;
    g.voxels.assign(std::size_t(nx) * ny * nz, fill);
    return g;
  }

  std::size_t size() const {
    return std::size_t(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return std::size_t(k) * dims[1] * dims[0] + std::size_t(j) * dims[0] + i;
  }
  T& at(int i, int j, int k) { return voxels[index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return voxels[index(i, j, k)]; }

  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }

  Vec3 voxel_center(int i, int j, int k) const {
    return origin + spacing.cwiseProduct(Vec3(i, j, k));
  }
  // Continuous voxel coordinates of a world point (voxel centers at
  // integers).
  Vec3 world_to_voxel(const Vec3& p) const {
    return (p - origin).cwiseQuotient(spacing);
  }
};

using Volume = Grid3<float>;

struct LabelMap : Grid3<std::uint8_t> {
  bool is(int i, int j, int k, Label l) const {
    return at(i, j, k) == static_cast<std::uint8_t>(l);
  }
  void set(int i, int j, int k, Label l) {
    at(i, j, k) = static_cast<std::uint8_t>(l);
  }
  std::size_t count(Label l) const;

  static LabelMap make_like(const Volume& v);
};

// Trilinear interpolation; points outside the grid sample as 0.
float trilinear_sample(const Volume& v, const Vec3& point_mm);

// Piecewise-linear HU -> linear attenuation (1/mm): 0 at and below -130 HU,
// then slope kAttenuationSlopePerHu per HU. No upper clamp.
inline constexpr double kAttenuationHuShift = -130.0;
inline constexpr double kAttenuationSlopePerHu = 0.02 / 1000.0;  // 1/mm per HU

float hu_to_attenuation_value(float hu);
Volume hu_to_attenuation(const Volume& hu);

// Trilinear resampling onto an isotropic grid covering the same physical
// extent.
Volume resample_isotropic(const Volume& v, double spacing_mm);

// A sub-volume cut out of a larger grid; origin is in the parent's frame.
struct ObjectVolume {
  Label label = Label::background;
  Volume volume;         // voxels outside the label zeroed
  Vec3 world_offset;     // == volume.origin
};

// Minimal axis-aligned bounding box of each requested label, returned as a
// sub-volume with everything outside the label zeroed. Throws if a
// requested label has no voxels.
std::vector<ObjectVolume> extract_tight_subvolumes(
    const Volume& v, const LabelMap& labels, const std::vector<Label>& wanted);

ObjectVolume extract_tight_subvolume(const Volume& v, const LabelMap& labels,
                                     Label label);

// Mask variant: keeps voxels whose label passes `keep`; used to build the
// full-bone surface mask for cut-line ray casting.
template <typename Pred>
Volume mask_volume(const LabelMap& labels, Pred keep) {
  Volume out = Volume::make(labels.dims[0], labels.dims[1], labels.dims[2],
                            labels.spacing, labels.origin, 0.f);
  out.frame = labels.frame;
  for (std::size_t i = 0; i < labels.voxels.size(); ++i) {
    out.voxels[i] = keep(static_cast<Label>(labels.voxels[i])) ? 1.f : 0.f;
  }
  return out;
}

}  // namespace fragreg
