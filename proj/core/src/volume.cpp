// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fragreg {

const char* label_name(Label l) {
  switch (l) {
    case Label::background: return "background";
    case Label::pelvis: return "pelvis";
    case Label::fragment: return "fragment";
    case Label::cut: return "cut";
    case Label::femur_left: return "femur-l";
    case Label::femur_right: return "femur-r";
  }
  return "unknown";
}

Label label_from_name(const std::string& name) {
  for (Label l : {Label::background, Label::pelvis, Label::fragment,
                  Label::cut, Label::femur_left, Label::femur_right}) {
    if (name == label_name(l)) return l;
  }
  throw std::invalid_argument("unknown label name: " + name);
}

std::size_t LabelMap::count(Label l) const {
  const auto v = static_cast<std::uint8_t>(l);
  return std::count(voxels.begin(), voxels.end(), v);
}

LabelMap LabelMap::make_like(const Volume& v) {
  LabelMap m;
  m.dims = v.dims;
  m.spacing = v.spacing;
  m.origin = v.origin;
  m.frame = v.frame;
  m.voxels.assign(v.size(), 0);
  return m;
}

float trilinear_sample(const Volume& v, const Vec3& point_mm) {
  const Vec3 c = v.world_to_voxel(point_mm);
  const double x = c.x(), y = c.y(), z = c.z();
  // Outside the voxel-center lattice entirely: 0.
  if (x <= -1.0 || y <= -1.0 || z <= -1.0 || x >= v.dims[0] || y >= v.dims[1] ||
      z >= v.dims[2]) {
    return 0.f;
  }
  const int i0 = static_cast<int>(std::floor(x));
  const int j0 = static_cast<int>(std::floor(y));
  const int k0 = static_cast<int>(std::floor(z));
  const double fx = x - i0, fy = y - j0, fz = z - k0;

  auto fetch = [&](int i, int j, int k) -> double {
    return v.in_bounds(i, j, k) ? v.at(i, j, k) : 0.0;
  };

  const double c00 = fetch(i0, j0, k0) * (1 - fx) + fetch(i0 + 1, j0, k0) * fx;
  const double c10 = fetch(i0, j0 + 1, k0) * (1 - fx) + fetch(i0 + 1, j0 + 1, k0) * fx;
  const double c01 = fetch(i0, j0, k0 + 1) * (1 - fx) + fetch(i0 + 1, j0, k0 + 1) * fx;
  const double c11 = fetch(i0, j0 + 1, k0 + 1) * (1 - fx) + fetch(i0 + 1, j0 + 1, k0 + 1) * fx;

  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return static_cast<float>(c0 * (1 - fz) + c1 * fz);
}

float hu_to_attenuation_value(float hu) {
  const double above = double(hu) - kAttenuationHuShift;
  return above <= 0.0 ? 0.f : static_cast<float>(above * kAttenuationSlopePerHu);
}

Volume hu_to_attenuation(const Volume& hu) {
  Volume out = hu;
  for (auto& v : out.voxels) v = hu_to_attenuation_value(v);
  return out;
}

Volume resample_isotropic(const Volume& v, double spacing_mm) {
  if (spacing_mm <= 0) {
    throw std::invalid_argument("resample_isotropic: spacing must be > 0");
  }
  // Physical extent spanned by the voxel centers.
  const Vec3 extent = v.spacing.cwiseProduct(
      Vec3(v.dims[0] - 1, v.dims[1] - 1, v.dims[2] - 1));
  std::array<int, 3> dims;
  for (int a = 0; a < 3; ++a) {
    dims[a] = std::max(1, static_cast<int>(std::floor(extent[a] / spacing_mm)) + 1);
  }
  Volume out = Volume::make(dims[0], dims[1], dims[2], Vec3::Constant(spacing_mm),
                            v.origin, 0.f);
  out.frame = v.frame;
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i) {
        out.at(i, j, k) = trilinear_sample(v, out.voxel_center(i, j, k));
      }
    }
  }
  return out;
}

ObjectVolume extract_tight_subvolume(const Volume& v, const LabelMap& labels,
                                     Label label) {
  if (v.dims != labels.dims) {
    throw std::invalid_argument("extract_tight_subvolume: grid mismatch");
  }
  int lo[3] = {v.dims[0], v.dims[1], v.dims[2]};
  int hi[3] = {-1, -1, -1};
  const auto lv = static_cast<std::uint8_t>(label);
  for (int k = 0; k < v.dims[2]; ++k) {
    for (int j = 0; j < v.dims[1]; ++j) {
      for (int i = 0; i < v.dims[0]; ++i) {
        if (labels.at(i, j, k) != lv) continue;
        lo[0] = std::min(lo[0], i);
        lo[1] = std::min(lo[1], j);
        lo[2] = std::min(lo[2], k);
        hi[0] = std::max(hi[0], i);
        hi[1] = std::max(hi[1], j);
        hi[2] = std::max(hi[2], k);
      }
    }
  }
  if (hi[0] < 0) {
    throw std::runtime_error(std::string("extract_tight_subvolume: empty label ") +
                             label_name(label));
  }

  ObjectVolume obj;
  obj.label = label;
  obj.volume = Volume::make(hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1,
                            v.spacing,
                            v.origin + v.spacing.cwiseProduct(Vec3(lo[0], lo[1], lo[2])),
                            0.f);
  obj.volume.frame = v.frame;
  for (int k = lo[2]; k <= hi[2]; ++k) {
    for (int j = lo[1]; j <= hi[1]; ++j) {
      for (int i = lo[0]; i <= hi[0]; ++i) {
        if (labels.at(i, j, k) == lv) {
          obj.volume.at(i - lo[0], j - lo[1], k - lo[2]) = v.at(i, j, k);
        }
      }
    }
  }
  obj.world_offset = obj.volume.origin;
  return obj;
}

std::vector<ObjectVolume> extract_tight_subvolumes(
    const Volume& v, const LabelMap& labels, const std::vector<Label>& wanted) {
  std::vector<ObjectVolume> out;
  out.reserve(wanted.size());
  for (Label l : wanted) out.push_back(extract_tight_subvolume(v, labels, l));
  return out;
}

}  // namespace fragreg
