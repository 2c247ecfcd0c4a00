// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Digitally reconstructed radiographs: Beer-Lambert line integrals through
// posed attenuation volumes, multi-object compositing, Poisson fluoroscopy
// simulation, and log-correction.

#pragma once

#include "fragreg/camera.hpp"
#include "fragreg/volume.hpp"

#include <cstdint>
#include <vector>

namespace fragreg {

enum class ImageKind { line_integral, intensity, log_corrected };

struct RadiographImage {
  ImageKind kind = ImageKind::line_integral;
  int cols = 0;
  int rows = 0;
  std::vector<float> px;  // row-major, px[v*cols + u]
  CameraGeometry geometry;

  static RadiographImage make(ImageKind kind, const CameraGeometry& geom,
                              float fill = 0.f) {
    RadiographImage img;
    img.kind = kind;
    img.cols = geom.cols;
    img.rows = geom.rows;
    img.px.assign(std::size_t(geom.cols) * geom.rows, fill);
    img.geometry = geom;
    return img;
  }

  std::size_t size() const { return px.size(); }
  float& at(int u, int v) { return px[std::size_t(v) * cols + u]; }
  float at(int u, int v) const { return px[std::size_t(v) * cols + u]; }
};

// One rigid object in the scene: an attenuation volume and the pose mapping
// its volume coordinates into the world frame.
struct PosedObject {
  const Volume* attenuation = nullptr;
  RigidPose pose;
};

inline constexpr double kDrrStepMm = 1.0;
inline constexpr std::int64_t kPhotonCountDefault = 2000;

// Line-integral DRR at the detector grid downsampled by `downsample`
// (rendered natively at the reduced resolution). Rays march from the source
// in 1 mm steps with trilinear sampling; per-object integrals are summed.
RadiographImage cast_drr(const std::vector<PosedObject>& objects,
                         const CameraGeometry& cam, int downsample = 1);

// Poisson intensity image from a line-integral image:
// mean(x,y) = n0 * exp(-integral(x,y)). Deterministic per (seed, pixel),
// independent of threading.
RadiographImage poisson_intensity(const RadiographImage& line_integral,
                                  std::int64_t n0, std::uint64_t seed);

// Full fluoroscopy simulation: DRR through `att` at identity pose followed
// by Poisson sampling.
RadiographImage simulate_fluoro(const Volume& att, const CameraGeometry& cam,
                                std::int64_t n0, std::uint64_t seed);

// pixel <- -ln(max(pixel, 1) / n0); comparable to line-integral DRRs.
RadiographImage log_correct(const RadiographImage& intensity, std::int64_t n0);

}  // namespace fragreg
