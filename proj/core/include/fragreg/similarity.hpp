// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Image pyramid and the patch-based gradient NCC similarity. Scores are
// negated NCC means, so lower is better and -1 is a perfect match.

#pragma once

#include "fragreg/projector.hpp"

#include <vector>

namespace fragreg {

struct PatchSimilarityConfig {
  // Patch diameter measured in full-resolution pixels; the effective
  // diameter at a pyramid level is round(diameter / downsample_factor).
  int patch_diameter_full_res = 83;
  // 0 = half the effective diameter (overlapping grid).
  int patch_stride = 0;
  int downsample_factor = 1;

  int effective_diameter() const;
  int effective_stride() const;
  void validate() const;
};

// Gaussian pre-filter followed by decimation; factor 1 is the identity.
// The coarse pixel i samples fine coordinate i*factor + (factor-1)/2,
// matching CameraGeometry::downsampled.
RadiographImage downsample(const RadiographImage& img, int factor);

// 3x3 Sobel gradients with replicate padding. Returns {gx, gy} rasters.
void sobel_gradients(const RadiographImage& img, std::vector<float>& gx,
                     std::vector<float>& gy);

// Scores many moving images against one fixed image: the fixed-side Sobel
// gradients and their patch statistics are precomputed once.
class PatchGradNccScorer {
 public:
  PatchGradNccScorer(const RadiographImage& fixed,
                     const PatchSimilarityConfig& cfg);

  // Mean patch NCC over both gradient channels, negated. Patches whose
  // gradient variance is zero (relative to their raw second moment) are
  // excluded; if every patch is excluded the score is 0.
  double score(const RadiographImage& moving) const;

  int cols() const { return cols_; }
  int rows() const { return rows_; }

 private:
  struct PatchRect {
    int x0, y0;
  };

  int cols_ = 0;
  int rows_ = 0;
  int diameter_ = 0;
  std::vector<PatchRect> patches_;
  std::vector<float> gx_f_, gy_f_;
  // Summed-area tables over fixed gradients and their squares.
  std::vector<double> sat_fx_, sat_fy_, sat_fxx_, sat_fyy_;
};

// One-shot convenience wrapper around PatchGradNccScorer.
double patch_grad_ncc(const RadiographImage& fixed,
                      const RadiographImage& moving,
                      const PatchSimilarityConfig& cfg);

}  // namespace fragreg
