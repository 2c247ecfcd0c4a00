// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fragreg {

int PatchSimilarityConfig::effective_diameter() const {
  const int d = static_cast<int>(
      std::lround(double(patch_diameter_full_res) / downsample_factor));
  return std::max(3, d);
}

int PatchSimilarityConfig::effective_stride() const {
  if (patch_stride > 0) return patch_stride;
  return std::max(1, effective_diameter() / 2);
}

void PatchSimilarityConfig::validate() const {
  if (patch_diameter_full_res < 3) {
    throw std::invalid_argument("patch diameter must be >= 3 pixels");
  }
  if (downsample_factor < 1) {
    throw std::invalid_argument("downsample factor must be >= 1");
  }
  if (effective_diameter() < 3) {
    throw std::invalid_argument("effective patch diameter must be >= 3 pixels");
  }
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i / sigma) * (i / sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline int reflect_clamp(int i, int n) { return std::clamp(i, 0, n - 1); }

}  // namespace

RadiographImage downsample(const RadiographImage& img, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (factor == 1) return img;

  const int cols = img.cols, rows = img.rows;
  const auto k = gaussian_kernel((factor - 1) / 2.0);
  const int radius = static_cast<int>(k.size() / 2);

  // Separable blur with replicate padding.
  std::vector<float> tmp(img.px.size()), blurred(img.px.size());
  for (int v = 0; v < rows; ++v) {
    const float* src = img.px.data() + std::size_t(v) * cols;
    float* dst = tmp.data() + std::size_t(v) * cols;
    for (int u = 0; u < cols; ++u) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[i + radius] * src[reflect_clamp(u + i, cols)];
      }
      dst[u] = static_cast<float>(acc);
    }
  }
  for (int v = 0; v < rows; ++v) {
    for (int u = 0; u < cols; ++u) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[i + radius] * tmp[std::size_t(reflect_clamp(v + i, rows)) * cols + u];
      }
      blurred[std::size_t(v) * cols + u] = static_cast<float>(acc);
    }
  }

  RadiographImage out;
  out.kind = img.kind;
  out.cols = cols / factor;
  out.rows = rows / factor;
  if (img.geometry.cols == cols && img.geometry.rows == rows) {
    out.geometry = img.geometry.downsampled(factor);
  } else {
    out.geometry.cols = out.cols;
    out.geometry.rows = out.rows;
  }
  out.px.resize(std::size_t(out.cols) * out.rows);

  // Coarse pixel centers sit at fine coordinate i*factor + (factor-1)/2,
  // which is half-integer for even factors: bilinear sample.
  const double off = (factor - 1) / 2.0;
  for (int v = 0; v < out.rows; ++v) {
    const double fy = v * factor + off;
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    for (int u = 0; u < out.cols; ++u) {
      const double fx = u * factor + off;
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      auto px = [&](int x, int y) {
        return double(blurred[std::size_t(reflect_clamp(y, rows)) * cols +
                              reflect_clamp(x, cols)]);
      };
      const double val = (1 - wy) * ((1 - wx) * px(x0, y0) + wx * px(x0 + 1, y0)) +
                         wy * ((1 - wx) * px(x0, y0 + 1) + wx * px(x0 + 1, y0 + 1));
      out.px[std::size_t(v) * out.cols + u] = static_cast<float>(val);
    }
  }
  return out;
}

void sobel_gradients(const RadiographImage& img, std::vector<float>& gx,
                     std::vector<float>& gy) {
  const int cols = img.cols, rows = img.rows;
  gx.resize(img.px.size());
  gy.resize(img.px.size());
  auto at = [&](int u, int v) {
    return double(img.px[std::size_t(reflect_clamp(v, rows)) * cols +
                         reflect_clamp(u, cols)]);
  };
  for (int v = 0; v < rows; ++v) {
    for (int u = 0; u < cols; ++u) {
      const double p00 = at(u - 1, v - 1), p10 = at(u, v - 1), p20 = at(u + 1, v - 1);
      const double p01 = at(u - 1, v), p21 = at(u + 1, v);
      const double p02 = at(u - 1, v + 1), p12 = at(u, v + 1), p22 = at(u + 1, v + 1);
      const std::size_t i = std::size_t(v) * cols + u;
      gx[i] = static_cast<float>((p20 + 2 * p21 + p22) - (p00 + 2 * p01 + p02));
      gy[i] = static_cast<float>((p02 + 2 * p12 + p22) - (p00 + 2 * p10 + p20));
    }
  }
}

namespace {

// sat has (cols+1) x (rows+1) entries; sat(x, y) = sum over [0,x) x [0,y).
void build_sat(const std::vector<float>& a, const std::vector<float>* b,
               int cols, int rows, std::vector<double>& sat) {
  sat.assign(std::size_t(cols + 1) * (rows + 1), 0.0);
  for (int v = 0; v < rows; ++v) {
    double row_sum = 0;
    const std::size_t r0 = std::size_t(v) * cols;
    double* out = sat.data() + std::size_t(v + 1) * (cols + 1);
    const double* prev = sat.data() + std::size_t(v) * (cols + 1);
    for (int u = 0; u < cols; ++u) {
      row_sum += b ? double(a[r0 + u]) * double((*b)[r0 + u]) : double(a[r0 + u]);
      out[u + 1] = prev[u + 1] + row_sum;
    }
  }
}

inline double sat_rect(const std::vector<double>& sat, int cols, int x0, int y0,
                       int x1, int y1) {
  const int w = cols + 1;
  return sat[std::size_t(y1) * w + x1] - sat[std::size_t(y0) * w + x1] -
         sat[std::size_t(y1) * w + x0] + sat[std::size_t(y0) * w + x0];
}

constexpr double kVarianceRelTol = 1e-12;

}  // namespace

PatchGradNccScorer::PatchGradNccScorer(const RadiographImage& fixed,
                                       const PatchSimilarityConfig& cfg) {
  cfg.validate();
  cols_ = fixed.cols;
  rows_ = fixed.rows;
  diameter_ = cfg.effective_diameter();
  const int stride = cfg.effective_stride();

  if (diameter_ > cols_ || diameter_ > rows_) {
    throw std::invalid_argument("patch diameter exceeds image size");
  }
  for (int y0 = 0; y0 + diameter_ <= rows_; y0 += stride) {
    for (int x0 = 0; x0 + diameter_ <= cols_; x0 += stride) {
      patches_.push_back({x0, y0});
    }
  }

  sobel_gradients(fixed, gx_f_, gy_f_);
  build_sat(gx_f_, nullptr, cols_, rows_, sat_fx_);
  build_sat(gy_f_, nullptr, cols_, rows_, sat_fy_);
  build_sat(gx_f_, &gx_f_, cols_, rows_, sat_fxx_);
  build_sat(gy_f_, &gy_f_, cols_, rows_, sat_fyy_);
}

double PatchGradNccScorer::score(const RadiographImage& moving) const {
  if (moving.cols != cols_ || moving.rows != rows_) {
    throw std::invalid_argument("patch_grad_ncc: image dimension mismatch");
  }

  std::vector<float> gx_m, gy_m;
  sobel_gradients(moving, gx_m, gy_m);

  std::vector<double> sat_mx, sat_my, sat_mxx, sat_myy, sat_xfm, sat_yfm;
  build_sat(gx_m, nullptr, cols_, rows_, sat_mx);
  build_sat(gy_m, nullptr, cols_, rows_, sat_my);
  build_sat(gx_m, &gx_m, cols_, rows_, sat_mxx);
  build_sat(gy_m, &gy_m, cols_, rows_, sat_myy);
  build_sat(gx_f_, &gx_m, cols_, rows_, sat_xfm);
  build_sat(gy_f_, &gy_m, cols_, rows_, sat_yfm);

  const double n = double(diameter_) * diameter_;
  double total = 0;
  std::size_t used = 0;

  auto channel = [&](const std::vector<double>& sf, const std::vector<double>& sff,
                     const std::vector<double>& sm, const std::vector<double>& smm,
                     const std::vector<double>& sfm, int x0, int y0) {
    const int x1 = x0 + diameter_, y1 = y0 + diameter_;
    const double sum_f = sat_rect(sf, cols_, x0, y0, x1, y1);
    const double sum_m = sat_rect(sm, cols_, x0, y0, x1, y1);
    const double sum_ff = sat_rect(sff, cols_, x0, y0, x1, y1);
    const double sum_mm = sat_rect(smm, cols_, x0, y0, x1, y1);
    const double sum_fm = sat_rect(sfm, cols_, x0, y0, x1, y1);
    const double var_f = sum_ff - sum_f * sum_f / n;
    const double var_m = sum_mm - sum_m * sum_m / n;
    if (var_f <= kVarianceRelTol * sum_ff || var_m <= kVarianceRelTol * sum_mm ||
        var_f <= 0 || var_m <= 0) {
      return;
    }
    const double cov = sum_fm - sum_f * sum_m / n;
    total += cov / std::sqrt(var_f * var_m);
    ++used;
  };

  for (const auto& p : patches_) {
    channel(sat_fx_, sat_fxx_, sat_mx, sat_mxx, sat_xfm, p.x0, p.y0);
    channel(sat_fy_, sat_fyy_, sat_my, sat_myy, sat_yfm, p.x0, p.y0);
  }

  if (used == 0) return 0.0;
  return -total / double(used);
}

double patch_grad_ncc(const RadiographImage& fixed,
                      const RadiographImage& moving,
                      const PatchSimilarityConfig& cfg) {
  return PatchGradNccScorer(fixed, cfg).score(moving);
}

}  // namespace fragreg
