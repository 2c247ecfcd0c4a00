// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Single-channel 32-bit float TIFF I/O for radiograph images.

#pragma once

#include "fragreg/projector.hpp"

#include <string>

namespace fragreg {

// Uncompressed little-endian TIFF, one float32 sample per pixel. Only the
// pixel raster travels through the file; kind/geometry are carried by the
// sidecar JSON written by the callers.
void save_image_tiff(const RadiographImage& img, const std::string& path);

// Reads the float32 TIFFs written above (single strip or multi-strip).
RadiographImage load_image_tiff(const std::string& path,
                                ImageKind kind = ImageKind::intensity);

}  // namespace fragreg
