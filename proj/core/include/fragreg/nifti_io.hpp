// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Minimal NIfTI-1 reader/writer for scalar volumes and label maps
// (.nii / .nii.gz), plus a raw+JSON fallback format.

#pragma once

#include "fragreg/volume.hpp"

#include <string>

namespace fragreg {

// Axis-aligned sform is written from spacing/origin; reading accepts any
// NIfTI-1 file whose sform/qform is axis-aligned and positive-scaled.
// Supported datatypes: uint8, int16, uint16, int32, float32, float64.
Volume load_volume_nifti(const std::string& path);
void save_volume_nifti(const Volume& v, const std::string& path);

LabelMap load_labels_nifti(const std::string& path);
// Labels stored as unsigned 8-bit; a JSON sidecar (<path>.labels.json)
// records the name <-> integer mapping.
void save_labels_nifti(const LabelMap& m, const std::string& path);

// Raw little-endian float32 voxels + JSON metadata (.raw + .raw.json).
Volume load_volume_raw(const std::string& raw_path);
void save_volume_raw(const Volume& v, const std::string& raw_path);

// Dispatch on extension: .nii/.nii.gz -> NIfTI, .raw -> raw+JSON.
Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& path);

}  // namespace fragreg
