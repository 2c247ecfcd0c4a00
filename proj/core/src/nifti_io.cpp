// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/nifti_io.hpp"

#include <zlib.h>

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fragreg {

namespace {

// NIfTI-1 header, 348 bytes. Field layout per the published standard.
#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1;
  float intent_p2;
  float intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax;
  std::int32_t glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b;
  float quatern_c;
  float quatern_d;
  float qoffset_x;
  float qoffset_y;
  float qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtUint16 = 512;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<unsigned char> read_file_maybe_gz(const std::string& path) {
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<unsigned char> data;
    unsigned char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) {
      data.insert(data.end(), buf, buf + n);
    }
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw std::runtime_error("gzip read error in " + path);
    return data;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

void write_file_maybe_gz(const std::string& path, const void* bytes,
                         std::size_t n) {
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write " + path);
    const char* p = static_cast<const char*>(bytes);
    std::size_t off = 0;
    while (off < n) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - off, 1u << 28));
      if (gzwrite(f, p + off, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw std::runtime_error("gzip write error in " + path);
      }
      off += chunk;
    }
    gzclose(f);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
  if (!out) throw std::runtime_error("short write to " + path);
}

Nifti1Header make_header(const Grid3<float>& g, std::int16_t datatype,
                         std::int16_t bitpix) {
  Nifti1Header h;
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(g.dims[0]);
  h.dim[2] = static_cast<std::int16_t>(g.dims[1]);
  h.dim[3] = static_cast<std::int16_t>(g.dims[2]);
  h.dim[4] = h.dim[5] = h.dim[6] = h.dim[7] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.f;
  h.pixdim[1] = static_cast<float>(g.spacing.x());
  h.pixdim[2] = static_cast<float>(g.spacing.y());
  h.pixdim[3] = static_cast<float>(g.spacing.z());
  h.vox_offset = 352.f;
  h.scl_slope = 1.f;
  h.xyzt_units = 2;  // mm
  h.sform_code = 1;
  h.qform_code = 0;
  h.srow_x[0] = static_cast<float>(g.spacing.x());
  h.srow_x[3] = static_cast<float>(g.origin.x());
  h.srow_y[1] = static_cast<float>(g.spacing.y());
  h.srow_y[3] = static_cast<float>(g.origin.y());
  h.srow_z[2] = static_cast<float>(g.spacing.z());
  h.srow_z[3] = static_cast<float>(g.origin.z());
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

struct ParsedNifti {
  std::array<int, 3> dims;
  Vec3 spacing;
  Vec3 origin;
  std::vector<double> values;
};

ParsedNifti parse_nifti(const std::string& path) {
  const auto bytes = read_file_maybe_gz(path);
  if (bytes.size() < sizeof(Nifti1Header)) {
    throw std::runtime_error("truncated NIfTI file: " + path);
  }
  Nifti1Header h;
  std::memcpy(&h, bytes.data(), sizeof(h));
  if (h.sizeof_hdr != 348) {
    throw std::runtime_error("unsupported NIfTI layout (byte order?) in " + path);
  }
  if (h.dim[0] < 3) {
    throw std::runtime_error("NIfTI volume must be 3D: " + path);
  }
  for (int d = 4; d <= h.dim[0]; ++d) {
    if (h.dim[d] > 1) throw std::runtime_error("NIfTI has >3 non-singleton dims: " + path);
  }

  ParsedNifti out;
  out.dims = {h.dim[1], h.dim[2], h.dim[3]};
  out.spacing = Vec3(h.pixdim[1], h.pixdim[2], h.pixdim[3]);
  out.origin = Vec3::Zero();
  if (h.sform_code > 0) {
    // Only axis-aligned, positively-scaled sforms map onto our grid model.
    const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        const float v = rows[r][c];
        if (r == c) {
          if (v <= 0) throw std::runtime_error("non-positive sform scale in " + path);
        } else if (std::abs(v) > 1e-5f * std::abs(rows[r][r])) {
          throw std::runtime_error("oblique sform not supported in " + path);
        }
      }
      out.spacing[r] = rows[r][r];
      out.origin[r] = rows[r][3];
    }
  } else if (h.qform_code > 0) {
    if (std::abs(h.quatern_b) > 1e-6 || std::abs(h.quatern_c) > 1e-6 ||
        std::abs(h.quatern_d) > 1e-6) {
      throw std::runtime_error("rotated qform not supported in " + path);
    }
    out.origin = Vec3(h.qoffset_x, h.qoffset_y, h.qoffset_z);
  }
  for (int a = 0; a < 3; ++a) {
    if (out.spacing[a] <= 0) out.spacing[a] = 1.0;
  }

  const std::size_t n = std::size_t(out.dims[0]) * out.dims[1] * out.dims[2];
  const std::size_t off = static_cast<std::size_t>(h.vox_offset);
  const double slope = (h.scl_slope == 0.f) ? 1.0 : h.scl_slope;
  const double inter = h.scl_inter;

  auto need = [&](std::size_t bytes_per) {
    if (bytes.size() < off + n * bytes_per) {
      throw std::runtime_error("truncated NIfTI data in " + path);
    }
  };

  out.values.resize(n);
  const unsigned char* d = bytes.data() + off;
  switch (h.datatype) {
    case kDtUint8: {
      need(1);
      for (std::size_t i = 0; i < n; ++i) out.values[i] = d[i] * slope + inter;
      break;
    }
    case kDtInt16: {
      need(2);
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t v;
        std::memcpy(&v, d + 2 * i, 2);
        out.values[i] = v * slope + inter;
      }
      break;
    }
    case kDtUint16: {
      need(2);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t v;
        std::memcpy(&v, d + 2 * i, 2);
        out.values[i] = v * slope + inter;
      }
      break;
    }
    case kDtInt32: {
      need(4);
      for (std::size_t i = 0; i < n; ++i) {
        std::int32_t v;
        std::memcpy(&v, d + 4 * i, 4);
        out.values[i] = v * slope + inter;
      }
      break;
    }
    case kDtFloat32: {
      need(4);
      for (std::size_t i = 0; i < n; ++i) {
        float v;
        std::memcpy(&v, d + 4 * i, 4);
        out.values[i] = v * slope + inter;
      }
      break;
    }
    case kDtFloat64: {
      need(8);
      for (std::size_t i = 0; i < n; ++i) {
        double v;
        std::memcpy(&v, d + 8 * i, 8);
        out.values[i] = v * slope + inter;
      }
      break;
    }
    default:
      throw std::runtime_error("unsupported NIfTI datatype " +
                               std::to_string(h.datatype) + " in " + path);
  }
  return out;
}

}  // namespace

Volume load_volume_nifti(const std::string& path) {
  const ParsedNifti p = parse_nifti(path);
  Volume v = Volume::make(p.dims[0], p.dims[1], p.dims[2], p.spacing, p.origin);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    v.voxels[i] = static_cast<float>(p.values[i]);
  }
  return v;
}

void save_volume_nifti(const Volume& v, const std::string& path) {
  Nifti1Header h = make_header(v, kDtFloat32, 32);
  std::vector<unsigned char> bytes(352 + v.voxels.size() * 4, 0);
  std::memcpy(bytes.data(), &h, sizeof(h));
  std::memcpy(bytes.data() + 352, v.voxels.data(), v.voxels.size() * 4);
  write_file_maybe_gz(path, bytes.data(), bytes.size());
}

LabelMap load_labels_nifti(const std::string& path) {
  const ParsedNifti p = parse_nifti(path);
  LabelMap m;
  m.dims = p.dims;
  m.spacing = p.spacing;
  m.origin = p.origin;
  m.voxels.resize(p.values.size());
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double val = p.values[i];
    if (val < 0 || val > 255 || val != static_cast<std::uint8_t>(val)) {
      throw std::runtime_error("non-integer label value in " + path);
    }
    m.voxels[i] = static_cast<std::uint8_t>(val);
  }
  return m;
}

void save_labels_nifti(const LabelMap& m, const std::string& path) {
  Grid3<float> meta;
  meta.dims = m.dims;
  meta.spacing = m.spacing;
  meta.origin = m.origin;
  Nifti1Header h = make_header(meta, kDtUint8, 8);
  std::vector<unsigned char> bytes(352 + m.voxels.size(), 0);
  std::memcpy(bytes.data(), &h, sizeof(h));
  std::memcpy(bytes.data() + 352, m.voxels.data(), m.voxels.size());
  write_file_maybe_gz(path, bytes.data(), bytes.size());

  nlohmann::json side;
  for (Label l : {Label::background, Label::pelvis, Label::fragment, Label::cut,
                  Label::femur_left, Label::femur_right}) {
    side[label_name(l)] = static_cast<int>(l);
  }
  std::ofstream out(path + ".labels.json");
  out << side.dump(2) << '\n';
}

Volume load_volume_raw(const std::string& raw_path) {
  std::ifstream meta_in(raw_path + ".json");
  if (!meta_in) throw std::runtime_error("missing raw metadata: " + raw_path + ".json");
  nlohmann::json meta = nlohmann::json::parse(meta_in);

  Volume v = Volume::make(meta.at("dims")[0], meta.at("dims")[1], meta.at("dims")[2],
                          Vec3(meta.at("spacing")[0], meta.at("spacing")[1],
                               meta.at("spacing")[2]),
                          Vec3(meta.at("origin")[0], meta.at("origin")[1],
                               meta.at("origin")[2]));
  if (meta.contains("frame")) v.frame = meta["frame"].get<std::string>();

  std::ifstream in(raw_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + raw_path);
  in.read(reinterpret_cast<char*>(v.voxels.data()),
          static_cast<std::streamsize>(v.voxels.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(v.voxels.size() * 4)) {
    throw std::runtime_error("truncated raw volume: " + raw_path);
  }
  return v;
}

void save_volume_raw(const Volume& v, const std::string& raw_path) {
  nlohmann::json meta;
  meta["dims"] = {v.dims[0], v.dims[1], v.dims[2]};
  meta["spacing"] = {v.spacing.x(), v.spacing.y(), v.spacing.z()};
  meta["origin"] = {v.origin.x(), v.origin.y(), v.origin.z()};
  meta["frame"] = v.frame;
  meta["dtype"] = "float32-le";
  std::ofstream meta_out(raw_path + ".json");
  meta_out << meta.dump(2) << '\n';

  std::ofstream out(raw_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + raw_path);
  out.write(reinterpret_cast<const char*>(v.voxels.data()),
            static_cast<std::streamsize>(v.voxels.size() * 4));
}

Volume load_volume(const std::string& path) {
  if (ends_with(path, ".raw")) return load_volume_raw(path);
  return load_volume_nifti(path);
}

void save_volume(const Volume& v, const std::string& path) {
  if (ends_with(path, ".raw")) {
    save_volume_raw(v, path);
  } else {
    save_volume_nifti(v, path);
  }
}

}  // namespace fragreg
