// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/tiff_io.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

namespace fragreg {

namespace {

constexpr std::uint16_t kTagWidth = 256;
constexpr std::uint16_t kTagHeight = 257;
constexpr std::uint16_t kTagBitsPerSample = 258;
constexpr std::uint16_t kTagCompression = 259;
constexpr std::uint16_t kTagPhotometric = 262;
constexpr std::uint16_t kTagStripOffsets = 273;
constexpr std::uint16_t kTagSamplesPerPixel = 277;
constexpr std::uint16_t kTagRowsPerStrip = 278;
constexpr std::uint16_t kTagStripByteCounts = 279;
constexpr std::uint16_t kTagSampleFormat = 339;

template <typename T>
void put(std::vector<unsigned char>& buf, T v) {
  const std::size_t n = buf.size();
  buf.resize(n + sizeof(T));
  std::memcpy(buf.data() + n, &v, sizeof(T));
}

struct IfdEntry {
  std::uint16_t tag;
  std::uint16_t type;  // 3 = SHORT, 4 = LONG
  std::uint32_t count;
  std::uint32_t value;
};

void put_entry(std::vector<unsigned char>& buf, const IfdEntry& e) {
  put<std::uint16_t>(buf, e.tag);
  put<std::uint16_t>(buf, e.type);
  put<std::uint32_t>(buf, e.count);
  if (e.type == 3 && e.count == 1) {
    put<std::uint16_t>(buf, static_cast<std::uint16_t>(e.value));
    put<std::uint16_t>(buf, 0);
  } else {
    put<std::uint32_t>(buf, e.value);
  }
}

}  // namespace

void save_image_tiff(const RadiographImage& img, const std::string& path) {
  const std::uint32_t w = img.cols, h = img.rows;
  const std::uint32_t data_bytes = w * h * 4;

  std::vector<unsigned char> buf;
  buf.reserve(8 + data_bytes + 200);
  // Header: little-endian magic, IFD offset right after the pixel data.
  put<std::uint16_t>(buf, 0x4949);
  put<std::uint16_t>(buf, 42);
  const std::uint32_t data_off = 8;
  put<std::uint32_t>(buf, data_off + data_bytes);

  buf.resize(data_off + data_bytes);
  std::memcpy(buf.data() + data_off, img.px.data(), data_bytes);

  const IfdEntry entries[] = {
      {kTagWidth, 4, 1, w},
      {kTagHeight, 4, 1, h},
      {kTagBitsPerSample, 3, 1, 32},
      {kTagCompression, 3, 1, 1},
      {kTagPhotometric, 3, 1, 1},
      {kTagStripOffsets, 4, 1, data_off},
      {kTagSamplesPerPixel, 3, 1, 1},
      {kTagRowsPerStrip, 4, 1, h},
      {kTagStripByteCounts, 4, 1, data_bytes},
      {kTagSampleFormat, 3, 1, 3},  // IEEE float
  };
  put<std::uint16_t>(buf, static_cast<std::uint16_t>(std::size(entries)));
  for (const auto& e : entries) put_entry(buf, e);
  put<std::uint32_t>(buf, 0);  // no next IFD

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

RadiographImage load_image_tiff(const std::string& path, ImageKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> buf{std::istreambuf_iterator<char>(in),
                                 std::istreambuf_iterator<char>()};
  if (buf.size() < 8) throw std::runtime_error("truncated TIFF: " + path);

  std::uint16_t magic;
  std::memcpy(&magic, buf.data(), 2);
  if (magic != 0x4949) throw std::runtime_error("only little-endian TIFF supported: " + path);

  std::uint32_t ifd_off;
  std::memcpy(&ifd_off, buf.data() + 4, 4);
  if (ifd_off + 2 > buf.size()) throw std::runtime_error("bad IFD offset in " + path);

  std::uint16_t n_entries;
  std::memcpy(&n_entries, buf.data() + ifd_off, 2);

  auto read_u32 = [&](std::size_t off) {
    std::uint32_t v;
    if (off + 4 > buf.size()) throw std::runtime_error("truncated TIFF: " + path);
    std::memcpy(&v, buf.data() + off, 4);
    return v;
  };

  std::map<std::uint16_t, std::pair<std::uint32_t, std::uint32_t>> tags;  // tag -> (count, value/offset)
  std::map<std::uint16_t, std::uint16_t> types;
  for (int e = 0; e < n_entries; ++e) {
    const std::size_t off = ifd_off + 2 + std::size_t(e) * 12;
    std::uint16_t tag, type;
    std::uint32_t count, value;
    std::memcpy(&tag, buf.data() + off, 2);
    std::memcpy(&type, buf.data() + off + 2, 2);
    std::memcpy(&count, buf.data() + off + 4, 4);
    if (type == 3 && count == 1) {
      std::uint16_t v16;
      std::memcpy(&v16, buf.data() + off + 8, 2);
      value = v16;
    } else {
      std::memcpy(&value, buf.data() + off + 8, 4);
    }
    tags[tag] = {count, value};
    types[tag] = type;
  }

  auto require = [&](std::uint16_t tag) {
    auto it = tags.find(tag);
    if (it == tags.end()) {
      throw std::runtime_error("TIFF missing tag " + std::to_string(tag) + ": " + path);
    }
    return it->second;
  };

  const std::uint32_t w = require(kTagWidth).second;
  const std::uint32_t h = require(kTagHeight).second;
  if (require(kTagBitsPerSample).second != 32 ||
      require(kTagSampleFormat).second != 3 ||
      (tags.count(kTagCompression) && tags[kTagCompression].second != 1)) {
    throw std::runtime_error("expected uncompressed float32 TIFF: " + path);
  }

  // Strip offsets/counts may be inline (count==1) or an array.
  auto strip_values = [&](std::uint16_t tag) {
    const auto [count, value] = require(tag);
    std::vector<std::uint32_t> vals;
    if (count == 1) {
      vals.push_back(value);
    } else {
      const std::uint16_t type = types[tag];
      for (std::uint32_t i = 0; i < count; ++i) {
        if (type == 3) {
          std::uint16_t v16;
          std::memcpy(&v16, buf.data() + value + 2 * i, 2);
          vals.push_back(v16);
        } else {
          vals.push_back(read_u32(value + 4 * i));
        }
      }
    }
    return vals;
  };

  const auto offsets = strip_values(kTagStripOffsets);
  const auto counts = strip_values(kTagStripByteCounts);
  if (offsets.size() != counts.size()) {
    throw std::runtime_error("inconsistent TIFF strips: " + path);
  }

  RadiographImage img;
  img.kind = kind;
  img.cols = static_cast<int>(w);
  img.rows = static_cast<int>(h);
  img.px.resize(std::size_t(w) * h);
  img.geometry.cols = img.cols;
  img.geometry.rows = img.rows;

  std::size_t written = 0;
  for (std::size_t s = 0; s < offsets.size(); ++s) {
    if (offsets[s] + counts[s] > buf.size()) {
      throw std::runtime_error("truncated TIFF strip in " + path);
    }
    const std::size_t floats = counts[s] / 4;
    if (written + floats > img.px.size()) {
      throw std::runtime_error("TIFF strip overflow in " + path);
    }
    std::memcpy(img.px.data() + written, buf.data() + offsets[s], counts[s]);
    written += floats;
  }
  if (written != img.px.size()) {
    throw std::runtime_error("TIFF pixel count mismatch in " + path);
  }
  return img;
}

}  // namespace fragreg
