#pragma once

// Minimal little-endian GeoTIFF reader/writer. Writes uncompressed float32
// with one strip per band (planar configuration 2), pixel scale and tie
// point tags, a GeoKey directory naming the UTM EPSG code, and GDAL_NODATA
// set to "nan". Reads that layout back plus chunky float32/float64 files
// with any strip layout. Band names live in a sidecar "<path>.bands" file,
// one name per line.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "marsnet/io/text.hpp"
#include "marsnet/raster/grid.hpp"

namespace marsnet::io {

namespace tiff {

enum : std::uint16_t { kShort = 3, kLong = 4, kAscii = 2, kDouble = 12 };

struct Entry {
  std::uint16_t tag;
  std::uint16_t type;
  std::vector<std::uint8_t> payload;  // raw little-endian values
  std::uint32_t count;
};

template <class V>
Entry make(std::uint16_t tag, std::uint16_t type, const std::vector<V>& values) {
  Entry e{tag, type, std::vector<std::uint8_t>(values.size() * sizeof(V)), static_cast<std::uint32_t>(values.size())};
  std::memcpy(e.payload.data(), values.data(), e.payload.size());
  return e;
}

inline Entry ascii(std::uint16_t tag, const std::string& s) {
  Entry e{tag, kAscii, std::vector<std::uint8_t>(s.begin(), s.end()), 0};
  e.payload.push_back(0);
  e.count = static_cast<std::uint32_t>(e.payload.size());
  return e;
}

inline std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case 1: case 2: case 6: case 7: return 1;
    case 3: case 8: return 2;
    case 4: case 9: case 11: return 4;
    case 5: case 10: case 12: return 8;
    default: return 0;
  }
}

}  // namespace tiff

inline std::filesystem::path band_sidecar(const std::filesystem::path& p) { return p.string() + ".bands"; }

inline void write_geotiff(const std::filesystem::path& path, const raster::Raster& r,
                          const std::vector<std::string>& band_names = {}) {
  using namespace tiff;
  const auto& g = r.geometry();
  const std::uint32_t w = g.width, h = g.height;
  const std::uint16_t nb = static_cast<std::uint16_t>(r.bands());
  const std::uint32_t strip_bytes = w * h * 4;

  std::vector<std::uint32_t> offsets(nb), counts(nb, strip_bytes);
  std::vector<Entry> entries;
  entries.push_back(make<std::uint32_t>(256, kLong, {w}));
  entries.push_back(make<std::uint32_t>(257, kLong, {h}));
  entries.push_back(make<std::uint16_t>(258, kShort, std::vector<std::uint16_t>(nb, 32)));
  entries.push_back(make<std::uint16_t>(259, kShort, {1}));
  entries.push_back(make<std::uint16_t>(262, kShort, {1}));
  entries.push_back(make<std::uint32_t>(273, kLong, offsets));
  entries.push_back(make<std::uint16_t>(277, kShort, {nb}));
  entries.push_back(make<std::uint32_t>(278, kLong, {h}));
  entries.push_back(make<std::uint32_t>(279, kLong, counts));
  entries.push_back(make<std::uint16_t>(284, kShort, {2}));
  entries.push_back(make<std::uint16_t>(339, kShort, std::vector<std::uint16_t>(nb, 3)));
  entries.push_back(make<double>(33550, kDouble, {g.pixel_size, g.pixel_size, 0.0}));
  entries.push_back(make<double>(33922, kDouble, {0.0, 0.0, 0.0, g.origin_x, g.origin_y, 0.0}));
  // GeoKeys: projected model, pixel-is-area, projected CRS by EPSG code.
  entries.push_back(make<std::uint16_t>(
      34735, kShort,
      {1, 1, 0, 3, 1024, 0, 1, 1, 1025, 0, 1, 1, 3072, 0, 1, static_cast<std::uint16_t>(g.crs.epsg())}));
  entries.push_back(ascii(42113, "nan"));

  // Layout: header, IFD, out-of-line values, strips.
  const std::uint32_t ifd_offset = 8;
  const std::uint32_t ifd_size = 2 + static_cast<std::uint32_t>(entries.size()) * 12 + 4;
  std::uint32_t cursor = ifd_offset + ifd_size;
  std::vector<std::uint32_t> value_offset(entries.size(), 0);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].payload.size() > 4) {
      cursor += cursor & 1u;
      value_offset[i] = cursor;
      cursor += static_cast<std::uint32_t>(entries[i].payload.size());
    }
  }
  cursor += cursor & 1u;
  for (std::uint16_t b = 0; b < nb; ++b) offsets[b] = cursor + b * strip_bytes;
  entries[5] = make<std::uint32_t>(273, kLong, offsets);

  std::vector<std::uint8_t> buf(cursor + static_cast<std::size_t>(nb) * strip_bytes, 0);
  auto put16 = [&](std::size_t at, std::uint16_t v) { std::memcpy(&buf[at], &v, 2); };
  auto put32 = [&](std::size_t at, std::uint32_t v) { std::memcpy(&buf[at], &v, 4); };
  buf[0] = 'I';
  buf[1] = 'I';
  put16(2, 42);
  put32(4, ifd_offset);
  put16(ifd_offset, static_cast<std::uint16_t>(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::size_t at = ifd_offset + 2 + i * 12;
    put16(at, entries[i].tag);
    put16(at + 2, entries[i].type);
    put32(at + 4, entries[i].count);
    if (entries[i].payload.size() > 4) {
      put32(at + 8, value_offset[i]);
      std::memcpy(&buf[value_offset[i]], entries[i].payload.data(), entries[i].payload.size());
    } else {
      std::memcpy(&buf[at + 8], entries[i].payload.data(), entries[i].payload.size());
    }
  }
  put32(ifd_offset + 2 + entries.size() * 12, 0);
  for (std::uint16_t b = 0; b < nb; ++b) {
    const auto band = r.band(b);
    for (std::size_t p = 0; p < band.size(); ++p) {
      const float v = r.is_nodata(p) ? nodata_value<float>() : static_cast<float>(band[p]);
      std::memcpy(&buf[offsets[b] + p * 4], &v, 4);
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) fail_runtime("write failed for " + path.string());

  if (!band_names.empty()) {
    require(band_names.size() == static_cast<std::size_t>(nb), "write_geotiff: band name count differs from band count");
    std::string s;
    for (const auto& n : band_names) s += n + "\n";
    write_file(band_sidecar(path), s);
  }
}

struct GeoTiff {
  raster::Raster raster;
  std::vector<std::string> band_names;  // empty without a sidecar
};

inline GeoTiff read_geotiff(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  const std::string src = path.string();
  const auto* buf = reinterpret_cast<const std::uint8_t*>(raw.data());
  auto need = [&](std::size_t at, std::size_t n) {
    if (at + n > raw.size()) fail_input(src + ": truncated TIFF");
  };
  auto get16 = [&](std::size_t at) {
    need(at, 2);
    std::uint16_t v;
    std::memcpy(&v, buf + at, 2);
    return v;
  };
  auto get32 = [&](std::size_t at) {
    need(at, 4);
    std::uint32_t v;
    std::memcpy(&v, buf + at, 4);
    return v;
  };
  need(0, 8);
  if (buf[0] != 'I' || buf[1] != 'I' || get16(2) != 42) fail_input(src + ": not a little-endian classic TIFF");

  // tag -> values widened to double, read from inline or out-of-line storage
  std::map<std::uint16_t, std::vector<double>> tags;
  std::map<std::uint16_t, std::string> text;
  const std::uint32_t ifd = get32(4);
  const std::uint16_t n = get16(ifd);
  for (std::uint16_t i = 0; i < n; ++i) {
    const std::size_t at = ifd + 2 + static_cast<std::size_t>(i) * 12;
    const std::uint16_t tag = get16(at), type = get16(at + 2);
    const std::uint32_t count = get32(at + 4);
    const std::size_t ts = tiff::type_size(type);
    if (ts == 0) continue;
    const std::size_t bytes = ts * count;
    const std::size_t base = bytes > 4 ? get32(at + 8) : at + 8;
    need(base, bytes);
    if (type == tiff::kAscii) {
      text[tag] = std::string(reinterpret_cast<const char*>(buf + base), count ? count - 1 : 0);
      continue;
    }
    auto& vals = tags[tag];
    for (std::uint32_t k = 0; k < count; ++k) {
      const std::size_t p = base + k * ts;
      switch (type) {
        case tiff::kShort: vals.push_back(get16(p)); break;
        case tiff::kLong: vals.push_back(get32(p)); break;
        case tiff::kDouble: {
          double d;
          std::memcpy(&d, buf + p, 8);
          vals.push_back(d);
          break;
        }
        default: vals.push_back(buf[p]);
      }
    }
  }
  auto one = [&](std::uint16_t tag, double fallback, bool required) {
    auto it = tags.find(tag);
    if (it == tags.end() || it->second.empty()) {
      if (required) fail_input(src + ": missing TIFF tag " + std::to_string(tag));
      return fallback;
    }
    return it->second.front();
  };
  const int w = static_cast<int>(one(256, 0, true)), h = static_cast<int>(one(257, 0, true));
  const int spp = static_cast<int>(one(277, 1, false));
  const int bits = static_cast<int>(one(258, 32, false));
  const int fmt = static_cast<int>(one(339, 1, false));
  const int planar = static_cast<int>(one(284, 1, false));
  const int rows_per_strip = static_cast<int>(one(278, h, false));
  if (one(259, 1, false) != 1) fail_input(src + ": compressed TIFF not supported");
  if (fmt != 3 || (bits != 32 && bits != 64)) fail_input(src + ": only float32/float64 samples are supported");
  const auto& offs = tags[273];
  const auto& cnts = tags[279];
  if (offs.empty() || offs.size() != cnts.size()) fail_input(src + ": bad strip tables");

  raster::GridGeometry g;
  g.width = w;
  g.height = h;
  const auto& scale = tags[33550];
  const auto& tie = tags[33922];
  if (scale.size() < 2 || tie.size() < 6) fail_input(src + ": missing georeferencing tags");
  if (scale[0] != scale[1]) fail_input(src + ": non-square pixels not supported");
  g.pixel_size = scale[0];
  g.origin_x = tie[3] - tie[0] * scale[0];
  g.origin_y = tie[4] + tie[1] * scale[1];
  const auto& keys = tags[34735];
  for (std::size_t k = 4; k + 3 < keys.size(); k += 4) {
    if (keys[k] == 3072) {
      const int epsg = static_cast<int>(keys[k + 3]);
      if (epsg > 32600 && epsg <= 32660) g.crs = {epsg - 32600, true};
      else if (epsg > 32700 && epsg <= 32760) g.crs = {epsg - 32700, false};
      else fail_input(src + ": unsupported EPSG " + std::to_string(epsg));
    }
  }

  GeoTiff out{raster::Raster(g, spp), {}};
  const int bytes_per = bits / 8;
  auto sample = [&](std::size_t at) {
    need(at, bytes_per);
    if (bytes_per == 4) {
      float f;
      std::memcpy(&f, buf + at, 4);
      return static_cast<double>(f);
    }
    double d;
    std::memcpy(&d, buf + at, 8);
    return d;
  };
  const int strips_per_plane = (h + rows_per_strip - 1) / rows_per_strip;
  for (std::size_t s = 0; s < offs.size(); ++s) {
    const int plane = planar == 2 ? static_cast<int>(s) / strips_per_plane : 0;
    const int row0 = (planar == 2 ? static_cast<int>(s) % strips_per_plane : static_cast<int>(s)) * rows_per_strip;
    const std::size_t base = static_cast<std::size_t>(offs[s]);
    for (int r = row0; r < std::min(h, row0 + rows_per_strip); ++r)
      for (int c = 0; c < w; ++c) {
        const std::size_t pix = static_cast<std::size_t>(r - row0) * w + c;
        if (planar == 2) out.raster.at(plane, r, c) = sample(base + pix * bytes_per);
        else
          for (int b = 0; b < spp; ++b) out.raster.at(b, r, c) = sample(base + (pix * spp + b) * bytes_per);
      }
  }
  out.raster.sync_nodata();

  if (std::filesystem::exists(band_sidecar(path))) {
    for (const auto& line : split(read_file(band_sidecar(path)), '\n'))
      if (!trim(line).empty()) out.band_names.push_back(trim(line));
    if (out.band_names.size() != static_cast<std::size_t>(spp))
      fail_input(band_sidecar(path).string() + ": band name count differs from band count");
  }
  return out;
}

}  // namespace marsnet::io
