#include "s2fuse/raster_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "s2fuse/errors.hpp"

namespace s2fuse {

namespace fs = std::filesystem;

fs::path meta_path(const fs::path& raw) { return fs::path(raw.string() + ".meta"); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string encode_f32le(const std::vector<double>& values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return bytes;
}

std::vector<double> decode_f32le(std::string_view bytes) {
  if (bytes.size() % 4 != 0) throw IoError("float32 blob length is not a multiple of 4");
  std::vector<double> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return values;
}

namespace {

std::map<std::string, std::string> parse_meta(const std::string& text, const fs::path& where) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError(where.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

int parse_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError("raster sidecar missing '" + key + "'");
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw IoError("raster sidecar: bad integer for '" + key + "'");
  }
}

double parse_double_or(const std::map<std::string, std::string>& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw IoError("raster sidecar: bad number for '" + key + "'");
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Raster read_raster(const fs::path& raw) {
  const auto kv = parse_meta(read_file(meta_path(raw)), meta_path(raw));
  const int bands = parse_int(kv, "bands");
  const int height = parse_int(kv, "height");
  const int width = parse_int(kv, "width");
  auto dt = kv.find("dtype");
  if (dt == kv.end() || dt->second != "f32le") throw IoError("raster sidecar: dtype must be f32le");
  if (bands < 1 || height < 1 || width < 1) throw DimensionError("raster sidecar: non-positive dimensions");
  const std::string bytes = read_file(raw);
  const std::size_t expected = static_cast<std::size_t>(bands) * height * width * 4;
  if (bytes.size() != expected)
    throw IoError(raw.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                  std::to_string(bytes.size()));
  Raster img(bands, height, width, decode_f32le(bytes));
  for (int c = 0; c < bands; ++c) {
    const std::string p = "band." + std::to_string(c) + ".";
    BandSpec& m = img.meta(c);
    if (auto it = kv.find(p + "name"); it != kv.end()) m.name = it->second;
    m.gsd = parse_double_or(kv, p + "gsd", m.gsd);
    m.gnyq = parse_double_or(kv, p + "gnyq", m.gnyq);
    m.min_value = parse_double_or(kv, p + "min", m.min_value);
    m.max_value = parse_double_or(kv, p + "max", m.max_value);
    m.validate();
  }
  img.validate();
  return img;
}

void write_raster(const fs::path& raw, const Raster& img) {
  img.validate();
  std::ostringstream meta;
  meta << "bands=" << img.bands() << "\nheight=" << img.height() << "\nwidth=" << img.width()
       << "\ndtype=f32le\n";
  for (int c = 0; c < img.bands(); ++c) {
    const BandSpec& m = img.meta(c);
    const std::string p = "band." + std::to_string(c) + ".";
    meta << p << "name=" << m.name << '\n'
         << p << "gsd=" << format_double(m.gsd) << '\n'
         << p << "gnyq=" << format_double(m.gnyq) << '\n'
         << p << "min=" << format_double(m.min_value) << '\n'
         << p << "max=" << format_double(m.max_value) << '\n';
  }
  write_file_atomic(raw, encode_f32le(img.data()));
  write_file_atomic(meta_path(raw), meta.str());
}

namespace {

std::pair<double, double> percentile_range(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto pick = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  return {pick(0.02), pick(0.98)};
}

}  // namespace

void write_png(const fs::path& path, const Raster& img, std::vector<int> bands) {
  if (bands.empty()) {
    if (img.bands() >= 3)
      bands = {0, 1, 2};
    else
      bands = {0};
  }
  if (bands.size() != 1 && bands.size() != 3) throw ParameterError("PNG export needs 1 or 3 bands");
  for (int b : bands)
    if (b < 0 || b >= img.bands()) throw DimensionError("PNG band index out of range");
  const int channels = static_cast<int>(bands.size());
  std::vector<unsigned char> pixels(img.plane_size() * static_cast<std::size_t>(channels));
  for (int k = 0; k < channels; ++k) {
    auto plane = img.band(bands[static_cast<std::size_t>(k)]);
    auto [lo, hi] = percentile_range(plane);
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < plane.size(); ++i) {
      double v = std::clamp((plane[i] - lo) / span, 0.0, 1.0);
      pixels[i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(k)] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }

  fs::path tmp = path;
  tmp += ".tmp";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FILE* fp = std::fopen(tmp.string().c_str(), "wb");
  if (!fp) throw IoError("cannot write " + tmp.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height(); ++y)
    png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * img.width() * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string());
}

}  // namespace s2fuse
