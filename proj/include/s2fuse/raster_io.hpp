#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "s2fuse/raster.hpp"

namespace s2fuse {

// RAW+META raster files.
//
// `<path>` holds C*H*W little-endian float32 values in planar band-major
// order; `<path>.meta` is a text sidecar of `key=value` lines:
//
//   bands=C
//   height=H
//   width=W
//   dtype=f32le
//   band.<i>.name=...
//   band.<i>.gsd=...
//   band.<i>.gnyq=...
//   band.<i>.min=...     (optional, default 0)
//   band.<i>.max=...     (optional, default 255)

std::filesystem::path meta_path(const std::filesystem::path& raw);

Raster read_raster(const std::filesystem::path& raw);

/// Writes both files through temporaries renamed into place.
void write_raster(const std::filesystem::path& raw, const Raster& img);

/// 8-bit PNG with a per-band 2-98 percentile stretch. Three bands (default
/// the first three) become RGB; a single band becomes grayscale.
void write_png(const std::filesystem::path& path, const Raster& img, std::vector<int> bands = {});

/// Atomic text/binary file write (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Little-endian float32 encode/decode helpers shared with checkpoints.
std::string encode_f32le(const std::vector<double>& values);
std::vector<double> decode_f32le(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace s2fuse
