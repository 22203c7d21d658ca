#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "unipose/geometry.hpp"

namespace unipose {

// 8-bit images, row-major, `channels` interleaved samples per pixel.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c) : width(w), height(h), channels(c), pixels(std::size_t(w) * h * c, 0) {}
  std::uint8_t* at(int x, int y) { return &pixels[(std::size_t(y) * width + x) * channels]; }
  const std::uint8_t* at(int x, int y) const { return &pixels[(std::size_t(y) * width + x) * channels]; }
};

Image8 read_png8(const std::filesystem::path& path);  // gray or RGB; alpha stripped
void write_png8(const Image8& img, const std::filesystem::path& path);
std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int& width, int& height);
void write_png16(const std::vector<std::uint16_t>& values, int width, int height,
                 const std::filesystem::path& path);

TriangleMesh read_obj(const std::filesystem::path& path);
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);

CameraIntrinsics read_intrinsics(const std::filesystem::path& path);
void write_intrinsics(const CameraIntrinsics& k, const std::filesystem::path& path);

// Mask from PNG (nonzero = object) or UFTN [H, W] (nonzero = object).
Mask read_mask(const std::filesystem::path& path);
void write_mask_png(const Mask& m, const std::filesystem::path& path);

// Depth from UFTN [H, W] metres, or 16-bit PNG in millimetres with an
// optional `<stem>.json` sidecar {"scale": metres_per_unit}.
DepthMap read_depth(const std::filesystem::path& path);
void write_depth_uftn(const DepthMap& d, const std::filesystem::path& path);
void write_depth_png16(const DepthMap& d, const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);  // kIo / kValidation on failure
std::string read_text(const std::filesystem::path& path);
void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace unipose
