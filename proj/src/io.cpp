#include "unipose/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>
#include <png.h>

#include "unipose/error.hpp"

namespace unipose {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string());
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Decodes any PNG into 8- or 16-bit gray/RGB rows.
struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // big-endian samples for 16-bit
};

DecodedPng decode_png(const std::filesystem::path& path, bool keep16) {
  FilePtr f = open_file(path, "rb");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) fail(ErrorKind::kIo, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  DecodedPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": invalid PNG: " + err, 0);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16 && !keep16) png_set_strip_16(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void encode_png(const std::filesystem::path& path, int width, int height, int color_type, int bit_depth,
                const std::uint8_t* data, std::size_t stride) {
  FilePtr f = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) fail(ErrorKind::kIo, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, path.string() + ": PNG write failed: " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(data + stride * y);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, path.string() + ": " + e.what());
  }
}

Image8 read_png8(const std::filesystem::path& path) {
  DecodedPng d = decode_png(path, false);
  Image8 img;
  img.width = d.width;
  img.height = d.height;
  img.channels = d.channels;
  img.pixels = std::move(d.bytes);
  return img;
}

void write_png8(const Image8& img, const std::filesystem::path& path) {
  require(img.channels == 1 || img.channels == 3, "write_png8 supports gray or RGB");
  encode_png(path, img.width, img.height, img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, 8,
             img.pixels.data(), std::size_t(img.width) * img.channels);
}

std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int& width, int& height) {
  DecodedPng d = decode_png(path, true);
  if (d.channels != 1) throw FormatError(path.string() + ": expected single-channel PNG", 0);
  width = d.width;
  height = d.height;
  std::vector<std::uint16_t> out(std::size_t(width) * height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = d.bit_depth == 16 ? static_cast<std::uint16_t>((d.bytes[2 * i] << 8) | d.bytes[2 * i + 1])
                               : d.bytes[i];
  }
  return out;
}

void write_png16(const std::vector<std::uint16_t>& values, int width, int height,
                 const std::filesystem::path& path) {
  std::vector<std::uint8_t> be(values.size() * 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    be[2 * i] = static_cast<std::uint8_t>(values[i] >> 8);
    be[2 * i + 1] = static_cast<std::uint8_t>(values[i] & 0xff);
  }
  encode_png(path, width, height, PNG_COLOR_TYPE_GRAY, 16, be.data(), std::size_t(width) * 2);
}

TriangleMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  TriangleMesh mesh;
  std::vector<Eigen::Vector3f> colors;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z)) fail(ErrorKind::kValidation, path.string() + ":" + std::to_string(lineno) + ": bad vertex");
      mesh.vertices.emplace_back(x, y, z);
      float r, g, b;
      if (ss >> r >> g >> b) colors.emplace_back(r, g, b);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        const int i = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(i > 0 ? i - 1 : static_cast<int>(mesh.vertices.size()) + i);
      }
      if (idx.size() < 3) fail(ErrorKind::kValidation, path.string() + ":" + std::to_string(lineno) + ": face needs 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  if (!colors.empty() && colors.size() == mesh.vertices.size()) mesh.colors = std::move(colors);
  clean_mesh(mesh);
  validate(mesh);
  return mesh;
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  char buf[160];
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    if (mesh.has_colors()) {
      const auto& c = mesh.colors[i];
      std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g %.6g %.6g %.6g\n", v.x(), v.y(), v.z(), c.x(), c.y(), c.z());
    } else {
      std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    }
    out << buf;
  }
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

CameraIntrinsics read_intrinsics(const std::filesystem::path& path) {
  const auto j = read_json(path);
  CameraIntrinsics k;
  try {
    k.fx = j.at("fx");
    k.fy = j.at("fy");
    k.cx = j.at("cx");
    k.cy = j.at("cy");
    k.width = j.at("width");
    k.height = j.at("height");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, path.string() + ": " + e.what());
  }
  validate(k);
  return k;
}

void write_intrinsics(const CameraIntrinsics& k, const std::filesystem::path& path) {
  nlohmann::json j = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  write_text(j.dump(2) + "\n", path);
}

Mask read_mask(const std::filesystem::path& path) {
  Mask m;
  if (path.extension() == ".uftn") {
    const Tensor t = read_tensor(path);
    require(t.ndims() == 2, path.string() + ": mask tensor must be [H, W]");
    m = Mask(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)));
    for (std::size_t i = 0; i < t.size(); ++i) m.values[i] = t[i] != 0.0f ? 1 : 0;
    return m;
  }
  const Image8 img = read_png8(path);
  m = Mask(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto* px = img.at(x, y);
      bool on = false;
      for (int c = 0; c < img.channels; ++c) on = on || px[c] != 0;
      m.set(x, y, on);
    }
  return m;
}

void write_mask_png(const Mask& m, const std::filesystem::path& path) {
  Image8 img(m.width, m.height, 1);
  for (std::size_t i = 0; i < m.values.size(); ++i) img.pixels[i] = m.values[i] ? 255 : 0;
  write_png8(img, path);
}

DepthMap read_depth(const std::filesystem::path& path) {
  DepthMap d;
  if (path.extension() == ".png") {
    int w = 0, h = 0;
    const auto raw = read_png16(path, w, h);
    double scale = 0.001;
    auto side = path;
    side.replace_extension(".json");
    if (std::filesystem::exists(side)) scale = read_json(side).value("scale", 0.001);
    d = DepthMap(w, h);
    for (std::size_t i = 0; i < raw.size(); ++i) d.values[i] = static_cast<float>(raw[i] * scale);
  } else {
    const Tensor t = read_tensor(path);
    require(t.ndims() == 2, path.string() + ": depth tensor must be [H, W]");
    d = DepthMap(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)));
    std::copy(t.data().begin(), t.data().end(), d.values.begin());
  }
  validate(d);
  return d;
}

void write_depth_uftn(const DepthMap& d, const std::filesystem::path& path) {
  write_tensor(Tensor({std::uint32_t(d.height), std::uint32_t(d.width)}, d.values), path);
}

void write_depth_png16(const DepthMap& d, const std::filesystem::path& path) {
  std::vector<std::uint16_t> mm(d.values.size());
  for (std::size_t i = 0; i < mm.size(); ++i)
    mm[i] = static_cast<std::uint16_t>(std::clamp(std::lround(d.values[i] * 1000.0), 0L, 65535L));
  write_png16(mm, d.width, d.height, path);
  auto side = path;
  side.replace_extension(".json");
  write_text(nlohmann::json{{"scale", 0.001}}.dump() + "\n", side);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

}  // namespace unipose
