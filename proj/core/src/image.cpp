#include "fer/image.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <numbers>

#include "fer/errors.hpp"

#include <jpeglib.h>
#include <png.h>

namespace fer {

Image::Image(int h, int w, int c, std::uint8_t fill)
    : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {
  if (h <= 0 || w <= 0 || c <= 0) throw DimensionError("image dimensions must be positive");
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) throw DimensionError("cannot convert " + std::to_string(image.channels) + " channels to RGB");
  Image out(image.height, image.width, 3);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    std::fill_n(out.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i), 3, image.pixels[i]);
  }
  return out;
}

namespace {

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

// Bilinear sample at continuous index coordinates, clamped to the border.
double sample(const Image& img, double y, double x, int ch) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = img.at(y0, x0, ch) * (1 - fx) + img.at(y0, x1, ch) * fx;
  const double bottom = img.at(y1, x0, ch) * (1 - fx) + img.at(y1, x1, ch) * fx;
  return top * (1 - fy) + bottom * fy;
}

}  // namespace

Image resize_bilinear(const Image& image, int height, int width) {
  if (height <= 0 || width <= 0) throw DimensionError("resize target must be positive");
  if (height == image.height && width == image.width) return image;
  Image out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int r = 0; r < height; ++r) {
    const double y = (r + 0.5) * sy - 0.5;
    for (int c = 0; c < width; ++c) {
      const double x = (c + 0.5) * sx - 0.5;
      for (int ch = 0; ch < image.channels; ++ch) out.at(r, c, ch) = to_u8(sample(image, y, x, ch));
    }
  }
  return out;
}

Image rotate(const Image& image, double angle_deg) {
  if (angle_deg == 0.0) return image;
  const double t = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(t);
  const double sn = std::sin(t);
  const double cy = (image.height - 1) / 2.0;
  const double cx = (image.width - 1) / 2.0;
  Image out(image.height, image.width, image.channels);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      // Inverse map; y grows downward so a visual CCW turn is a CW turn in (x, y).
      const double dx = c - cx;
      const double dy = r - cy;
      const double x = cx + cs * dx - sn * dy;
      const double y = cy + sn * dx + cs * dy;
      for (int ch = 0; ch < image.channels; ++ch) out.at(r, c, ch) = to_u8(sample(image, y, x, ch));
    }
  }
  return out;
}

Image autocontrast(const Image& image) {
  Image out = image;
  const std::size_t n = static_cast<std::size_t>(image.height) * image.width;
  for (int ch = 0; ch < image.channels; ++ch) {
    int lo = 255, hi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int p = image.pixels[i * image.channels + ch];
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    if (lo == hi) continue;
    for (std::size_t i = 0; i < n; ++i) {
      auto& p = out.pixels[i * image.channels + ch];
      p = to_u8((p - lo) * 255.0 / (hi - lo));
    }
  }
  return out;
}

Tensor normalize(const Image& image) {
  std::vector<double> v(image.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (image.pixels[i] / 255.0 - 0.5) / 0.5;
  return Tensor::from_data({static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width),
                            static_cast<std::size_t>(image.channels)},
                           std::move(v));
}

namespace {

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw InputError(std::string("png: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.height), static_cast<int>(img.width), 3);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw InputError("png: " + msg);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_quiet(j_common_ptr) {}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  err.mgr.output_message = jpeg_quiet;
  // Locals touched after setjmp must not live in automatic storage, so the
  // scanlines go to a buffer created beforehand.
  auto pixels = std::make_unique<std::vector<std::uint8_t>>();
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw InputError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const std::size_t row_bytes = static_cast<std::size_t>(cinfo.output_width) * 3;
  pixels->resize(row_bytes * cinfo.output_height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels->data() + row_bytes * cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  Image out;
  out.height = static_cast<int>(cinfo.output_height);
  out.width = static_cast<int>(cinfo.output_width);
  out.channels = 3;
  out.pixels = std::move(*pixels);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

std::uint32_t le(std::span<const std::uint8_t> b, std::size_t off, int n) {
  if (off + n > b.size()) throw InputError("bmp: truncated header");
  std::uint32_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = (v << 8) | b[off + i];
  return v;
}

// Uncompressed 24- and 32-bit BMP only.
Image decode_bmp(std::span<const std::uint8_t> b) {
  const std::uint32_t data_off = le(b, 10, 4);
  const auto w = static_cast<std::int32_t>(le(b, 18, 4));
  const auto h_raw = static_cast<std::int32_t>(le(b, 22, 4));
  const std::uint32_t bpp = le(b, 28, 2);
  const std::uint32_t compression = le(b, 30, 4);
  if ((bpp != 24 && bpp != 32) || (compression != 0 && !(compression == 3 && bpp == 32))) {
    throw InputError("bmp: only uncompressed 24/32-bit images are supported");
  }
  const bool bottom_up = h_raw > 0;
  const int h = bottom_up ? h_raw : -h_raw;
  if (w <= 0 || h <= 0) throw InputError("bmp: bad dimensions");
  const std::size_t stride = (static_cast<std::size_t>(w) * bpp / 8 + 3) & ~std::size_t{3};
  if (data_off + stride * h > b.size()) throw InputError("bmp: truncated pixel data");
  Image out(h, w, 3);
  for (int r = 0; r < h; ++r) {
    const std::uint8_t* row = b.data() + data_off + stride * (bottom_up ? h - 1 - r : r);
    for (int c = 0; c < w; ++c) {
      const std::uint8_t* px = row + static_cast<std::size_t>(c) * bpp / 8;
      out.at(r, c, 0) = px[2];
      out.at(r, c, 1) = px[1];
      out.at(r, c, 2) = px[0];
    }
  }
  return out;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t png_sig[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(png_sig, png_sig + 4, bytes.begin())) return decode_png(bytes);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return decode_bmp(bytes);
  throw InputError("unrecognised image format");
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DimensionError("write_png needs 1 or 3 channels");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw InputError("cannot write " + path.string() + ": " + img.message);
  }
}

}  // namespace fer
