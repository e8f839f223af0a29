#include "traplab/image.hpp"

#include "traplab/core.hpp"
#include "traplab/io.hpp"

#include <png.h>
// jpeglib.h expects stdio declarations first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>

namespace traplab {

RgbImage::RgbImage(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw DomainError("image dimensions must be positive");
  data_.assign(static_cast<std::size_t>(width) * height * 3, fill);
}

RgbImage extract_region(const RgbImage& image, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > image.width() || y + h > image.height())
    throw DomainError("extract_region: rectangle outside image");
  RgbImage out(w, h);
  for (int row = 0; row < h; ++row)
    std::memcpy(&out.at(0, row, 0), image.pixel(x, y + row), static_cast<std::size_t>(w) * 3);
  return out;
}

namespace {

struct Tap {
  int lo;
  int hi;
  double t;
};

std::vector<Tap> bilinear_taps(int src_len, int dst_len) {
  std::vector<Tap> taps(dst_len);
  for (int i = 0; i < dst_len; ++i) {
    if (src_len == 1 || dst_len == 1) {
      taps[i] = {0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(i) * (src_len - 1) / (dst_len - 1);
    int lo = static_cast<int>(std::floor(pos));
    lo = std::clamp(lo, 0, src_len - 1);
    const int hi = std::min(lo + 1, src_len - 1);
    taps[i] = {lo, hi, pos - lo};
  }
  return taps;
}

}  // namespace

RgbImage resize_bilinear(const RgbImage& src, int out_width, int out_height) {
  if (src.empty()) throw DomainError("resize_bilinear: empty source");
  RgbImage out(out_width, out_height);
  const auto xs = bilinear_taps(src.width(), out_width);
  const auto ys = bilinear_taps(src.height(), out_height);
  for (int y = 0; y < out_height; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < out_width; ++x) {
      const Tap& tx = xs[x];
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(tx.lo, ty.lo, c) * (1.0 - tx.t) + src.at(tx.hi, ty.lo, c) * tx.t;
        const double bottom = src.at(tx.lo, ty.hi, c) * (1.0 - tx.t) + src.at(tx.hi, ty.hi, c) * tx.t;
        const double v = top * (1.0 - ty.t) + bottom * ty.t;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  if (image.empty()) throw DomainError("encode_png: empty image");
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width());
  desc.height = static_cast<png_uint_32>(image.height());
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, image.data().data(), 0, nullptr))
    throw std::runtime_error(std::string("encode_png: ") + desc.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, image.data().data(), 0, nullptr))
    throw std::runtime_error(std::string("encode_png: ") + desc.message);
  out.resize(size);
  return out;
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw ParseError("decode_png: not a PNG stream");
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size()))
    throw ParseError(std::string("decode_png: ") + desc.message);
  desc.format = PNG_FORMAT_RGB;
  RgbImage image(static_cast<int>(desc.width), static_cast<int>(desc.height));
  if (!png_image_finish_read(&desc, nullptr, image.data().data(), 0, nullptr)) {
    png_image_free(&desc);
    throw ParseError(std::string("decode_png: ") + desc.message);
  }
  return image;
}

namespace {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

// Only trivially destructible locals live in this frame, so the longjmp from
// the libjpeg error handler never skips a destructor. Pixels go into the
// caller's buffer.
bool decode_jpeg_raw(const std::vector<std::uint8_t>& bytes, std::vector<std::uint8_t>* pixels,
                     int* width, int* height) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  *width = static_cast<int>(cinfo.output_width);
  *height = static_cast<int>(cinfo.output_height);
  pixels->resize(static_cast<std::size_t>(*width) * *height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels->data() + static_cast<std::size_t>(cinfo.output_scanline) * *width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

RgbImage decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  std::vector<std::uint8_t> pixels;
  int width = 0;
  int height = 0;
  if (!decode_jpeg_raw(bytes, &pixels, &width, &height) || width <= 0 || height <= 0)
    throw ParseError("decode_jpeg: corrupt JPEG");
  RgbImage image(width, height);
  image.data() = std::move(pixels);
  return image;
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF)
    return decode_jpeg(bytes);
  throw ParseError("unsupported image format: " + path.string());
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace traplab
