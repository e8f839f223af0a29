#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace traplab {

struct ImageSize {
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Interleaved 8-bit RGB, row-major.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height, std::uint8_t fill = 0);

  int width() const { return width_; }
  int height() const { return height_; }
  ImageSize size() const { return {width_, height_}; }
  bool empty() const { return data_.empty(); }

  std::uint8_t& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return data_[index(x, y, c)]; }
  const std::uint8_t* pixel(int x, int y) const { return data_.data() + index(x, y, 0); }

  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Copies the rectangle [x, x+w) x [y, y+h); the rectangle must lie inside.
RgbImage extract_region(const RgbImage& image, int x, int y, int w, int h);

/// Bilinear resampling with corner-aligned sample positions:
/// src = dst * (src_len - 1) / (dst_len - 1). A source of length 1 maps to
/// every destination sample.
RgbImage resize_bilinear(const RgbImage& src, int out_width, int out_height);

std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

/// Reads PNG or JPEG (chosen by file signature).
RgbImage read_image(const std::filesystem::path& path);
void write_png(const RgbImage& image, const std::filesystem::path& path);

}  // namespace traplab
