#ifndef FEMUR_IMAGE_HPP_
#define FEMUR_IMAGE_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace femur {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Single-channel image, row-major, intensities nominally in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }
  std::size_t size() const { return pixels_.size(); }

  float& at(int row, int col) { return pixels_[index(row, col)]; }
  float at(int row, int col) const { return pixels_[index(row, col)]; }

  // Zero outside the image.
  float at_or_zero(int row, int col) const {
    if (row < 0 || col < 0 || row >= height_ || col >= width_) return 0.0f;
    return pixels_[index(row, col)];
  }

  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

// Columns [first, first + count) of `image`.
Image crop_columns(const Image& image, int first, int count);

// Bilinear sample with zero padding outside the pixel grid. Coordinates are
// in pixel-center units: (0, 0) is the center of the top-left pixel.
float sample_bilinear(const Image& image, double row, double col);

// Bilinear resize using the pixel-center convention.
Image resize(const Image& image, int height, int width);

// PNG I/O. 8- and 16-bit grayscale inputs are accepted; color inputs are
// rejected. Output is always 8-bit.
Image read_png(const std::filesystem::path& path);
Image decode_png(std::span<const std::uint8_t> bytes);
void write_png(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);

// 8-bit quantization used by the PNG writer, exposed so callers can mirror
// the exact stored values.
std::uint8_t quantize8(float value);

}  // namespace femur

#endif  // FEMUR_IMAGE_HPP_
