#include "femur/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

namespace femur {

Image::Image(int height, int width, float fill)
    : height_(height), width_(width) {
  if (height < 0 || width < 0) throw ImageError("negative image dimensions");
  pixels_.assign(static_cast<std::size_t>(height) * width, fill);
}

Image crop_columns(const Image& image, int first, int count) {
  if (first < 0 || count < 0 || first + count > image.width()) {
    throw ImageError("column crop outside image");
  }
  Image out(image.height(), count);
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < count; ++c) out.at(r, c) = image.at(r, first + c);
  }
  return out;
}

float sample_bilinear(const Image& image, double row, double col) {
  const double r0f = std::floor(row);
  const double c0f = std::floor(col);
  const int r0 = static_cast<int>(r0f);
  const int c0 = static_cast<int>(c0f);
  const double fr = row - r0f;
  const double fc = col - c0f;
  const double top = (1.0 - fc) * image.at_or_zero(r0, c0) +
                     (fc > 0.0 ? fc * image.at_or_zero(r0, c0 + 1) : 0.0);
  if (fr == 0.0) return static_cast<float>(top);
  const double bottom = (1.0 - fc) * image.at_or_zero(r0 + 1, c0) +
                        (fc > 0.0 ? fc * image.at_or_zero(r0 + 1, c0 + 1) : 0.0);
  return static_cast<float>((1.0 - fr) * top + fr * bottom);
}

Image resize(const Image& image, int height, int width) {
  if (height < 1 || width < 1) throw ImageError("resize target must be >= 1 px");
  if (image.empty()) throw ImageError("cannot resize an empty image");
  if (height == image.height() && width == image.width()) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  // Downscaling averages a grid of samples per output pixel.
  const int ky = sy > 1.0 ? static_cast<int>(std::ceil(sy)) : 1;
  const int kx = sx > 1.0 ? static_cast<int>(std::ceil(sx)) : 1;
  const double max_r = image.height() - 1, max_c = image.width() - 1;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double acc = 0.0;
      for (int a = 0; a < ky; ++a) {
        // Clamp to the border so resizing never introduces padding.
        const double y = std::clamp((r + (a + 0.5) / ky) * sy - 0.5, 0.0, max_r);
        for (int b = 0; b < kx; ++b) {
          const double x = std::clamp((c + (b + 0.5) / kx) * sx - 0.5, 0.0, max_c);
          acc += sample_bilinear(image, y, x);
        }
      }
      out.at(r, c) = static_cast<float>(acc / (ky * kx));
    }
  }
  return out;
}

std::uint8_t quantize8(float value) {
  const float v = std::clamp(value, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

namespace {

struct MemoryReader {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
  auto* reader = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (reader->offset + length > reader->bytes.size()) {
    png_error(png, "truncated PNG stream");
  }
  std::memcpy(out, reader->bytes.data() + reader->offset, length);
  reader->offset += length;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

void on_png_error(png_structp png, png_const_charp message) {
  auto* buffer = static_cast<std::string*>(png_get_error_ptr(png));
  if (buffer != nullptr) *buffer = message;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

}  // namespace

Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw ImageError("not a PNG stream");
  }
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error,
                                           on_png_error, on_png_warning);
  if (png == nullptr) throw ImageError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageError("png_create_info_struct failed");
  }
  MemoryReader reader{bytes, 0};
  Image image;
  std::vector<png_byte> rows;
  std::vector<png_bytep> row_ptrs;
  volatile bool wrong_format = false;
  if (setjmp(png_jmpbuf(png)) != 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("PNG decode failed: " + error);
  }
  png_set_read_fn(png, &reader, read_from_memory);
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if ((color & PNG_COLOR_MASK_COLOR) != 0) {
    wrong_format = true;
  } else {
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if ((color & PNG_COLOR_MASK_ALPHA) != 0) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    rows.resize(stride * height);
    row_ptrs.resize(height);
    for (png_uint_32 r = 0; r < height; ++r) row_ptrs[r] = rows.data() + r * stride;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    image = Image(static_cast<int>(height), static_cast<int>(width));
    const bool sixteen = depth == 16;
    for (png_uint_32 r = 0; r < height; ++r) {
      const png_byte* row = row_ptrs[r];
      for (png_uint_32 c = 0; c < width; ++c) {
        float v;
        if (sixteen) {
          const unsigned hi = row[2 * c];
          const unsigned lo = row[2 * c + 1];
          v = static_cast<float>((hi << 8) | lo) / 65535.0f;
        } else {
          v = static_cast<float>(row[c]) / 255.0f;
        }
        image.at(static_cast<int>(r), static_cast<int>(c)) = v;
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (wrong_format) throw ImageError("PNG is not single-channel grayscale");
  return image;
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.empty()) throw ImageError("cannot encode an empty image");
  std::string error;
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error,
                                            on_png_error, on_png_warning);
  if (png == nullptr) throw ImageError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageError("png_create_info_struct failed");
  }
  std::vector<png_byte> rows(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) rows[i] = quantize8(image.pixels()[i]);
  std::vector<png_bytep> row_ptrs(image.height());
  for (int r = 0; r < image.height(); ++r) {
    row_ptrs[r] = rows.data() + static_cast<std::size_t>(r) * image.width();
  }
  if (setjmp(png_jmpbuf(png)) != 0) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("PNG encode failed: " + error);
  }
  png_set_write_fn(png, &out, write_to_memory, flush_noop);
  png_set_IHDR(png, info, image.width(), image.height(), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot write image: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("short write: " + path.string());
}

}  // namespace femur
