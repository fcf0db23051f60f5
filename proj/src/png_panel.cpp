#include "nowcast/png_panel.hpp"

#include <png.h>

#include "nowcast/binary_io.hpp"
#include "nowcast/error.hpp"

namespace nowcast {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_nothing(png_structp) {}

constexpr std::uint8_t kGutter = 128;
constexpr std::uint8_t kInvalid = 64;

}  // namespace

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
  if (image.height < 1 || image.width < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.height) * image.width)
    throw ContractViolation("image dimensions do not match its pixels");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("cannot create PNG writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("cannot create PNG info");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, flush_nothing);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < image.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() +
                                             static_cast<std::size_t>(r) * image.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  io::write_file(path, encode_png(image));
}

GrayImage render_panel(const ClassMap& target, const ClassMap& prediction) {
  if (target.n_classes != prediction.n_classes || target.height != prediction.height ||
      target.width != prediction.width)
    throw ShapeMismatch("target and prediction maps differ in shape");
  const int h = target.height, w = target.width, nc = target.n_classes;
  GrayImage img;
  img.width = 3 * w + 2;
  img.height = nc * h + (nc - 1);
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, kGutter);
  const std::size_t plane = target.plane();

  for (int m = 0; m < nc; ++m) {
    const int y0 = m * (h + 1);
    for (int r = 0; r < h; ++r) {
      std::uint8_t* row = img.pixels.data() + static_cast<std::size_t>(y0 + r) * img.width;
      for (int c = 0; c < w; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * w + c;
        const bool t = target.labels[m * plane + i] != 0;
        const bool p = prediction.labels[m * plane + i] != 0;
        const bool valid = target.valid[i] != 0;
        row[c] = !valid ? kInvalid : (t ? 255 : 0);
        row[w + 1 + c] = p ? 255 : 0;
        std::uint8_t d = kDiffNone;
        if (!valid) d = kInvalid;
        else if (t && p) d = kDiffHit;
        else if (t) d = kDiffMiss;
        else if (p) d = kDiffFalseAlarm;
        row[2 * w + 2 + c] = d;
      }
    }
  }
  return img;
}

}  // namespace nowcast
