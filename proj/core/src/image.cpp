#include "polypforge/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "polypforge/error.hpp"

namespace polypforge {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

void png_error_throw(png_structp, png_const_charp message) {
  throw Error(ErrorKind::format, std::string("png: ") + message);
}

void png_warning_ignore(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  require(file != nullptr, ErrorKind::missing_file, "cannot open image " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_throw,
                                           png_warning_ignore);
  require(png != nullptr, ErrorKind::io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  require(png_get_rowbytes(png, info) == width * 3, ErrorKind::format,
          "unsupported PNG layout in " + path.string());

  Image img(static_cast<int>(width), static_cast<int>(height));
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = img.at(0, static_cast<int>(y));
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return img;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  require(image.width > 0 && image.height > 0, ErrorKind::invalid_argument, "cannot encode empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_throw,
                                            png_warning_ignore);
  require(png != nullptr, ErrorKind::io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  std::vector<std::uint8_t> out;
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) rows[y] = const_cast<png_bytep>(image.at(0, y));
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  require(file != nullptr, ErrorKind::io, "cannot write image " + path.string());
  require(std::fwrite(bytes.data(), 1, bytes.size(), file.get()) == bytes.size(), ErrorKind::io,
          "short write to " + path.string());
}

Image crop(const Image& image, int x, int y, int width, int height) {
  require(x >= 0 && y >= 0 && width >= 0 && height >= 0 && x + width <= image.width &&
              y + height <= image.height,
          ErrorKind::invalid_argument, "crop window outside image");
  Image out(width, height);
  for (int r = 0; r < height; ++r) {
    std::copy_n(image.at(x, y + r), static_cast<std::size_t>(width) * 3, out.at(0, r));
  }
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  require(width > 0 && height > 0 && image.width > 0 && image.height > 0, ErrorKind::invalid_argument,
          "resize to or from an empty image");
  Image out(width, height);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = image.at(x0, y0)[ch] * (1 - wx) + image.at(x1, y0)[ch] * wx;
        const double bot = image.at(x0, y1)[ch] * (1 - wx) + image.at(x1, y1)[ch] * wx;
        out.at(x, y)[ch] = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bot * wy));
      }
    }
  }
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) std::copy_n(image.at(image.width - 1 - x, y), 3, out.at(x, y));
  }
  return out;
}

Image flip_vertical(const Image& image) {
  Image out(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    std::copy_n(image.at(0, image.height - 1 - y), static_cast<std::size_t>(image.width) * 3, out.at(0, y));
  }
  return out;
}

Image rotate90(const Image& image, int turns) {
  turns = ((turns % 4) + 4) % 4;
  Image cur = image;
  for (int t = 0; t < turns; ++t) {
    Image next(cur.height, cur.width);
    for (int y = 0; y < cur.height; ++y) {
      for (int x = 0; x < cur.width; ++x) std::copy_n(cur.at(x, y), 3, next.at(y, cur.width - 1 - x));
    }
    cur = std::move(next);
  }
  return cur;
}

void image_to_chw(const Image& image, std::span<double> out) {
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  require(out.size() == plane * 3, ErrorKind::size_mismatch, "image_to_chw buffer size");
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) out[ch * plane + p] = image.pixels[p * 3 + ch] / 127.5 - 1.0;
  }
}

nn::Tensor images_to_tensor(std::span<const Image> images) {
  require(!images.empty(), ErrorKind::empty_input, "no images to convert");
  const int w = images.front().width;
  const int h = images.front().height;
  nn::Tensor t({static_cast<std::int64_t>(images.size()), 3, h, w});
  const std::size_t per = static_cast<std::size_t>(w) * h * 3;
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i].width == w && images[i].height == h, ErrorKind::size_mismatch,
            "images in a batch must share one size");
    image_to_chw(images[i], t.values().subspan(i * per, per));
  }
  return t;
}

Image tensor_to_image(const nn::Tensor& batch, std::int64_t index) {
  require(batch.rank() == 4 && batch.dim(1) == 3, ErrorKind::size_mismatch, "expected [N, 3, H, W]");
  const auto h = static_cast<int>(batch.dim(2));
  const auto w = static_cast<int>(batch.dim(3));
  Image img(w, h);
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  const double* src = batch.data() + index * 3 * static_cast<std::int64_t>(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = std::clamp((src[ch * plane + p] + 1.0) * 127.5, 0.0, 255.0);
      img.pixels[p * 3 + ch] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return img;
}

}  // namespace polypforge
