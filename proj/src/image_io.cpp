#include "dpnet/image_io.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#ifdef DPNET_HAVE_PNG
#include <png.h>
#endif

namespace dpnet {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("write_image " + path + ": " + what);
}

void check_image(const std::string& path, const Image8& img) {
  if (img.w <= 0 || img.h <= 0) fail(path, "empty image");
  if (img.channels != 1 && img.channels != 3)
    fail(path, "unsupported channel count " + std::to_string(img.channels));
  std::size_t want = static_cast<std::size_t>(img.w) * img.h * img.channels;
  if (img.px.size() != want) fail(path, "pixel buffer size mismatch");
}

void write_pnm(const std::string& path, const Image8& img, bool color) {
  if (color != (img.channels == 3))
    fail(path, color ? ".ppm needs 3 channels" : ".pgm needs 1 channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out << (color ? "P6\n" : "P5\n") << img.w << ' ' << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size()));
  if (!out) fail(path, "write failed");
}

#ifdef DPNET_HAVE_PNG
void write_png_file(const std::string& path, const Image8& img) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail(path, "cannot open for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
        img.px.data() + static_cast<std::size_t>(y) * img.w * img.channels);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(path, "png encode failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) fail(path, "close failed");
}
#endif

}  // namespace

Image8 make_image(int w, int h, int channels, std::uint8_t fill) {
  Image8 img;
  img.w = w;
  img.h = h;
  img.channels = channels;
  img.px.assign(static_cast<std::size_t>(w) * h * channels, fill);
  return img;
}

bool png_supported() {
#ifdef DPNET_HAVE_PNG
  return true;
#else
  return false;
#endif
}

void write_image(const std::string& path, const Image8& img) {
  check_image(path, img);
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".pgm") {
    write_pnm(path, img, false);
  } else if (ext == ".ppm") {
    write_pnm(path, img, true);
  } else if (ext == ".png") {
#ifdef DPNET_HAVE_PNG
    write_png_file(path, img);
#else
    fail(path, "built without png support; use .pgm/.ppm");
#endif
  } else {
    fail(path, "unsupported extension '" + ext + "'");
  }
}

}  // namespace dpnet
