#include "sidgan/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include <png.h>

#include "sidgan/error.hpp"

namespace sidgan::plot {

namespace {

constexpr int kMargin = 32;
constexpr Rgb kAxis{40, 40, 40};
constexpr Rgb kGrid{225, 225, 225};

struct Canvas {
  Image img;
  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    auto* p = &img.pixels[3 * (static_cast<std::size_t>(y) * img.width + x)];
    p[0] = c[0], p[1] = c[1], p[2] = c[2];
  }
  void dot(int x, int y, int r, Rgb c) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) set(x + dx, y + dy, c);
  }
  void line(int x0, int y0, int x1, int y1, Rgb c, int r = 0) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      dot(x0, y0, r, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) err += dy, x0 += sx;
      if (e2 <= dx) err += dx, y0 += sy;
    }
  }
};

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad, hi += pad;
  }
};

void draw_panel(Canvas& cv, const Panel& p, int ox, int w, int h) {
  auto tx = [&](double x) { return p.log_x ? std::log10(std::max(x, 1e-12)) : x; };
  Range rx, ry;
  for (const auto& s : p.series) {
    for (double x : s.x) rx.add(tx(x));
    for (double y : s.y) ry.add(y);
  }
  rx.finish();
  ry.finish();
  const int x0 = ox + kMargin, x1 = ox + w - kMargin / 2, y0 = h - kMargin, y1 = kMargin / 2;
  auto px = [&](double x) { return x0 + static_cast<int>(std::lround((tx(x) - rx.lo) / (rx.hi - rx.lo) * (x1 - x0))); };
  auto py = [&](double y) { return y0 - static_cast<int>(std::lround((y - ry.lo) / (ry.hi - ry.lo) * (y0 - y1))); };

  for (int k = 1; k < 5; ++k) {
    const int gx = x0 + (x1 - x0) * k / 5, gy = y0 - (y0 - y1) * k / 5;
    cv.line(gx, y0, gx, y1, kGrid);
    cv.line(x0, gy, x1, gy, kGrid);
  }
  cv.line(x0, y0, x1, y0, kAxis);
  cv.line(x0, y0, x0, y1, kAxis);

  for (std::size_t si = 0; si < p.series.size(); ++si) {
    const auto& s = p.series[si];
    const std::size_t n = std::min(s.x.size(), s.y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (i > 0 && std::isfinite(s.y[i - 1])) cv.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.color, 1);
      cv.dot(px(s.x[i]), py(s.y[i]), 3, s.color);
    }
    // Legend swatch per series, top-left inside the axes.
    const int lx = x0 + 8, ly = y1 + 8 + 12 * static_cast<int>(si);
    for (int k = 0; k < 16; ++k) cv.dot(lx + k, ly, 2, s.color);
  }
}

}  // namespace

Rgb Image::at(int x, int y) const {
  const auto* p = &pixels[3 * (static_cast<std::size_t>(y) * width + x)];
  return {p[0], p[1], p[2]};
}

Image render(const std::vector<Panel>& panels, int panel_width, int panel_height) {
  if (panels.empty()) throw ConfigError("plot needs at least one panel");
  Canvas cv;
  cv.img.width = panel_width * static_cast<int>(panels.size());
  cv.img.height = panel_height;
  cv.img.pixels.assign(static_cast<std::size_t>(cv.img.width) * cv.img.height * 3, 255);
  for (std::size_t i = 0; i < panels.size(); ++i)
    draw_panel(cv, panels[i], static_cast<int>(i) * panel_width, panel_width, panel_height);
  return cv.img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(&image.pixels[3 * static_cast<std::size_t>(y) * image.width]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw IoError("cannot read PNG " + path.string());
  img.format = PNG_FORMAT_RGB;
  Image out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string());
  }
  return out;
}

}  // namespace sidgan::plot
