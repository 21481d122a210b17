#pragma once

// Minimal raster line charts written as PNG. Panels sit side by side; each
// has its own axes scaled to its data. No text rendering: the CSV emitted next
// to every plot carries labels and values.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sidgan::plot {

using Rgb = std::array<std::uint8_t, 3>;

struct Series {
  std::string label;
  std::vector<double> x, y;
  Rgb color{0, 0, 0};
};

struct Panel {
  std::string title;
  std::vector<Series> series;
  bool log_x = false;
};

// RGB8 image, row-major.
struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
  Rgb at(int x, int y) const;
};

Image render(const std::vector<Panel>& panels, int panel_width = 480, int panel_height = 360);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace sidgan::plot
