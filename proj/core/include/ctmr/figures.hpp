#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctmr/tensor.hpp"

namespace ctmr::figures {

inline constexpr int kMargin = 4;    // pixels around and between panels
inline constexpr int kTextBand = 8;  // caption band above each grid row

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit raster, 1 (gray) or 3 (RGB) channels, row-major.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);
  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * channels]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * channels];
  }
};

// Binary P6 (RGB) or P5 (gray) pixmap, chosen by the channel count.
void write_pnm(const Image& image, const std::filesystem::path& path);
Image read_pnm(const std::filesystem::path& path);

// 3x5 pixel digits, '.', '-' and ' '; other characters render blank.
void draw_text(Image& image, int x, int y, const std::string& text, Rgb color);

// Index of the slice with the largest mask area; ties go to the lowest index.
int largest_lesion_slice(const Tensor& mask);

/// One column of the comparison grid. Planes are [S, S]; base intensities in
/// [-1, 1], masks binary.
struct ComparisonPanel {
  Tensor base;
  Tensor pred_a;
  Tensor pred_b;
  Tensor truth;
  double dice_a = 0.0;
  double dice_b = 0.0;
};

// (width, height) of a comparison grid with n columns of S x S panels.
std::pair<int, int> comparison_grid_size(int columns, int size);

/// Top row overlays prediction A, bottom row prediction B, both with the
/// ground-truth contour in red and the per-panel dice in the caption band.
Image comparison_grid(const std::vector<ComparisonPanel>& panels);

// Gray grid: real MR on the top row, generated MR below.
std::pair<int, int> mr_grid_size(int columns, int size);
Image mr_grid(const std::vector<Tensor>& real, const std::vector<Tensor>& generated);

}  // namespace ctmr::figures
