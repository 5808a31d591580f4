#include "ctmr/figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ctmr/errors.hpp"

namespace ctmr::figures {

namespace {

constexpr Rgb kRed = {255, 40, 40};
constexpr Rgb kGreen = {40, 220, 80};
constexpr Rgb kWhite = {255, 255, 255};

// Rows of a 3x5 glyph, 3 bits each (MSB = left column).
const std::array<std::uint8_t, 5>* glyph(char c) {
  static const std::array<std::uint8_t, 5> digits[10] = {
      {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
      {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
  };
  static const std::array<std::uint8_t, 5> dot = {0, 0, 0, 0, 2};
  static const std::array<std::uint8_t, 5> minus = {0, 0, 7, 0, 0};
  if (c >= '0' && c <= '9') return &digits[c - '0'];
  if (c == '.') return &dot;
  if (c == '-') return &minus;
  return nullptr;
}

void check_plane(const Tensor& t, int size, const char* what) {
  if (t.ndim() != 2 || t.dim(0) != size || t.dim(1) != size) {
    throw ShapeError(std::string("figure: ") + what + " must be [" + std::to_string(size) + ", " +
                     std::to_string(size) + "], got " + to_string(t.shape()));
  }
}

std::uint8_t to_gray(float v) {
  const double g = std::clamp((static_cast<double>(v) + 1.0) * 0.5, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(g * 255.0));
}

bool mask_at(const Tensor& m, int size, int x, int y) {
  if (x < 0 || y < 0 || x >= size || y >= size) return false;
  return m.data()[static_cast<std::size_t>(y) * size + x] != 0.0f;
}

void draw_panel(Image& img, int ox, int oy, const Tensor& base, const Tensor& pred, const Tensor& truth, int size) {
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::uint8_t g = to_gray(base.data()[static_cast<std::size_t>(y) * size + x]);
      std::uint8_t* px = img.at(ox + x, oy + y);
      px[0] = px[1] = px[2] = g;
      if (mask_at(pred, size, x, y)) {
        for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>((px[c] + kGreen[c]) / 2);
      }
      const bool edge = mask_at(truth, size, x, y) &&
                        (!mask_at(truth, size, x - 1, y) || !mask_at(truth, size, x + 1, y) ||
                         !mask_at(truth, size, x, y - 1) || !mask_at(truth, size, x, y + 1));
      if (edge) std::copy(kRed.begin(), kRed.end(), px);
    }
  }
}

std::string format_dice(double d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", d);
  return buf;
}

}  // namespace

Image::Image(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {
  if (w <= 0 || h <= 0 || (c != 1 && c != 3)) throw ArgumentError("image: invalid geometry");
}

void write_pnm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << (image.channels == 3 ? "P6" : "P5") << "\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if ((magic != "P6" && magic != "P5") || maxval != 255 || !in) throw FormatError("'" + path.string() + "' is not a PNM");
  Image img(w, h, magic == "P6" ? 3 : 1);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw TruncatedError("'" + path.string() + "' is truncated");
  return img;
}

void draw_text(Image& image, int x, int y, const std::string& text, Rgb color) {
  for (char c : text) {
    if (const auto* g = glyph(c)) {
      for (int row = 0; row < 5; ++row) {
        for (int col = 0; col < 3; ++col) {
          if (!(((*g)[row] >> (2 - col)) & 1)) continue;
          const int px = x + col, py = y + row;
          if (px < 0 || py < 0 || px >= image.width || py >= image.height) continue;
          std::uint8_t* p = image.at(px, py);
          if (image.channels == 3) {
            std::copy(color.begin(), color.end(), p);
          } else {
            p[0] = color[0];
          }
        }
      }
    }
    x += 4;
  }
}

int largest_lesion_slice(const Tensor& mask) {
  if (mask.ndim() != 4 || mask.dim(0) != 1) throw ShapeError("figure: mask must be [1, D, S, S]");
  const auto d = mask.dim(1);
  const auto plane = static_cast<std::size_t>(mask.dim(2) * mask.dim(3));
  int best = 0;
  double best_area = -1.0;
  for (std::int64_t z = 0; z < d; ++z) {
    double area = 0.0;
    for (std::size_t i = 0; i < plane; ++i) area += mask.data()[z * plane + i];
    if (area > best_area) {
      best_area = area;
      best = static_cast<int>(z);
    }
  }
  return best;
}

std::pair<int, int> comparison_grid_size(int columns, int size) {
  return {columns * size + (columns + 1) * kMargin, 2 * size + 3 * kMargin + 2 * kTextBand};
}

Image comparison_grid(const std::vector<ComparisonPanel>& panels) {
  if (panels.empty()) throw ArgumentError("comparison grid: no panels");
  const int size = static_cast<int>(panels.front().base.dim(0));
  const auto [w, h] = comparison_grid_size(static_cast<int>(panels.size()), size);
  Image img(w, h, 3, 0);
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const auto& p = panels[i];
    check_plane(p.base, size, "base");
    check_plane(p.pred_a, size, "prediction A");
    check_plane(p.pred_b, size, "prediction B");
    check_plane(p.truth, size, "ground truth");
    const int ox = kMargin + static_cast<int>(i) * (size + kMargin);
    const int row_a = kMargin + kTextBand;
    const int row_b = row_a + size + kMargin + kTextBand;
    draw_text(img, ox, row_a - kTextBand + 1, format_dice(p.dice_a), kWhite);
    draw_panel(img, ox, row_a, p.base, p.pred_a, p.truth, size);
    draw_text(img, ox, row_b - kTextBand + 1, format_dice(p.dice_b), kWhite);
    draw_panel(img, ox, row_b, p.base, p.pred_b, p.truth, size);
  }
  return img;
}

std::pair<int, int> mr_grid_size(int columns, int size) {
  return {columns * size + (columns + 1) * kMargin, 2 * size + 3 * kMargin};
}

Image mr_grid(const std::vector<Tensor>& real, const std::vector<Tensor>& generated) {
  if (real.empty() || real.size() != generated.size()) {
    throw ArgumentError("MR grid: need equal, non-zero counts of real and generated slices");
  }
  const int size = static_cast<int>(real.front().dim(0));
  const auto [w, h] = mr_grid_size(static_cast<int>(real.size()), size);
  Image img(w, h, 1, 0);
  for (std::size_t i = 0; i < real.size(); ++i) {
    check_plane(real[i], size, "real MR");
    check_plane(generated[i], size, "generated MR");
    const int ox = kMargin + static_cast<int>(i) * (size + kMargin);
    for (int row = 0; row < 2; ++row) {
      const Tensor& t = row == 0 ? real[i] : generated[i];
      const int oy = kMargin + row * (size + kMargin);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) *img.at(ox + x, oy + y) = to_gray(t.data()[static_cast<std::size_t>(y) * size + x]);
      }
    }
  }
  return img;
}

}  // namespace ctmr::figures
