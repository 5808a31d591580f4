#pragma once

#include <array>

namespace ctmr {

// Voxel size in millimetres. z is the (sparsely sampled) slice axis.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 5.0;

  double voxel_volume_mm3() const { return x * y * z; }
  std::array<double, 3> as_array() const { return {x, y, z}; }
  static Spacing unit() { return {1.0, 1.0, 1.0}; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

}  // namespace ctmr
