#pragma once

// Gradient checks of whole networks: tape gradients (float32) against
// central differences of the double-precision reference forward.

#include <cstdint>
#include <string>
#include <vector>

namespace ref {

struct NetGradCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;
  // Elements where the float32 and float64 passes took different ReLU
  // branches, compared again at a shifted parameter value.
  std::size_t rechecked = 0;
  bool passed = false;
};

// Generator and discriminator at S = 64 (desk scale) and both FCN input
// modes through the focal loss. `elements` parameter entries are drawn per
// network.
std::vector<NetGradCheck> check_networks(std::uint64_t seed, std::size_t elements = 20, double tolerance = 1e-2);

}  // namespace ref
