#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tricov {

struct GradcheckConfig {
  std::uint64_t seed = 0;
  int layer = 0;  // 1..5 restricts the network check to one layer, 0 = all
  bool check_network = true;
  bool check_losses = true;
  std::size_t coordinates_per_layer = 200;
  double step = 1e-3;  // exact for quadratics; probes that cross a kink are redrawn
  double tolerance = 1e-4;
};

struct GradcheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t kinks_skipped = 0;  // probes that crossed a ReLU or pooling switch
  double max_relative_error = 0.0;
  std::string worst;              // coordinate with the largest error
  bool finite = true;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double seconds = 0.0;
  bool pass() const;
};

// |a - n| / max(|a| + |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Central differences in 64-bit against the analytic gradients of every
// network layer (driven by the full triplet + affine loss) and of every
// loss variant.
GradcheckReport run_gradcheck(const GradcheckConfig& config);

std::string format_gradcheck(const GradcheckReport& report, double tolerance);

}  // namespace tricov
