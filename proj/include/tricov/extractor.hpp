#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tricov/geometry.hpp"
#include "tricov/nn.hpp"

namespace tricov {

// Stride-4 grid of fully valid 32x32 receptive fields. Cell (r, c) covers
// the patch with top-left corner (4c, 4r).
struct GridGeometry {
  std::size_t rows = 0;
  std::size_t cols = 0;

  static GridGeometry for_image(int width, int height);
  Vec2 center(std::size_t row, std::size_t col) const {
    return {static_cast<double>(kOutputStride * col + kPatchSize / 2),
            static_cast<double>(kOutputStride * row + kPatchSize / 2)};
  }
  std::size_t size() const { return rows * cols; }
};

struct DenseRegression {
  GridGeometry grid;
  std::vector<Vec2> translations;  // row-major over the grid

  // Cell center plus predicted translation.
  std::vector<Vec2> positions() const;
};

// Zero mean, unit variance over the whole image (variance floored at 1e-8).
Image standardize_image(const Image& image);

// Runs the network over the image in tiles; results equal a single pass.
// The image is used as given, callers standardize first.
DenseRegression dense_regress(const Image& image, const Network<float>& network,
                              std::size_t threads = 1, std::size_t tile_cells = 24);

struct VoteMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  std::size_t in_bounds = 0;  // positions that contributed
  std::size_t dropped = 0;    // positions outside the image

  VoteMap() = default;
  VoteMap(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0) {}
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double mass() const;
};

// Bilinear splat of each position onto its 4 neighbouring pixels. A position
// counts when 0 <= x <= width-1 and 0 <= y <= height-1.
VoteMap splat_votes(std::span<const Vec2> positions, int width, int height,
                    std::size_t threads = 1);

VoteMap box_blur3(const VoteMap& map);

struct Keypoint {
  Vec2 position = Vec2::Zero();
  double score = 0.0;
  double radius = 16.0;
};

inline constexpr int kDefaultNmsRadius = 5;
inline constexpr double kSupportRadius = 16.0;

// Pixels whose value is positive and not exceeded inside the
// (2r+1)x(2r+1) window; among equal values the first in (y, x) scan order
// wins. Sorted by score, then (y, x); at most k returned. Positions get a
// 3x3 parabolic sub-pixel offset when `refine` is set.
std::vector<Keypoint> nms_select(const VoteMap& map, std::size_t k,
                                 int radius = kDefaultNmsRadius, bool refine = true,
                                 double support_radius = kSupportRadius);

struct ExtractConfig {
  std::size_t k = 200;
  int nms_radius = kDefaultNmsRadius;
  double support_radius = kSupportRadius;
  bool blur = false;
  bool standardize = true;
  std::size_t threads = 1;
};

struct Extraction {
  std::vector<Keypoint> keypoints;
  VoteMap votes;
  DenseRegression regression;
};

// Throws InputError when the image is smaller than one patch.
Extraction extract(const Image& image, const Network<float>& network,
                   const ExtractConfig& config = {});

struct KeypointFile {
  std::string image_id;
  std::string checkpoint_hash;
  std::size_t k = 0;
  int nms_radius = kDefaultNmsRadius;
  std::string config_hash;
  std::vector<Keypoint> keypoints;
};

// Header lines start with '#' ("# key value"), then "x y score radius".
void write_keypoints(const std::filesystem::path& path, const KeypointFile& file);
KeypointFile read_keypoints(const std::filesystem::path& path);

}  // namespace tricov
