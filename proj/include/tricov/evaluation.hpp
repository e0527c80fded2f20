#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tricov/extractor.hpp"
#include "tricov/geometry.hpp"

namespace tricov {

inline constexpr double kOverlapThreshold = 0.4;
inline constexpr int kEllipseVertices = 256;

struct OverlapResult {
  double ratio = 0.0;
  bool comparable = true;  // false: projection degenerate, ratio forced to 0
};

// IoU of circle(a) with circle(b) projected into a's image. `a_to_b` maps
// a's image onto b's; its inverse is linearized at b's center. Circles
// (similarity Jacobian) are handled in closed form, ellipses as
// 256-gons clipped against each other.
OverlapResult region_overlap(const Keypoint& a, const Keypoint& b, const Homography& a_to_b);

// Closed-form intersection over union of two discs.
double circle_iou(const Vec2& c1, double r1, const Vec2& c2, double r2);

// Convex polygon helpers (counter-clockwise or clockwise, consistent).
std::vector<Vec2> ellipse_polygon(const Ellipse& ellipse, int vertices = kEllipseVertices);
double polygon_area(std::span<const Vec2> polygon);
std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip);

struct OverlapPair {
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  double ratio = 0.0;
};

struct ImageSize {
  int width = 0;
  int height = 0;
  bool contains(const Vec2& p) const {
    return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1 && p.y() <= height - 1;
  }
};

struct RepeatabilityResult {
  std::string sequence;
  std::string pair;
  std::size_t k = 0;
  std::size_t correspondences = 0;
  std::size_t shared_a = 0;  // points of A whose projection lands in B
  std::size_t shared_b = 0;
  std::vector<OverlapPair> matches;
  std::optional<double> repeatability;  // absent when the shared view is empty
};

// All pairs with overlap above `threshold` among shared-view points, sorted
// by descending overlap (ties by index).
std::vector<OverlapPair> overlap_candidates(std::span<const Keypoint> a,
                                            std::span<const Keypoint> b,
                                            const Homography& a_to_b, ImageSize size_a,
                                            ImageSize size_b, double threshold);

// One-to-one greedy matching by descending overlap; repeatability is
// correspondences / min(shared_a, shared_b).
RepeatabilityResult repeatability(std::span<const Keypoint> a, std::span<const Keypoint> b,
                                  const Homography& a_to_b, ImageSize size_a,
                                  ImageSize size_b, double threshold = kOverlapThreshold);

inline constexpr std::size_t kDescriptorSize = 128;

struct Descriptor {
  std::array<float, kDescriptorSize> values{};
  bool low_texture = false;  // no gradient energy, all zeros
};

// 4x4 cells x 8 orientation bins over the square of side 2*radius around
// the keypoint; L2 normalized, clipped at 0.2, renormalized. Samples
// outside the image are clamped to the border.
Descriptor simple_descriptor(const Image& image, const Keypoint& keypoint);

struct MatchingResult {
  std::string sequence;
  std::string pair;
  std::size_t k = 0;  // max(|A|, |B|)
  std::size_t matches = 0;
  std::size_t correct = 0;
  std::optional<double> matching_score;
};

// Mutual nearest neighbours in descriptor space; a match is correct when
// the two regions overlap above `threshold`. Low-texture descriptors never
// match.
MatchingResult matching_score(std::span<const Descriptor> desc_a,
                              std::span<const Descriptor> desc_b,
                              std::span<const Keypoint> a, std::span<const Keypoint> b,
                              const Homography& a_to_b, ImageSize size_a, ImageSize size_b,
                              double threshold = kOverlapThreshold);

MatchingResult matching_score(const Image& image_a, const Image& image_b,
                              std::span<const Keypoint> a, std::span<const Keypoint> b,
                              const Homography& a_to_b, double threshold = kOverlapThreshold);

// k points uniform over the image, fixed radius, score 1.
std::vector<Keypoint> random_keypoints(ImageSize size, std::size_t k, std::uint64_t seed,
                                       double radius = kSupportRadius);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t count = 0;
};
MeanStd mean_std(std::span<const double> values);

// One evaluated image pair of one run.
struct EvalRecord {
  std::string detector;
  std::string dataset;
  std::string pair;
  std::size_t run = 0;
  std::size_t k = 0;
  std::optional<double> repeatability;
  std::optional<double> matching_score;
};

struct AggregateRow {
  std::string detector;
  std::string dataset;
  std::size_t k = 0;
  MeanStd repeatability;  // over runs of the per-run mean over pairs
  MeanStd matching_score;
  std::size_t pairs = 0;  // pairs with a defined repeatability, summed over runs
};

// Rows ordered by first appearance of (detector, dataset, k).
std::vector<AggregateRow> aggregate_report(std::span<const EvalRecord> records);

extern const char* const kDescriptorBanner;

// Human readable table with one column per dataset and k, values in percent.
std::string format_report(std::span<const AggregateRow> rows, const std::string& title = {});
// Tab separated, one line per row.
std::string format_report_tsv(std::span<const AggregateRow> rows);
std::string format_records_tsv(std::span<const EvalRecord> records);

}  // namespace tricov
