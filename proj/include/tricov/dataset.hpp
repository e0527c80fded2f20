#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "tricov/geometry.hpp"
#include "tricov/random.hpp"

namespace tricov {

inline constexpr std::size_t kPatchValues = kPatchExtent * kPatchExtent;

// Perturbation ranges for tuple generation. Defaults are the published
// training values.
struct AugmentationConfig {
  double scale_min = 0.85;
  double scale_max = 1.15;
  double shear_min = -0.15;
  double shear_max = 0.15;
  double rotation_min_deg = 0.0;
  double rotation_max_deg = 360.0;
  double jitter = 5.0;       // reference patch offset, uniform in [-jitter, jitter]
  double translation = 6.0;  // triplet offsets, uniform in [-translation, translation]
  std::uint64_t tuple_count = 256000;
  std::uint64_t seed = 0;

  // Identity warps: every tuple member equals the reference patch.
  static AugmentationConfig none();

  // Distance from a center to the image border that every warped footprint
  // of a tuple stays within.
  int required_margin() const;
  int minimum_image_extent() const { return 2 * required_margin() + 1; }
};

// Random linear map R(theta) * Shear(sx, sy) * Scale(kx, ky) drawn from the
// configured ranges.
Mat2 sample_affinity(const AugmentationConfig& config, Rng& rng);

enum PatchRole : std::size_t { kReference = 0, kShift1, kShift2, kShift3, kAffine };

// x, x1, x2, x3, xA with x_i = t_i * x and xA = A * x. Pixels are normalized.
struct PatchTuple {
  std::array<Patch, 5> patches;
  std::array<Vec2, 3> translations{Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
  AffineTransform affine;  // zero translation when generated here

  const Patch& reference() const { return patches[kReference]; }
};

// Draws one tuple from `source`. All five patches are warped straight from
// the source with composed transforms.
PatchTuple sample_tuple(const Image& source, const AugmentationConfig& config, Rng& rng,
                        int source_id = 0);

// Tuple `index` of a training set: source image and perturbations come from
// the (seed, index) random stream.
PatchTuple generate_tuple(std::span<const Image> images, const AugmentationConfig& config,
                          std::uint64_t index);

// Gray -> zero mean, unit variance (variance floored at 1e-8).
std::vector<float> normalize_patch(std::span<const float> raw, int channels = 1);
Patch normalize_patch(Patch raw);

// Random-access tuple storage used by the trainer.
class TupleSource {
 public:
  virtual ~TupleSource() = default;
  virtual std::size_t size() const = 0;
  virtual PatchTuple get(std::size_t index) const = 0;
};

class InMemoryTuples : public TupleSource {
 public:
  explicit InMemoryTuples(std::vector<PatchTuple> tuples) : tuples_(std::move(tuples)) {}
  std::size_t size() const override { return tuples_.size(); }
  PatchTuple get(std::size_t index) const override { return tuples_.at(index); }
  const std::vector<PatchTuple>& tuples() const { return tuples_; }

 private:
  std::vector<PatchTuple> tuples_;
};

// Binary archive layout (little-endian):
//   header: "TRICOVTA" | u32 version | u32 patch extent | u64 count | u64 seed |
//           f64 x 8 augmentation ranges
//   record: f32 x 5*1024 patches | f64 x 6 translations | f64 x 6 affine
//           (a11 a12 a21 a22 tx ty)
inline constexpr std::uint32_t kArchiveVersion = 1;

class TupleArchiveWriter {
 public:
  TupleArchiveWriter(const std::filesystem::path& path, const AugmentationConfig& config);
  void write(const PatchTuple& tuple);
  // Patches the record count into the header and flushes.
  void close();
  std::uint64_t written() const { return written_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::uint64_t written_ = 0;
};

class TupleArchive : public TupleSource {
 public:
  explicit TupleArchive(const std::filesystem::path& path);
  std::size_t size() const override { return static_cast<std::size_t>(count_); }
  PatchTuple get(std::size_t index) const override;
  const AugmentationConfig& config() const { return config_; }

 private:
  std::filesystem::path path_;
  mutable std::ifstream in_;
  mutable std::mutex mutex_;
  std::uint64_t count_ = 0;
  AugmentationConfig config_;
};

std::vector<PatchTuple> build_tuples(std::span<const Image> images,
                                     const AugmentationConfig& config,
                                     std::size_t threads = 1);

// Generates config.tuple_count tuples and streams them to `path`.
void build_training_set(std::span<const Image> images, const AugmentationConfig& config,
                        const std::filesystem::path& path, std::size_t threads = 1);

// Images of a sequence and the homographies mapping image 0 to image k.
struct SequenceDataset {
  std::string name;
  std::vector<Image> images;
  std::vector<Homography> homographies;  // size images.size() - 1
  bool illumination_only = false;
};

// img1..imgN (.pgm/.ppm) plus H1to2p..H1toNp. A folder without any
// homography files is treated as illumination-only with identity maps.
SequenceDataset load_sequence(const std::filesystem::path& directory);
void save_sequence(const std::filesystem::path& directory, const SequenceDataset& sequence);

// Nine whitespace separated reals, row-major.
Homography read_homography(const std::filesystem::path& path);
Homography parse_homography(const std::string& text, const std::string& name);
void write_homography(const std::filesystem::path& path, const Homography& h);

// Procedural image with polygons, rectangles and blobs on a shaded
// background; values in [0, 1].
Image synthetic_corner_image(int width, int height, std::uint64_t seed);

struct SyntheticPair {
  Image first;
  Image second;
  Homography homography;  // first -> second
};

// Two views of one synthetic scene related by a random affinity (ranges of
// `config`) about the image center. Both views are crops of a larger canvas,
// so no fill borders appear inside either image.
SyntheticPair synthetic_pair(int width, int height, const AugmentationConfig& config,
                             std::uint64_t seed);

}  // namespace tricov
