#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tricov {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Single-channel image, row-major, pixel centers at integer coordinates.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  bool empty() const { return pixels.empty(); }
};

// p -> linear * p + translation
struct AffineTransform {
  Mat2 linear = Mat2::Identity();
  Vec2 translation = Vec2::Zero();

  static AffineTransform identity() { return {}; }
  static AffineTransform translate(const Vec2& t) { return {Mat2::Identity(), t}; }
  static AffineTransform from_linear(const Mat2& m) { return {m, Vec2::Zero()}; }

  Vec2 operator()(const Vec2& p) const { return linear * p + translation; }
  Mat3 matrix() const;
  double determinant() const { return linear.determinant(); }
  bool invertible() const;
  AffineTransform inverse() const;
};

// (a o b)(p) = a(b(p))
AffineTransform compose(const AffineTransform& a, const AffineTransform& b);
Vec2 apply_point(const AffineTransform& t, const Vec2& p);

// Rotation under the y-down convention: R(90 deg) maps (1, 0) to (0, 1).
Mat2 rotation(double radians);
Mat2 shear(double sx, double sy);
Mat2 scaling(double kx, double ky);
// R(theta) * Shear(sx, sy) * Scale(kx, ky)
Mat2 rotation_shear_scale(double radians, double sx, double sy, double kx, double ky);

struct Homography {
  Mat3 matrix = Mat3::Identity();

  static Homography identity() { return {}; }
  static Homography from_affine(const AffineTransform& t) { return {t.matrix()}; }

  Vec2 operator()(const Vec2& p) const;
  // Jacobian of the projective map at p.
  Mat2 jacobian(const Vec2& p) const;
  Homography inverse() const;
  // Scales so the bottom-right entry is 1 when it is nonzero.
  void normalize();
};

// Region {center + shape * u : |u| <= 1}. `shape` is the local linear map
// applied to a unit disk; covariance() gives the 2x2 shape matrix.
struct Ellipse {
  Vec2 center = Vec2::Zero();
  Mat2 shape = Mat2::Identity();

  Mat2 covariance() const { return shape * shape.transpose(); }
  double area() const;
};

struct ProjectedRegion {
  Ellipse ellipse;
  bool comparable = true;  // false when the local Jacobian is degenerate
};

// Circle of `radius` around `center` pushed through the local affine
// approximation of `h` at `center`.
ProjectedRegion project_region(const Homography& h, const Vec2& center, double radius);

inline constexpr int kPatchExtent = 32;
inline constexpr int kPatchCenter = 16;  // patch index of the center pixel

// Out-of-image sampling policy.
enum class Border { kClamp, kReject };

class OutOfBoundsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bilinear sample; kClamp clamps to the nearest edge pixel, kReject throws
// when any contributing neighbour lies outside the image.
double sample_bilinear(const Image& image, double x, double y, Border border);

// Patch pixel (u, v) sits at offset o = (u - 16, v - 16) from the patch center
// and samples the source at center + t^-1(o).
struct Patch {
  std::vector<float> pixels;  // 32 * 32 row-major
  int source_id = -1;
  Vec2 center = Vec2::Zero();
  AffineTransform transform;
};

Patch warp_patch(const Image& source, const Vec2& center, const AffineTransform& t,
                 Border border = Border::kReject);

// Axis-aligned bounds of the source pixels a warp touches, including the
// bilinear neighbours: {min_x, min_y, max_x, max_y}.
std::array<double, 4> warp_footprint(const Vec2& center, const AffineTransform& t);

// Generic warp of an image: output pixel q samples source at t^-1(q).
Image warp_image(const Image& source, const AffineTransform& t, int width, int height,
                 float fill);

}  // namespace tricov
