#include "tricov/geometry.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace tricov {

namespace {
constexpr double kSingularEps = 1e-12;
}

Mat3 AffineTransform::matrix() const {
  Mat3 m = Mat3::Identity();
  m.topLeftCorner<2, 2>() = linear;
  m.topRightCorner<2, 1>() = translation;
  return m;
}

bool AffineTransform::invertible() const {
  return std::abs(linear.determinant()) > kSingularEps;
}

AffineTransform AffineTransform::inverse() const {
  if (!invertible()) {
    throw std::domain_error("affine transform is singular");
  }
  const Mat2 inv = linear.inverse();
  return {inv, -inv * translation};
}

AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
  return {a.linear * b.linear, a.linear * b.translation + a.translation};
}

Vec2 apply_point(const AffineTransform& t, const Vec2& p) { return t(p); }

Mat2 rotation(double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  Mat2 m;
  m << c, -s, s, c;
  return m;
}

Mat2 shear(double sx, double sy) {
  Mat2 m;
  m << 1.0, sx, sy, 1.0;
  return m;
}

Mat2 scaling(double kx, double ky) {
  Mat2 m;
  m << kx, 0.0, 0.0, ky;
  return m;
}

Mat2 rotation_shear_scale(double radians, double sx, double sy, double kx, double ky) {
  return rotation(radians) * shear(sx, sy) * scaling(kx, ky);
}

Vec2 Homography::operator()(const Vec2& p) const {
  const Eigen::Vector3d q = matrix * Eigen::Vector3d(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

Mat2 Homography::jacobian(const Vec2& p) const {
  const Eigen::Vector3d q = matrix * Eigen::Vector3d(p.x(), p.y(), 1.0);
  const double w = q.z();
  Mat2 j;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      j(r, c) = (matrix(r, c) * w - q(r) * matrix(2, c)) / (w * w);
    }
  }
  return j;
}

Homography Homography::inverse() const {
  Eigen::FullPivLU<Mat3> lu(matrix);
  if (!lu.isInvertible()) {
    throw std::domain_error("homography is singular");
  }
  Homography h{lu.inverse()};
  h.normalize();
  return h;
}

void Homography::normalize() {
  if (std::abs(matrix(2, 2)) > 0.0) matrix /= matrix(2, 2);
}

double Ellipse::area() const { return M_PI * std::abs(shape.determinant()); }

ProjectedRegion project_region(const Homography& h, const Vec2& center, double radius) {
  ProjectedRegion region;
  const Eigen::Vector3d q = h.matrix * Eigen::Vector3d(center.x(), center.y(), 1.0);
  if (std::abs(q.z()) < kSingularEps) {
    region.comparable = false;
    return region;
  }
  const Mat2 jac = h.jacobian(center);
  region.ellipse.center = h(center);
  region.ellipse.shape = radius * jac;
  if (!jac.allFinite() || !region.ellipse.center.allFinite() ||
      std::abs(jac.determinant()) < kSingularEps) {
    region.comparable = false;
  }
  return region;
}

double sample_bilinear(const Image& image, double x, double y, Border border) {
  const double max_x = image.width - 1;
  const double max_y = image.height - 1;
  if (border == Border::kReject) {
    if (!(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y)) {
      std::ostringstream msg;
      msg << "sample (" << x << ", " << y << ") outside " << image.width << "x"
          << image.height << " image";
      throw OutOfBoundsError(msg.str());
    }
  } else {
    x = std::clamp(x, 0.0, max_x);
    y = std::clamp(y, 0.0, max_y);
  }
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  const int x1 = std::min(x0 + 1, image.width - 1);
  const int y1 = std::min(y0 + 1, image.height - 1);
  const double top = (1.0 - fx) * image.at(x0, y0) + fx * image.at(x1, y0);
  const double bottom = (1.0 - fx) * image.at(x0, y1) + fx * image.at(x1, y1);
  return (1.0 - fy) * top + fy * bottom;
}

Patch warp_patch(const Image& source, const Vec2& center, const AffineTransform& t,
                 Border border) {
  const AffineTransform inv = t.inverse();
  Patch patch;
  patch.pixels.resize(kPatchExtent * kPatchExtent);
  patch.center = center;
  patch.transform = t;
  for (int v = 0; v < kPatchExtent; ++v) {
    for (int u = 0; u < kPatchExtent; ++u) {
      const Vec2 offset(u - kPatchCenter, v - kPatchCenter);
      const Vec2 p = center + inv(offset);
      patch.pixels[static_cast<std::size_t>(v) * kPatchExtent + u] =
          static_cast<float>(sample_bilinear(source, p.x(), p.y(), border));
    }
  }
  return patch;
}

std::array<double, 4> warp_footprint(const Vec2& center, const AffineTransform& t) {
  const AffineTransform inv = t.inverse();
  const double lo = -kPatchCenter;
  const double hi = kPatchExtent - 1 - kPatchCenter;
  std::array<double, 4> box{1e300, 1e300, -1e300, -1e300};
  for (double ox : {lo, hi}) {
    for (double oy : {lo, hi}) {
      const Vec2 p = center + inv(Vec2(ox, oy));
      box[0] = std::min(box[0], p.x());
      box[1] = std::min(box[1], p.y());
      box[2] = std::max(box[2], p.x());
      box[3] = std::max(box[3], p.y());
    }
  }
  box[0] = std::floor(box[0]);
  box[1] = std::floor(box[1]);
  box[2] = std::ceil(box[2]);
  box[3] = std::ceil(box[3]);
  return box;
}

Image warp_image(const Image& source, const AffineTransform& t, int width, int height,
                 float fill) {
  const AffineTransform inv = t.inverse();
  Image out(width, height, fill);
  const double max_x = source.width - 1;
  const double max_y = source.height - 1;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vec2 p = inv(Vec2(x, y));
      if (p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= max_x && p.y() <= max_y) {
        out.at(x, y) =
            static_cast<float>(sample_bilinear(source, p.x(), p.y(), Border::kClamp));
      }
    }
  }
  return out;
}

}  // namespace tricov
