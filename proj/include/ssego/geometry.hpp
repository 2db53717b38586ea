#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

#include "ssego/errors.hpp"

namespace ssego {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/**
 * Dense row-major H x W field. The Tag parameter keeps images, depth maps,
 * disparity maps and masks from being mixed up at call sites.
 */
template <typename T, typename Tag>
class PixelGrid {
 public:
  using value_type = T;

  PixelGrid() = default;
  PixelGrid(int width, int height, T fill = T{})
      : width_(width), height_(height) {
    if (width < 0 || height < 0) throw ContractViolation("negative grid size");
    values_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(int x, int y) { return values_[index(x, y)]; }
  const T& operator()(int x, int y) const { return values_[index(x, y)]; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  std::vector<T>& values() noexcept { return values_; }
  const std::vector<T>& values() const noexcept { return values_; }

  template <typename OtherT, typename OtherTag>
  bool same_shape(const PixelGrid<OtherT, OtherTag>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  bool operator==(const PixelGrid&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> values_;
};

struct GrayTag {};
struct DepthTag {};
struct DisparityTag {};
struct MaskTag {};
struct ErrorTag {};

/// Intensities in [0,1].
using GrayImage = PixelGrid<double, GrayTag>;
/// Metric (or globally scaled) depth along the optical axis. Warped depth maps
/// carry 0 at pixels flagged invalid by their companion mask.
using DepthMap = PixelGrid<double, DepthTag>;
using DisparityMap = PixelGrid<double, DisparityTag>;
/// 1 where the reprojected coordinate is usable, 0 otherwise.
using ValidMask = PixelGrid<std::uint8_t, MaskTag>;
/// Nonnegative per-pixel loss contributions.
using PerPixelErrorMap = PixelGrid<double, ErrorTag>;

void validate_image(const GrayImage& image);
void validate_depth(const DepthMap& depth);
DisparityMap to_disparity(const DepthMap& depth);

/// Pinhole intrinsics. Pixel centers sit at integer coordinates; x right, y down.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;
  Eigen::Matrix3d matrix() const;
  /// Viewing ray with unit z for pixel (u, v).
  Eigen::Vector3d ray(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }
  template <typename T, typename Tag>
  bool matches(const PixelGrid<T, Tag>& grid) const noexcept {
    return grid.width() == width && grid.height() == height;
  }
};

/**
 * Rigid transform x -> R x + t. Twists are ordered (translation, rotation),
 * and perturbations are applied on the left: T(eps) = exp(eps) * T.
 */
class SE3Pose {
 public:
  SE3Pose() = default;
  SE3Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation);
  SE3Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static SE3Pose identity() { return {}; }
  static SE3Pose exp(const Vector6d& twist);
  Vector6d log() const;

  const Eigen::Quaterniond& rotation() const noexcept { return rotation_; }
  const Eigen::Vector3d& translation() const noexcept { return translation_; }
  Eigen::Matrix3d rotation_matrix() const { return rotation_.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;

  SE3Pose inverse() const;
  SE3Pose operator*(const SE3Pose& other) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& point) const {
    return rotation_ * point + translation_;
  }
  /// Adjoint: exp(Ad * eps) * T == T * exp(eps).
  Matrix6d adjoint() const;

 private:
  Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

inline SE3Pose se3_exp(const Vector6d& twist) { return SE3Pose::exp(twist); }
inline Vector6d se3_log(const SE3Pose& pose) { return pose.log(); }

Eigen::Matrix3d hat(const Eigen::Vector3d& w);
Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w);
Eigen::Vector3d so3_log(const Eigen::Matrix3d& rotation);

struct Projection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  /// Depth of the transformed point in the source camera.
  double z = 0.0;
  /// False when the transformed point is on or behind the source image plane.
  bool in_front = false;
};

/// Maps target pixel p at the given depth through T into the source camera.
/// No clamping or bounds test is applied to the result.
Projection project(const Eigen::Vector2d& pixel, double depth,
                   const CameraIntrinsics& camera, const SE3Pose& target_to_source);

/// d(pixel)/d(eps) for the left perturbation exp(eps) * T, and d(pixel)/d(depth).
struct ProjectionJacobian {
  Eigen::Matrix<double, 2, 6> pose;
  Eigen::Vector2d depth;
};
ProjectionJacobian project_jacobian(const Eigen::Vector2d& pixel, double depth,
                                    const CameraIntrinsics& camera,
                                    const SE3Pose& target_to_source);

/// True when a continuous coordinate lies in [0, W-1] x [0, H-1], i.e. all four
/// bilinear taps exist.
bool inside_sampling_bounds(const Eigen::Vector2d& pixel, int width, int height);

/// Bilinear lookup at a continuous coordinate that satisfies inside_sampling_bounds.
template <typename T, typename Tag>
double bilinear(const PixelGrid<T, Tag>& grid, double u, double v);

struct BilinearTaps {
  int x0, y0, x1, y1;
  double w00, w10, w01, w11;
};
BilinearTaps bilinear_taps(double u, double v, int width, int height);

struct WarpedImage {
  GrayImage image;
  ValidMask mask;
};

/// Reconstructs the target view by sampling `source` at the projections of
/// the target pixels. Invalid pixels carry 0.
WarpedImage inverse_warp(const GrayImage& source, const DepthMap& target_depth,
                         const SE3Pose& target_to_source,
                         const CameraIntrinsics& camera);

struct WarpedDepth {
  DepthMap depth;
  ValidMask mask;
};

/// Samples the source depth at the projections of the target pixels and
/// expresses the sampled surface point back in the target frame (its z).
WarpedDepth warp_depth(const DepthMap& source_depth, const DepthMap& target_depth,
                       const SE3Pose& target_to_source, const CameraIntrinsics& camera);

// ---------------------------------------------------------------------------

template <typename T, typename Tag>
double bilinear(const PixelGrid<T, Tag>& grid, double u, double v) {
  const BilinearTaps t = bilinear_taps(u, v, grid.width(), grid.height());
  return t.w00 * static_cast<double>(grid(t.x0, t.y0)) +
         t.w10 * static_cast<double>(grid(t.x1, t.y0)) +
         t.w01 * static_cast<double>(grid(t.x0, t.y1)) +
         t.w11 * static_cast<double>(grid(t.x1, t.y1));
}

}  // namespace ssego
