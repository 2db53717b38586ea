#include "ssego/geometry.hpp"

#include <cmath>
#include <string>

#include "warp_kernel.hpp"

namespace ssego {

namespace {

// Reprojections of integer pixels through (near-)identity motions come back
// within a few ulps of the grid; treat those as exact grid hits.
constexpr double kGridSnap = 1e-9;

double snap(double c) {
  const double r = std::round(c);
  return std::abs(c - r) < kGridSnap ? r : c;
}

}  // namespace

void validate_image(const GrayImage& image) {
  for (double v : image.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ContractViolation("image intensity outside [0,1]: " + std::to_string(v));
    }
  }
}

void validate_depth(const DepthMap& depth) {
  for (double v : depth.values()) {
    if (!std::isfinite(v) || v <= 0.0) {
      throw ContractViolation("depth must be positive and finite, got " + std::to_string(v));
    }
  }
}

DisparityMap to_disparity(const DepthMap& depth) {
  validate_depth(depth);
  DisparityMap out(depth.width(), depth.height());
  for (std::size_t i = 0; i < depth.size(); ++i) out[i] = 1.0 / depth[i];
  return out;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ContractViolation("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ContractViolation("image size must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    throw ContractViolation("principal point outside the image");
  }
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

// --- SO(3) / SE(3) ---------------------------------------------------------

Eigen::Matrix3d hat(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return m;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  if (theta < 1e-12) return Eigen::Matrix3d::Identity() + hat(w);
  return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

Eigen::Vector3d so3_log(const Eigen::Matrix3d& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

namespace {

// Left Jacobian of SO(3), V in t = V * v.
Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  const Eigen::Matrix3d W = hat(w);
  if (theta < 1e-5) {
    return Eigen::Matrix3d::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double t2 = theta * theta;
  return Eigen::Matrix3d::Identity() + (1.0 - std::cos(theta)) / t2 * W +
         (theta - std::sin(theta)) / (t2 * theta) * W * W;
}

Eigen::Matrix3d so3_left_jacobian_inverse(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  const Eigen::Matrix3d W = hat(w);
  if (theta < 1e-5) {
    return Eigen::Matrix3d::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double half = 0.5 * theta;
  const double coef = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  return Eigen::Matrix3d::Identity() - 0.5 * W + coef * W * W;
}

}  // namespace

SE3Pose::SE3Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation.normalized()), translation_(translation) {}

SE3Pose::SE3Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(Eigen::Quaterniond(rotation).normalized()), translation_(translation) {}

SE3Pose SE3Pose::exp(const Vector6d& twist) {
  const Eigen::Vector3d v = twist.head<3>();
  const Eigen::Vector3d w = twist.tail<3>();
  const double theta = w.norm();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  if (theta > 0.0) q = Eigen::Quaterniond(Eigen::AngleAxisd(theta, w / theta));
  return SE3Pose(q, so3_left_jacobian(w) * v);
}

Vector6d SE3Pose::log() const {
  const Eigen::AngleAxisd aa(rotation_);
  Eigen::Vector3d w = aa.angle() * aa.axis();
  if (aa.angle() == 0.0) w.setZero();
  Vector6d out;
  out.head<3>() = so3_left_jacobian_inverse(w) * translation_;
  out.tail<3>() = w;
  return out;
}

Eigen::Matrix4d SE3Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

SE3Pose SE3Pose::inverse() const {
  const Eigen::Quaterniond qi = rotation_.conjugate();
  return SE3Pose(qi, -(qi * translation_));
}

SE3Pose SE3Pose::operator*(const SE3Pose& other) const {
  return SE3Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
}

Matrix6d SE3Pose::adjoint() const {
  const Eigen::Matrix3d R = rotation_matrix();
  Matrix6d ad = Matrix6d::Zero();
  ad.topLeftCorner<3, 3>() = R;
  ad.topRightCorner<3, 3>() = hat(translation_) * R;
  ad.bottomRightCorner<3, 3>() = R;
  return ad;
}

// --- projection ------------------------------------------------------------

Projection project(const Eigen::Vector2d& pixel, double depth,
                   const CameraIntrinsics& camera, const SE3Pose& target_to_source) {
  if (!(depth > 0.0)) throw ContractViolation("project: depth must be positive");
  const Eigen::Vector3d point = target_to_source * (depth * camera.ray(pixel.x(), pixel.y()));
  Projection out;
  out.z = point.z();
  out.in_front = point.z() > 0.0;
  if (out.in_front) {
    const Eigen::Vector3d n = point / point.z();
    out.pixel = {camera.fx * n.x() + camera.cx, camera.fy * n.y() + camera.cy};
  }
  return out;
}

ProjectionJacobian project_jacobian(const Eigen::Vector2d& pixel, double depth,
                                    const CameraIntrinsics& camera,
                                    const SE3Pose& target_to_source) {
  const Eigen::Vector3d ray = camera.ray(pixel.x(), pixel.y());
  const Eigen::Vector3d y = target_to_source * (depth * ray);
  const double iz = 1.0 / y.z();
  Eigen::Matrix<double, 2, 3> duv;
  duv << camera.fx * iz, 0.0, -camera.fx * y.x() * iz * iz,
      0.0, camera.fy * iz, -camera.fy * y.y() * iz * iz;
  Eigen::Matrix<double, 3, 6> dy;
  dy.leftCols<3>().setIdentity();
  dy.rightCols<3>() = -hat(y);
  ProjectionJacobian j;
  j.pose = duv * dy;
  j.depth = duv * (target_to_source.rotation_matrix() * ray);
  return j;
}

bool inside_sampling_bounds(const Eigen::Vector2d& pixel, int width, int height) {
  const double u = snap(pixel.x());
  const double v = snap(pixel.y());
  return u >= 0.0 && v >= 0.0 && u <= width - 1 && v <= height - 1;
}

BilinearTaps bilinear_taps(double u, double v, int width, int height) {
  u = snap(u);
  v = snap(v);
  BilinearTaps t{};
  t.x0 = static_cast<int>(std::floor(u));
  t.y0 = static_cast<int>(std::floor(v));
  const double ax = u - t.x0;
  const double ay = v - t.y0;
  t.x1 = t.x0 + 1 < width ? t.x0 + 1 : t.x0;
  t.y1 = t.y0 + 1 < height ? t.y0 + 1 : t.y0;
  t.w00 = (1.0 - ax) * (1.0 - ay);
  t.w10 = ax * (1.0 - ay);
  t.w01 = (1.0 - ax) * ay;
  t.w11 = ax * ay;
  return t;
}

// --- warps -----------------------------------------------------------------

namespace {

void check_warp_inputs(const GrayImage* source, const DepthMap& source_depth_or_target,
                       const DepthMap& target_depth, const CameraIntrinsics& camera) {
  camera.validate();
  if ((source && !camera.matches(*source)) || !camera.matches(source_depth_or_target) ||
      !camera.matches(target_depth)) {
    throw ContractViolation("warp: image shapes disagree with the camera");
  }
}

}  // namespace

WarpedImage inverse_warp(const GrayImage& source, const DepthMap& target_depth,
                         const SE3Pose& target_to_source, const CameraIntrinsics& camera) {
  check_warp_inputs(&source, target_depth, target_depth, camera);
  validate_depth(target_depth);
  const Eigen::Vector3d r3 = target_to_source.rotation_matrix().col(2);
  WarpedImage out{GrayImage(camera.width, camera.height, 0.0),
                  ValidMask(camera.width, camera.height, 0)};
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const detail::PixelWarp w =
          detail::warp_pixel(x, y, target_depth(x, y), camera, target_to_source, r3, nullptr);
      if (!w.image_valid) continue;
      out.image(x, y) = detail::sample(source, w.taps);
      out.mask(x, y) = 1;
    }
  }
  return out;
}

WarpedDepth warp_depth(const DepthMap& source_depth, const DepthMap& target_depth,
                       const SE3Pose& target_to_source, const CameraIntrinsics& camera) {
  check_warp_inputs(nullptr, source_depth, target_depth, camera);
  validate_depth(source_depth);
  validate_depth(target_depth);
  const Eigen::Vector3d r3 = target_to_source.rotation_matrix().col(2);
  WarpedDepth out{DepthMap(camera.width, camera.height, 0.0),
                  ValidMask(camera.width, camera.height, 0)};
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const detail::PixelWarp w = detail::warp_pixel(x, y, target_depth(x, y), camera,
                                                     target_to_source, r3, &source_depth);
      if (!w.depth_valid) continue;
      out.depth(x, y) = w.back_depth;
      out.mask(x, y) = 1;
    }
  }
  return out;
}

}  // namespace ssego
