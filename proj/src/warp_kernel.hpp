#pragma once

// Per-pixel reprojection shared by the public warps and the loss engine, so
// that the masks and sampled values seen by the losses are exactly the ones
// returned by inverse_warp / warp_depth.

#include "ssego/geometry.hpp"

namespace ssego::detail {

struct PixelWarp {
  Eigen::Vector3d point;      // target point expressed in the source frame
  Eigen::Vector3d normalized; // point / point.z
  Eigen::Vector2d uv;         // continuous source coordinate
  BilinearTaps taps{};
  bool image_valid = false;   // in front and inside sampling bounds
  bool depth_valid = false;   // additionally: back-transformed depth > 0
  double sampled_depth = 0.0;
  Eigen::Vector3d source_point = Eigen::Vector3d::Zero();
  double back_depth = 0.0;    // z of the sampled source surface in the target frame
};

inline PixelWarp warp_pixel(int x, int y, double target_depth, const CameraIntrinsics& camera,
                            const SE3Pose& target_to_source, const Eigen::Vector3d& r3,
                            const DepthMap* source_depth) {
  PixelWarp w;
  w.point = target_to_source * (target_depth * camera.ray(x, y));
  if (!(w.point.z() > 0.0)) return w;
  w.normalized = w.point / w.point.z();
  w.uv = {camera.fx * w.normalized.x() + camera.cx, camera.fy * w.normalized.y() + camera.cy};
  if (!inside_sampling_bounds(w.uv, camera.width, camera.height)) return w;
  w.taps = bilinear_taps(w.uv.x(), w.uv.y(), camera.width, camera.height);
  w.image_valid = true;
  if (source_depth) {
    const BilinearTaps& t = w.taps;
    const DepthMap& d = *source_depth;
    w.sampled_depth = t.w00 * d(t.x0, t.y0) + t.w10 * d(t.x1, t.y0) + t.w01 * d(t.x0, t.y1) +
                      t.w11 * d(t.x1, t.y1);
    w.source_point = w.sampled_depth * w.normalized;
    w.back_depth = r3.dot(w.source_point - target_to_source.translation());
    w.depth_valid = w.back_depth > 0.0;
  }
  return w;
}

template <typename T, typename Tag>
double sample(const PixelGrid<T, Tag>& grid, const BilinearTaps& t) {
  return t.w00 * grid(t.x0, t.y0) + t.w10 * grid(t.x1, t.y0) + t.w01 * grid(t.x0, t.y1) +
         t.w11 * grid(t.x1, t.y1);
}

}  // namespace ssego::detail
