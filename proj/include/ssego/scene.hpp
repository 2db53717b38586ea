#pragma once

#include <cstdint>
#include <vector>

#include "ssego/geometry.hpp"

namespace ssego {

/// Square-framed gate: a flat frame in the gate's local z = 0 plane, solid
/// where |x| <= outer.x, |y| <= outer.y and outside the inner opening.
struct Gate {
  SE3Pose world_from_gate;
  Eigen::Vector2d inner_half{0.7, 0.7};
  Eigen::Vector2d outer_half{1.0, 1.0};
};

/// Textured box room (the background) plus gate occluders. The camera must
/// stay strictly inside the room.
struct SceneSpec {
  Eigen::Vector3d room_min{-30.0, -30.0, -10.0};
  Eigen::Vector3d room_max{30.0, 30.0, 20.0};
  std::vector<Gate> gates;
  std::uint32_t texture_seed = 1;
  double texture_scale = 0.6;  // metres per noise cell

  void validate() const;

  /// Fronto scene seen by a camera at the identity pose: background wall at
  /// z = background_depth, one gate in the plane z = gate_depth centered on
  /// the optical axis. Side walls are pushed far out of view.
  static SceneSpec fronto(double background_depth, double gate_depth, double inner_half,
                          double outer_half, std::uint32_t seed);
};

/// Surface identifiers. Walls are 0..5 (-x,+x,-y,+y,-z,+z), gates 6 + k.
struct RayHit {
  double distance = 0.0;  // along the (unnormalized) ray
  int surface = -1;
  Eigen::Vector2d surface_uv = Eigen::Vector2d::Zero();  // metres on the surface
};

/// First intersection along origin + s * direction, s > min_distance.
RayHit cast_ray(const SceneSpec& scene, const Eigen::Vector3d& origin,
                const Eigen::Vector3d& direction, double min_distance = 0.0);

/// Procedural texture value in [0,1] at surface coordinates.
double surface_texture(const SceneSpec& scene, int surface, const Eigen::Vector2d& uv);

struct SimulatedFrame {
  GrayImage image;
  DepthMap depth;
  SE3Pose world_from_camera;
  double timestamp = 0.0;
};

/// Ray-cast render. Depth is the exact z-distance of the first hit through
/// the pixel centre. Intensities are filtered with a tent kernel of one pixel
/// radius, estimated from `samples`×`samples` sub-rays (1 = point sampling),
/// so edges and texture are band-limited the way a lens would do it. Throws
/// ContractViolation when the camera is outside the room.
SimulatedFrame render(const SceneSpec& scene, const SE3Pose& world_from_camera,
                      const CameraIntrinsics& camera, double timestamp = 0.0, int samples = 4);

enum class Visibility : std::uint8_t { Visible = 0, Occluded = 1, OutOfView = 2 };
using VisibilityMap = PixelGrid<Visibility, struct VisibilityTag>;

/**
 * For every pixel of the target render, whether the surface point it sees is
 * visible from the source camera. OutOfView: the projection misses the source
 * image box or falls behind the camera. Occluded: a ray cast from the source
 * camera through the exact continuous projection hits something closer.
 */
VisibilityMap visibility_oracle(const SceneSpec& scene, const SimulatedFrame& target,
                                const SE3Pose& world_from_source, const CameraIntrinsics& camera);

}  // namespace ssego
