#include "ssego/scene.hpp"

#include <cmath>
#include <limits>

namespace ssego {

namespace {

constexpr int kWallCount = 6;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double lattice(std::uint32_t seed, int surface, int octave, std::int64_t ix, std::int64_t iy) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(surface * 131 + octave));
  h = splitmix(h ^ static_cast<std::uint64_t>(ix));
  h = splitmix(h ^ static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double value_noise(std::uint32_t seed, int surface, int octave, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double sx = quintic(x - fx), sy = quintic(y - fy);
  const double a = lattice(seed, surface, octave, ix, iy);
  const double b = lattice(seed, surface, octave, ix + 1, iy);
  const double c = lattice(seed, surface, octave, ix, iy + 1);
  const double d = lattice(seed, surface, octave, ix + 1, iy + 1);
  return (a + (b - a) * sx) * (1.0 - sy) + (c + (d - c) * sx) * sy;
}

}  // namespace

void SceneSpec::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!(room_max(i) > room_min(i))) throw ContractViolation("scene: empty room box");
  }
  if (!(texture_scale > 0.0)) throw ContractViolation("scene: texture scale must be positive");
  for (const Gate& g : gates) {
    if (!(g.inner_half.x() > 0.0 && g.inner_half.y() > 0.0 &&
          g.outer_half.x() > g.inner_half.x() && g.outer_half.y() > g.inner_half.y())) {
      throw ContractViolation("scene: gate needs 0 < inner < outer half-extents");
    }
    const Eigen::Vector3d c = g.world_from_gate.translation();
    for (int i = 0; i < 3; ++i) {
      if (!(c(i) > room_min(i) && c(i) < room_max(i))) {
        throw ContractViolation("scene: gate center outside the room");
      }
    }
  }
}

SceneSpec SceneSpec::fronto(double background_depth, double gate_depth, double inner_half,
                            double outer_half, std::uint32_t seed) {
  if (!(gate_depth > 0.0 && gate_depth < background_depth)) {
    throw ContractViolation("fronto scene: gate must sit strictly in front of the background");
  }
  SceneSpec s;
  s.room_min = {-1e3, -1e3, -1e3};
  s.room_max = {1e3, 1e3, background_depth};
  s.texture_seed = seed;
  Gate g;
  g.world_from_gate = SE3Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0, 0, gate_depth));
  g.inner_half = {inner_half, inner_half};
  g.outer_half = {outer_half, outer_half};
  s.gates.push_back(g);
  s.validate();
  return s;
}

RayHit cast_ray(const SceneSpec& scene, const Eigen::Vector3d& origin,
                const Eigen::Vector3d& direction, double min_distance) {
  RayHit hit;
  hit.distance = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double d = direction(axis);
    if (d == 0.0) continue;
    const bool positive = d > 0.0;
    const double bound = positive ? scene.room_max(axis) : scene.room_min(axis);
    const double s = (bound - origin(axis)) / d;
    if (s > min_distance && s < hit.distance) {
      hit.distance = s;
      hit.surface = 2 * axis + (positive ? 1 : 0);
      const Eigen::Vector3d p = origin + s * direction;
      hit.surface_uv = {p((axis + 1) % 3), p((axis + 2) % 3)};
    }
  }
  for (std::size_t k = 0; k < scene.gates.size(); ++k) {
    const Gate& g = scene.gates[k];
    const Eigen::Matrix3d Rt = g.world_from_gate.rotation_matrix().transpose();
    const Eigen::Vector3d o = Rt * (origin - g.world_from_gate.translation());
    const Eigen::Vector3d d = Rt * direction;
    if (d.z() == 0.0) continue;
    const double s = -o.z() / d.z();
    if (!(s > min_distance && s < hit.distance)) continue;
    const Eigen::Vector3d p = o + s * d;
    const double ax = std::abs(p.x()), ay = std::abs(p.y());
    const bool in_outer = ax <= g.outer_half.x() && ay <= g.outer_half.y();
    const bool in_hole = ax < g.inner_half.x() && ay < g.inner_half.y();
    if (in_outer && !in_hole) {
      hit.distance = s;
      hit.surface = kWallCount + static_cast<int>(k);
      hit.surface_uv = p.head<2>();
    }
  }
  return hit;
}

double surface_texture(const SceneSpec& scene, int surface, const Eigen::Vector2d& uv) {
  const double x = uv.x() / scene.texture_scale, y = uv.y() / scene.texture_scale;
  const double noise = 0.65 * value_noise(scene.texture_seed, surface, 0, x, y) +
                       0.35 * value_noise(scene.texture_seed, surface, 1, 2.0 * x + 0.5, 2.0 * y + 0.5);
  // soft checker with 4-cell period
  const double checker = 0.5 + 0.5 * std::sin(0.25 * M_PI * x) * std::sin(0.25 * M_PI * y);
  const double v = 0.6 * noise + 0.4 * checker;
  if (surface >= kWallCount) return 0.55 + 0.4 * v;  // gates: brighter band
  return 0.05 + 0.6 * v;
}

SimulatedFrame render(const SceneSpec& scene, const SE3Pose& world_from_camera,
                      const CameraIntrinsics& camera, double timestamp, int samples) {
  camera.validate();
  if (samples < 1) throw ContractViolation("render: need at least one sample per axis");
  const Eigen::Vector3d origin = world_from_camera.translation();
  for (int i = 0; i < 3; ++i) {
    if (!(origin(i) > scene.room_min(i) && origin(i) < scene.room_max(i))) {
      throw ContractViolation("render: camera outside the scene box");
    }
  }
  const Eigen::Matrix3d R = world_from_camera.rotation_matrix();
  SimulatedFrame f;
  f.image = GrayImage(camera.width, camera.height);
  f.depth = DepthMap(camera.width, camera.height);
  f.world_from_camera = world_from_camera;
  f.timestamp = timestamp;
  std::vector<double> offset, weight;
  double weight_sum = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double o = samples == 1 ? 0.0 : (i + 0.5) / samples * 2.0 - 1.0;
    offset.push_back(o);
    weight.push_back(1.0 - std::abs(o));
  }
  for (double wy : weight)
    for (double wx : weight) weight_sum += wx * wy;
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      f.depth(x, y) = cast_ray(scene, origin, R * camera.ray(x, y)).distance;
      double v = 0.0;
      for (int j = 0; j < samples; ++j) {
        for (int i = 0; i < samples; ++i) {
          const RayHit hit = cast_ray(scene, origin, R * camera.ray(x + offset[i], y + offset[j]));
          v += weight[i] * weight[j] * surface_texture(scene, hit.surface, hit.surface_uv);
        }
      }
      f.image(x, y) = std::clamp(v / weight_sum, 0.0, 1.0);
    }
  }
  return f;
}

VisibilityMap visibility_oracle(const SceneSpec& scene, const SimulatedFrame& target,
                                const SE3Pose& world_from_source, const CameraIntrinsics& camera) {
  if (!camera.matches(target.depth)) throw ContractViolation("visibility_oracle: shape mismatch");
  const SE3Pose source_from_world = world_from_source.inverse();
  const Eigen::Vector3d source_origin = world_from_source.translation();
  const Eigen::Vector3d target_origin = target.world_from_camera.translation();
  const Eigen::Matrix3d Rt = target.world_from_camera.rotation_matrix();
  VisibilityMap out(camera.width, camera.height, Visibility::Visible);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const Eigen::Vector3d X = target_origin + target.depth(x, y) * (Rt * camera.ray(x, y));
      const Eigen::Vector3d Xs = source_from_world * X;
      if (!(Xs.z() > 0.0)) {
        out(x, y) = Visibility::OutOfView;
        continue;
      }
      const Eigen::Vector2d uv{camera.fx * Xs.x() / Xs.z() + camera.cx,
                               camera.fy * Xs.y() / Xs.z() + camera.cy};
      if (!inside_sampling_bounds(uv, camera.width, camera.height)) {
        out(x, y) = Visibility::OutOfView;
        continue;
      }
      // The segment source -> X is parameterized on [0, 1]; any hit before
      // its end hides X.
      const RayHit hit = cast_ray(scene, source_origin, X - source_origin);
      if (hit.distance < 1.0 - 1e-9) out(x, y) = Visibility::Occluded;
    }
  }
  return out;
}

}  // namespace ssego
