#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssego/geometry.hpp"
#include "ssego/scene.hpp"
#include "ssego/sensors.hpp"

namespace ssego {

enum class TrajectoryKind { Hover, Straight, Ellipse, Lemniscate, Racing3D };

const char* to_string(TrajectoryKind kind);
TrajectoryKind parse_trajectory_kind(const std::string& text);

/**
 * Reference path r(t) = center + scale * shape(theta(t)). The phase rate
 * ramps up smoothly from zero over ramp_time, so every trajectory starts at
 * rest and level. The shape amplitude is chosen so the cruise speed peaks at
 * peak_speed. Straight paths run along +x at peak_speed.
 */
struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Ellipse;
  double period = 12.0;      // s per lap (ignored by Hover/Straight)
  double peak_speed = 5.0;   // m/s
  double duration = 20.0;    // s
  double ramp_time = 1.5;    // s
  double camera_rate = 120.0;
  double imu_rate = 500.0;
  double heading = 0.0;      // rad, Straight only
  double yaw_offset = 0.0;   // rad, crab angle added to the path heading
  double crab_period = 0.0;  // s; > 0 swings the crab angle as yaw_offset * sin(2 pi t / crab_period)
  Eigen::Vector3d center{0.0, 0.0, 3.0};

  void validate() const;
};

struct ReferencePoint {
  Eigen::Vector3d position, velocity, acceleration;
  double yaw = 0.0;
};

ReferencePoint reference_at(const TrajectorySpec& spec, double t);

/// Reference quadrotor: linear rotor drag in the body x/y axes, thrust along
/// body z, quad-X mixer with motor thrust kT * rpm^2.
struct RefDynamicsParams {
  double mass = 1.0;           // kg
  double kx = 0.5;             // 1/s
  double ky = 0.8;             // 1/s
  double kT = 1.5e-7;          // N / rpm^2
  double arm = 0.12;           // m, centre to motor
  double yaw_moment = 0.016;   // m, reaction torque per newton of thrust
  Eigen::Vector3d inertia{4e-3, 4e-3, 7e-3};  // kg m^2, diagonal
  double max_thrust_accel = 40.0;  // m/s^2
  double position_gain = 4.0;      // tracking controller
  double velocity_gain = 4.0;

  void validate() const;
};

struct ImuNoise {
  double gyro_std = 0.0;   // rad/s per sample
  double accel_std = 0.0;  // m/s^2 per sample
  double rpm_std = 0.0;
  Eigen::Vector3d gyro_bias = Eigen::Vector3d::Zero();
  Eigen::Vector3d accel_bias = Eigen::Vector3d::Zero();
  std::uint64_t seed = 0;
};

struct SimulatedStreams {
  std::vector<ImuSample> imu;          // noisy measurements
  std::vector<ImuSample> imu_clean;    // exact specific force / body rates
  std::vector<MotorSample> motors;
  std::vector<BodyState> truth;        // one per IMU tick
};

/**
 * Closed-loop simulation at the IMU rate. Per tick i the vehicle holds body
 * rate w_i and specific force a_i = (-kx Vb_x, -ky Vb_y, T_i / m); the state
 * advances as
 *   v_{i+1} = v_i + (R_i a_i + g) dt,   R_{i+1} = R_i exp(w_i dt),
 * so body velocity obeys Vb_{i+1} = exp(w_i dt)^T (Vb_i + (a_i + R_i^T g) dt)
 * exactly. Throws InfeasibleTrajectory when a motor would need negative
 * thrust or the thrust limit is exceeded.
 */
SimulatedStreams simulate_imu_motors(const TrajectorySpec& trajectory,
                                     const RefDynamicsParams& dynamics, const ImuNoise& noise = {});

/// Camera axes in body coordinates: camera z looks along body x, camera x
/// points to body -y (right) and camera y to body -z (down).
Eigen::Matrix3d body_from_camera_rotation();

/// Ground-truth pose between IMU ticks: linear in position, slerp in
/// rotation. `t` must lie inside the simulated span.
BodyState interpolate_state(const std::vector<BodyState>& truth, double t);

SE3Pose world_from_camera(const BodyState& state);

/**
 * Ground-truth camera poses at `camera_rate` over the simulated span, plus
 * the relative poses prev_from_cur a monocular estimator would report: the
 * translation is multiplied by `scale` and perturbed by white noise of std
 * velocity_noise * dt, so differenced velocities carry noise of std
 * velocity_noise.
 */
struct CameraTrack {
  std::vector<double> t;
  std::vector<SE3Pose> world_from_camera;
  std::vector<SE3Pose> prev_from_cur;  // one per frame after the first
};
CameraTrack camera_track(const SimulatedStreams& streams, double camera_rate, double scale = 1.0,
                         double velocity_noise = 0.0, std::uint64_t seed = 0);

/// Room enclosing the trajectory with gates straddling the path at evenly
/// spaced phases, oriented across the direction of travel.
SceneSpec scene_for_trajectory(const TrajectorySpec& trajectory, int gate_count,
                               std::uint32_t seed);

}  // namespace ssego
