#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "ssego/drone_model.hpp"
#include "ssego/eval.hpp"
#include "ssego/scene.hpp"
#include "ssego/simulation.hpp"

namespace ssego {

struct FusionConfig {
  double model_weight = 0.3;    // share of the drone-model specific force
  double camera_rate = 120.0;   // Hz
  double update_rate = 120.0;   // Hz, must divide the camera rate
  double visual_noise = 0.1;    // m/s, velocity measurement std
  double accel_noise = 0.05;    // m/s^2/sqrt(Hz), process noise density
  double divergence_limit = 1e4;  // covariance trace that counts as divergence
  void validate() const;
  int frame_skip() const;  // camera_rate / update_rate
};

/// Bracket of the rollout equation: (-dx Vb_x, -dy Vb_y, a_z - eps).
Eigen::Vector3d model_specific_force(const ModelOutput& out, const Eigen::Vector3d& body_velocity,
                                     double accel_z);

/// w * model + (1 - w) * imu, all three axes.
Eigen::Vector3d fused_accel(const Eigen::Vector3d& imu_accel, const Eigen::Vector3d& model_force,
                            double w);

/// Body-frame velocity measurement from the visual front end, stamped at the
/// time it becomes available (the later frame of its pose pair).
struct VisualVelocity {
  double t = 0.0;
  Eigen::Vector3d body_velocity = Eigen::Vector3d::Zero();
  bool valid = true;
};

/**
 * Velocities from poses chained over `skip` consecutive frames, the way a
 * front end processing every skip-th frame sees them: displacement over the
 * skipped span, in the mid-span camera frame, rotated to the body and
 * multiplied by `scale`.
 */
std::vector<VisualVelocity> visual_velocities(const std::vector<double>& frame_times,
                                              const std::vector<SE3Pose>& prev_from_cur,
                                              const Eigen::Matrix3d& body_from_camera,
                                              double scale, int skip);

/// Degradation for stress tests: white noise on every measurement and
/// dropouts while the vehicle is within `gate_radius` of any gate centre.
struct VisualDegradation {
  double noise_std = 0.0;      // m/s
  double gate_radius = 0.0;    // m
  std::uint64_t seed = 0;
};
void degrade(std::vector<VisualVelocity>& stream, const std::vector<BodyState>& truth,
             const std::vector<Gate>& gates, const VisualDegradation& degradation);

struct OdometryState {
  double t = 0.0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // odometry frame
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // body frame
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();
  Eigen::Matrix<double, 6, 1> covariance = Eigen::Matrix<double, 6, 1>::Zero();  // diagonal
};

struct FusionInputs {
  std::vector<ImuSample> imu;
  std::vector<Eigen::Vector4d> rpm;            // per IMU sample
  std::vector<Eigen::Quaterniond> attitude;    // world_from_body per IMU sample
  std::vector<VisualVelocity> visual;
  Eigen::Vector3d initial_position = Eigen::Vector3d::Zero();
  Eigen::Vector3d initial_velocity = Eigen::Vector3d::Zero();  // body frame
  void validate() const;
};

struct FusionResult {
  std::vector<OdometryState> states;  // one per IMU sample
  std::size_t updates = 0;            // visual updates applied
  TrajectoryEstimate trajectory() const;
};

/**
 * Error-state filter over (position, body velocity). Each IMU step
 * propagates with the fused specific force and the gyro; every valid visual
 * velocity is a Kalman update at the first IMU tick at or after its stamp. The model may be
 * null only when model_weight is 0. Throws NumericalFailure naming the
 * timestamp when the covariance trace exceeds the divergence limit or the
 * state stops being finite.
 */
FusionResult run_filter(const FusionInputs& inputs, const DroneModelParams* model,
                        const FusionConfig& config);

/// Inputs from simulator output: true attitude, rpm and IMU as simulated,
/// visual velocities from the camera track at the configured update rate.
FusionInputs fusion_inputs(const SimulatedStreams& streams, const CameraTrack& track,
                           const FusionConfig& config, double visual_scale = 1.0);

}  // namespace ssego
