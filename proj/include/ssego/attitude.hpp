#pragma once

#include <vector>

#include <Eigen/Geometry>

#include "ssego/sensors.hpp"

namespace ssego {

struct AttitudeConfig {
  double gain = 0.02;        // fraction of the tilt error removed per accepted sample
  double gate_low = 0.95;    // accepted |accel| range, in g (closed interval)
  double gate_high = 1.05;
  double init_window = 0.5;  // seconds of accel averaged for the initial tilt

  void validate() const;
};

/**
 * Orientation split as world_from_body = Rz(yaw) * tilt, where tilt has zero
 * ZYX yaw. Accelerometer corrections only touch `tilt`, so yaw is left alone
 * by construction.
 */
struct AttitudeState {
  double t = 0.0;
  double yaw = 0.0;
  Eigen::Quaterniond tilt = Eigen::Quaterniond::Identity();

  Eigen::Quaterniond world_from_body() const;
  static AttitudeState from_rotation(const Eigen::Quaterniond& world_from_body, double t = 0.0);
};

/// q <- q * exp(gyro * dt), renormalized. dt must be positive.
AttitudeState propagate(const AttitudeState& state, const Eigen::Vector3d& gyro, double dt);

/// Closed-interval gate on |accel| / g.
bool accel_accepted(const Eigen::Vector3d& accel, const AttitudeConfig& config);

/// Tilts the estimate toward the measured up direction when the gate accepts;
/// otherwise returns the state unchanged.
AttitudeState accel_update(const AttitudeState& state, const Eigen::Vector3d& accel,
                           const AttitudeConfig& config);

/// World gravity (0, 0, -9.81) expressed in the body frame.
Eigen::Vector3d gravity_body(const AttitudeState& state);

/// Roll and pitch from the mean specific force of the first `init_window`
/// seconds; yaw starts at zero.
AttitudeState initialize_attitude(const std::vector<ImuSample>& imu, const AttitudeConfig& config);

/// Runs the filter over a stream; one state per sample, taken after that
/// sample's accel update. Sample i's gyro propagates from t_i to t_{i+1}.
std::vector<AttitudeState> run_attitude(const std::vector<ImuSample>& imu,
                                        const AttitudeConfig& config);

/// ZYX Euler angles (roll, pitch, yaw) of a world_from_body rotation.
Eigen::Vector3d roll_pitch_yaw(const Eigen::Quaterniond& world_from_body);

}  // namespace ssego
