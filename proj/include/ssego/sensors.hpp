#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <string>
#include <vector>

namespace ssego {

/// One inertial sample. Accelerometer reads specific force (a level vehicle
/// at rest reads (0, 0, +9.81)). Body axes: x forward, y left, z up.
struct ImuSample {
  double t = 0.0;
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();   // rad/s
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();  // m/s^2

  bool operator==(const ImuSample&) const = default;
};

struct MotorSample {
  double t = 0.0;
  Eigen::Vector4d rpm = Eigen::Vector4d::Zero();

  bool operator==(const MotorSample&) const = default;
};

/// Ground-truth vehicle state at an IMU tick.
struct BodyState {
  double t = 0.0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();        // world, m
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();        // world, m/s
  Eigen::Vector3d body_velocity = Eigen::Vector3d::Zero();   // R^T v
  Eigen::Quaterniond world_from_body = Eigen::Quaterniond::Identity();

  bool operator==(const BodyState& o) const {
    return t == o.t && position == o.position && velocity == o.velocity &&
           body_velocity == o.body_velocity && world_from_body.coeffs() == o.world_from_body.coeffs();
  }
};

constexpr double kGravity = 9.81;

/// Throws NonMonotoneTimestamps at the first sample whose t does not exceed
/// its predecessor.
void check_monotone(const std::vector<double>& times, const std::string& stream);

template <typename Sample>
std::vector<double> times_of(const std::vector<Sample>& samples) {
  std::vector<double> t;
  t.reserve(samples.size());
  for (const Sample& s : samples) t.push_back(s.t);
  return t;
}

}  // namespace ssego
