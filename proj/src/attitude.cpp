#include "ssego/attitude.hpp"

#include <algorithm>
#include <cmath>

#include "ssego/errors.hpp"
#include "ssego/geometry.hpp"

namespace ssego {

namespace {

Eigen::Quaterniond yaw_rotation(double yaw) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()));
}

}  // namespace

void AttitudeConfig::validate() const {
  if (!(gain >= 0.0 && gain <= 1.0) || !(gate_low > 0.0 && gate_low <= gate_high) ||
      !(init_window > 0.0)) {
    throw ContractViolation("attitude: gain must lie in [0,1] and the gate must be a positive range");
  }
}

Eigen::Vector3d roll_pitch_yaw(const Eigen::Quaterniond& world_from_body) {
  const Eigen::Matrix3d R = world_from_body.toRotationMatrix();
  const double roll = std::atan2(R(2, 1), R(2, 2));
  const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  const double yaw = std::atan2(R(1, 0), R(0, 0));
  return {roll, pitch, yaw};
}

Eigen::Quaterniond AttitudeState::world_from_body() const { return yaw_rotation(yaw) * tilt; }

AttitudeState AttitudeState::from_rotation(const Eigen::Quaterniond& world_from_body, double t) {
  AttitudeState s;
  s.t = t;
  s.yaw = roll_pitch_yaw(world_from_body)(2);
  s.tilt = (yaw_rotation(-s.yaw) * world_from_body).normalized();
  return s;
}

AttitudeState propagate(const AttitudeState& state, const Eigen::Vector3d& gyro, double dt) {
  if (!(dt > 0.0)) throw ContractViolation("propagate: dt must be positive");
  if (gyro.isZero(0.0)) {
    AttitudeState s = state;
    s.t += dt;
    return s;
  }
  const Eigen::Quaterniond dq(so3_exp(gyro * dt));
  return AttitudeState::from_rotation((state.world_from_body() * dq).normalized(), state.t + dt);
}

bool accel_accepted(const Eigen::Vector3d& accel, const AttitudeConfig& config) {
  const double n = accel.norm();
  return n >= config.gate_low * kGravity && n <= config.gate_high * kGravity;
}

AttitudeState accel_update(const AttitudeState& state, const Eigen::Vector3d& accel,
                           const AttitudeConfig& config) {
  if (!accel_accepted(accel, config)) return state;
  const Eigen::Vector3d up_measured = accel.normalized();
  const Eigen::Vector3d up_estimated = state.tilt.conjugate() * Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d axis = up_measured.cross(up_estimated);
  const double s = axis.norm();
  if (s == 0.0) return state;
  const double angle = std::atan2(s, up_measured.dot(up_estimated));
  // rotating the body-frame estimate by phi moves up_estimated toward up_measured
  const Eigen::Vector3d phi = config.gain * angle * axis / s;
  const Eigen::Quaterniond corrected = (state.tilt * Eigen::Quaterniond(so3_exp(phi))).normalized();
  // the correction may carry a little heading; strip it so only tilt changes
  const AttitudeState split = AttitudeState::from_rotation(corrected, state.t);
  AttitudeState out = state;
  out.tilt = split.tilt;
  return out;
}

Eigen::Vector3d gravity_body(const AttitudeState& state) {
  return state.tilt.conjugate() * Eigen::Vector3d(0.0, 0.0, -kGravity);
}

AttitudeState initialize_attitude(const std::vector<ImuSample>& imu, const AttitudeConfig& config) {
  config.validate();
  if (imu.empty()) throw DegenerateInput("initialize_attitude: empty IMU stream");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  int n = 0;
  for (const ImuSample& s : imu) {
    if (s.t - imu.front().t >= config.init_window && n > 0) break;
    mean += s.accel;
    ++n;
  }
  mean /= n;
  if (!(mean.norm() > 0.0)) throw DegenerateInput("initialize_attitude: zero mean specific force");
  const double roll = std::atan2(mean.y(), mean.z());
  const double pitch = std::atan2(-mean.x(), std::hypot(mean.y(), mean.z()));
  AttitudeState s;
  s.t = imu.front().t;
  s.tilt = Eigen::Quaterniond(Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
                              Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()));
  return s;
}

std::vector<AttitudeState> run_attitude(const std::vector<ImuSample>& imu,
                                        const AttitudeConfig& config) {
  config.validate();
  check_monotone(times_of(imu), "imu");
  std::vector<AttitudeState> out;
  if (imu.empty()) return out;
  out.reserve(imu.size());
  AttitudeState s = initialize_attitude(imu, config);
  for (std::size_t i = 0; i < imu.size(); ++i) {
    if (i > 0) s = propagate(s, imu[i - 1].gyro, imu[i].t - imu[i - 1].t);
    s.t = imu[i].t;
    s = accel_update(s, imu[i].accel, config);
    out.push_back(s);
  }
  return out;
}

}  // namespace ssego
