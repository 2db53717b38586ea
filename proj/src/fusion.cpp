#include "ssego/fusion.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "ssego/errors.hpp"

namespace ssego {

void FusionConfig::validate() const {
  if (!(model_weight >= 0.0 && model_weight <= 1.0)) {
    throw ContractViolation("fusion: model weight must lie in [0, 1]");
  }
  if (!(camera_rate > 0.0) || !(update_rate > 0.0) || update_rate > camera_rate) {
    throw ContractViolation("fusion: need 0 < update rate <= camera rate");
  }
  const double ratio = camera_rate / update_rate;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
    throw ContractViolation("fusion: update rate must divide the camera rate");
  }
  if (!(visual_noise > 0.0) || !(accel_noise >= 0.0) || !(divergence_limit > 0.0)) {
    throw ContractViolation("fusion: noise levels must be positive");
  }
}

int FusionConfig::frame_skip() const {
  return static_cast<int>(std::lround(camera_rate / update_rate));
}

Eigen::Vector3d model_specific_force(const ModelOutput& out, const Eigen::Vector3d& body_velocity,
                                     double accel_z) {
  return {-out.dx * body_velocity.x(), -out.dy * body_velocity.y(), accel_z - out.eps};
}

Eigen::Vector3d fused_accel(const Eigen::Vector3d& imu_accel, const Eigen::Vector3d& model_force,
                            double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw ContractViolation("fused_accel: weight must lie in [0, 1]");
  return w * model_force + (1.0 - w) * imu_accel;
}

std::vector<VisualVelocity> visual_velocities(const std::vector<double>& frame_times,
                                              const std::vector<SE3Pose>& prev_from_cur,
                                              const Eigen::Matrix3d& body_from_camera,
                                              double scale, int skip) {
  if (skip < 1 || !(scale > 0.0) || prev_from_cur.size() + 1 != frame_times.size()) {
    throw ContractViolation("visual_velocities: need skip >= 1, positive scale, one pose per frame gap");
  }
  check_monotone(frame_times, "camera");
  std::vector<VisualVelocity> out;
  const auto step = static_cast<std::size_t>(skip);
  for (std::size_t k = step; k < frame_times.size(); k += step) {
    SE3Pose T = prev_from_cur[k - step];
    for (std::size_t j = k - step + 1; j < k; ++j) T = T * prev_from_cur[j];
    const Eigen::Matrix3d half = so3_exp(0.5 * so3_log(T.rotation_matrix()));
    const double dt = frame_times[k] - frame_times[k - step];
    VisualVelocity v;
    v.t = frame_times[k];
    v.body_velocity = scale * (body_from_camera * (half.transpose() * T.translation() / dt));
    out.push_back(v);
  }
  return out;
}

void degrade(std::vector<VisualVelocity>& stream, const std::vector<BodyState>& truth,
             const std::vector<Gate>& gates, const VisualDegradation& d) {
  if (!(d.noise_std >= 0.0) || !(d.gate_radius >= 0.0)) {
    throw ContractViolation("degrade: noise and radius must be nonnegative");
  }
  std::mt19937_64 rng(d.seed);
  std::normal_distribution<double> N(0.0, 1.0);
  for (VisualVelocity& v : stream) {
    // draw for every sample so the noise does not depend on the dropouts
    const Eigen::Vector3d n(N(rng), N(rng), N(rng));
    v.body_velocity += d.noise_std * n;
    if (d.gate_radius > 0.0) {
      const Eigen::Vector3d p = interpolate_state(truth, v.t).position;
      for (const Gate& g : gates) {
        if ((p - g.world_from_gate.translation()).norm() < d.gate_radius) v.valid = false;
      }
    }
  }
}

void FusionInputs::validate() const {
  const std::size_t n = imu.size();
  if (n < 2 || rpm.size() != n || attitude.size() != n) {
    throw ContractViolation("fusion: rpm and attitude must be given per IMU sample");
  }
  check_monotone(times_of(imu), "imu");
  check_monotone(times_of(visual), "visual");
  if (!initial_position.allFinite() || !initial_velocity.allFinite()) {
    throw ContractViolation("fusion: non-finite initial state");
  }
}

TrajectoryEstimate FusionResult::trajectory() const {
  TrajectoryEstimate e;
  e.frame = "odometry";
  for (const OdometryState& s : states) {
    e.t.push_back(s.t);
    e.position.push_back(s.position);
    e.velocity.push_back(s.attitude * s.velocity);
  }
  return e;
}

FusionResult run_filter(const FusionInputs& in, const DroneModelParams* model,
                        const FusionConfig& config) {
  config.validate();
  in.validate();
  const double w = config.model_weight;
  if (w > 0.0 && !model) throw ContractViolation("run_filter: a model is needed when its weight is positive");
  if (model) model->validate();

  using Mat6 = Eigen::Matrix<double, 6, 6>;
  const Eigen::Vector3d g(0, 0, -kGravity);
  const double rv = config.visual_noise * config.visual_noise;
  const double qa = config.accel_noise * config.accel_noise;

  Eigen::Vector3d p = in.initial_position, v = in.initial_velocity;
  Mat6 P = Mat6::Zero();
  P.bottomRightCorner<3, 3>() = rv * Eigen::Matrix3d::Identity();

  FusionResult out;
  out.states.reserve(in.imu.size());
  auto record = [&](std::size_t i) {
    OdometryState s;
    s.t = in.imu[i].t;
    s.position = p;
    s.velocity = v;
    s.attitude = in.attitude[i];
    s.covariance = P.diagonal();
    out.states.push_back(s);
  };
  auto fail = [&](const std::string& why, std::size_t i) {
    std::ostringstream os;
    os.precision(17);
    os << "run_filter: " << why << " at t = " << in.imu[i].t;
    throw NumericalFailure(os.str(), i);
  };

  std::size_t next = 0;
  while (next < in.visual.size() && in.visual[next].t <= in.imu[0].t) ++next;
  record(0);
  for (std::size_t i = 0; i + 1 < in.imu.size(); ++i) {
    const ImuSample& m = in.imu[i];
    const double dt = in.imu[i + 1].t - m.t;
    const Eigen::Matrix3d R0 = in.attitude[i].toRotationMatrix();
    const Eigen::Matrix3d R1 = in.attitude[i + 1].toRotationMatrix();
    Eigen::Vector3d f = m.accel;
    Eigen::Matrix3d D = Eigen::Matrix3d::Zero();  // d(specific force)/d(velocity), drag part only
    if (w > 0.0) {
      const ModelOutput o = model_forward(*model, {v, m.accel.z(), m.gyro, in.rpm[i]});
      f = fused_accel(m.accel, model_specific_force(o, v, m.accel.z()), w);
      D(0, 0) = -w * o.dx;
      D(1, 1) = -w * o.dy;
    }
    const Eigen::Matrix3d Et = so3_exp(m.gyro * dt).transpose();
    const Eigen::Vector3d v1 = Et * (v + (f + R0.transpose() * g) * dt);
    p += 0.5 * dt * (R0 * v + R1 * v1);
    v = v1;

    Mat6 F = Mat6::Identity();
    const Eigen::Matrix3d Fvv = Et * (Eigen::Matrix3d::Identity() + dt * D);
    F.bottomRightCorner<3, 3>() = Fvv;
    F.topRightCorner<3, 3>() = 0.5 * dt * (R0 + R1 * Fvv);
    Mat6 Q = Mat6::Zero();
    Q.bottomRightCorner<3, 3>() = qa * dt * Eigen::Matrix3d::Identity();
    P = F * P * F.transpose() + Q;

    for (; next < in.visual.size() && in.visual[next].t <= in.imu[i + 1].t; ++next) {
      const VisualVelocity& z = in.visual[next];
      if (!z.valid) continue;
      if (!z.body_velocity.allFinite()) fail("non-finite visual measurement", i + 1);
      const Eigen::Matrix3d S = P.bottomRightCorner<3, 3>() + rv * Eigen::Matrix3d::Identity();
      const Eigen::Matrix<double, 6, 3> K = P.rightCols<3>() * S.inverse();
      const Eigen::Matrix<double, 6, 1> dx = K * (z.body_velocity - v);
      p += dx.head<3>();
      v += dx.tail<3>();
      Mat6 IKH = Mat6::Identity();
      IKH.rightCols<3>() -= K;
      P = IKH * P * IKH.transpose() + rv * K * K.transpose();
      ++out.updates;
    }
    if (!p.allFinite() || !v.allFinite() || !P.allFinite()) fail("state is not finite", i + 1);
    if (P.trace() > config.divergence_limit) fail("covariance diverged", i + 1);
    record(i + 1);
  }
  return out;
}

FusionInputs fusion_inputs(const SimulatedStreams& streams, const CameraTrack& track,
                           const FusionConfig& config, double visual_scale) {
  config.validate();
  FusionInputs in;
  in.imu = streams.imu;
  in.rpm = resample_rpm(times_of(streams.imu), streams.motors);
  for (const BodyState& b : streams.truth) in.attitude.push_back(b.world_from_body);
  in.visual = visual_velocities(track.t, track.prev_from_cur, body_from_camera_rotation(),
                                visual_scale, config.frame_skip());
  in.initial_position = streams.truth.front().position;
  in.initial_velocity = streams.truth.front().body_velocity;
  return in;
}

}  // namespace ssego
