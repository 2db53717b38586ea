#include "ssego/simulation.hpp"

#include <cmath>
#include <random>

namespace ssego {

namespace {

struct ShapeDerivs {
  Eigen::Vector3d s, d1, d2;  // shape and derivatives w.r.t. phase
};

ShapeDerivs shape_at(TrajectoryKind kind, double th) {
  ShapeDerivs r;
  const double s1 = std::sin(th), c1 = std::cos(th);
  const double s2 = std::sin(2 * th), c2 = std::cos(2 * th);
  const double s3 = std::sin(3 * th), c3 = std::cos(3 * th);
  switch (kind) {
    case TrajectoryKind::Hover:
      r.s = r.d1 = r.d2 = Eigen::Vector3d::Zero();
      break;
    case TrajectoryKind::Straight:
      r.s = {th, 0, 0};
      r.d1 = {1, 0, 0};
      r.d2 = Eigen::Vector3d::Zero();
      break;
    case TrajectoryKind::Ellipse:
      r.s = {s1, 0.6 * (1 - c1), 0};
      r.d1 = {c1, 0.6 * s1, 0};
      r.d2 = {-s1, 0.6 * c1, 0};
      break;
    case TrajectoryKind::Lemniscate:
      r.s = {s1, 0.4 * s2, 0};
      r.d1 = {c1, 0.8 * c2, 0};
      r.d2 = {-s1, -1.6 * s2, 0};
      break;
    case TrajectoryKind::Racing3D:
      r.s = {s1, 0.45 * s2, 0.1 * s3};
      r.d1 = {c1, 0.9 * c2, 0.3 * c3};
      r.d2 = {-s1, -1.8 * s2, -0.9 * s3};
      break;
  }
  return r;
}

bool closed_shape(TrajectoryKind k) {
  return k == TrajectoryKind::Ellipse || k == TrajectoryKind::Lemniscate ||
         k == TrajectoryKind::Racing3D;
}

double phase_rate(const TrajectorySpec& spec) {
  return closed_shape(spec.kind) ? 2.0 * M_PI / spec.period : 1.0;
}

double shape_scale(const TrajectorySpec& spec) {
  if (spec.kind == TrajectoryKind::Hover) return 0.0;
  double peak = 0.0;
  for (int k = 0; k < 3600; ++k) {
    peak = std::max(peak, shape_at(spec.kind, 2.0 * M_PI * k / 3600.0).d1.norm());
  }
  return spec.peak_speed / (phase_rate(spec) * peak);
}

Eigen::Matrix3d heading_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

/// Body attitude whose z axis is `thrust_dir` and whose x axis points along
/// `yaw` as closely as possible.
Eigen::Matrix3d attitude_from(const Eigen::Vector3d& thrust_dir, double yaw) {
  const Eigen::Vector3d z = thrust_dir.normalized();
  const Eigen::Vector3d xc(std::cos(yaw), std::sin(yaw), 0.0);
  Eigen::Vector3d y = z.cross(xc);
  if (y.norm() < 1e-9) y = z.cross(Eigen::Vector3d::UnitX());
  y.normalize();
  Eigen::Matrix3d R;
  R.col(0) = y.cross(z);
  R.col(1) = y;
  R.col(2) = z;
  return R;
}

ReferencePoint reference_at(const TrajectorySpec& spec, double scale, double t);

}  // namespace

const char* to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::Hover: return "hover";
    case TrajectoryKind::Straight: return "straight";
    case TrajectoryKind::Ellipse: return "ellipse";
    case TrajectoryKind::Lemniscate: return "lemniscate";
    case TrajectoryKind::Racing3D: return "racing3d";
  }
  return "?";
}

TrajectoryKind parse_trajectory_kind(const std::string& text) {
  for (TrajectoryKind k : {TrajectoryKind::Hover, TrajectoryKind::Straight, TrajectoryKind::Ellipse,
                           TrajectoryKind::Lemniscate, TrajectoryKind::Racing3D}) {
    if (text == to_string(k)) return k;
  }
  throw ConfigError("unknown trajectory kind '" + text +
                    "' (expected hover, straight, ellipse, lemniscate or racing3d)");
}

void TrajectorySpec::validate() const {
  if (kind != TrajectoryKind::Hover && !(peak_speed > 0.0)) {
    throw ContractViolation("trajectory: peak speed must be positive");
  }
  if (!(period > 0.0 && duration > 0.0 && ramp_time > 0.0 && crab_period >= 0.0)) {
    throw ContractViolation("trajectory: period, duration and ramp time must be positive");
  }
  if (!(camera_rate > 0.0 && imu_rate >= camera_rate)) {
    throw ContractViolation("trajectory: need 0 < camera rate <= IMU rate");
  }
}

ReferencePoint reference_at(const TrajectorySpec& spec, double t) {
  return reference_at(spec, shape_scale(spec), t);
}

namespace {

ReferencePoint reference_at(const TrajectorySpec& spec, double scale, double t) {
  const double w = phase_rate(spec);
  const double tr = spec.ramp_time;
  const double e = std::exp(-(t / tr) * (t / tr));
  const double th = w * (t - tr * 0.5 * std::sqrt(M_PI) * std::erf(t / tr));
  const double thd = w * (1.0 - e);
  const double thdd = w * 2.0 * t / (tr * tr) * e;
  const ShapeDerivs sh = shape_at(spec.kind, th);
  const Eigen::Matrix3d H =
      spec.kind == TrajectoryKind::Straight ? heading_rotation(spec.heading) : Eigen::Matrix3d::Identity();
  ReferencePoint r;
  r.position = spec.center + scale * (H * sh.s);
  r.velocity = scale * (H * sh.d1) * thd;
  r.acceleration = scale * (H * (sh.d2 * thd * thd + sh.d1 * thdd));
  const Eigen::Vector3d tangent = H * sh.d1;
  const double crab = spec.crab_period > 0.0
                          ? spec.yaw_offset * std::sin(2.0 * M_PI * t / spec.crab_period)
                          : spec.yaw_offset;
  r.yaw = spec.kind == TrajectoryKind::Hover ? spec.heading
                                              : std::atan2(tangent.y(), tangent.x()) + crab;
  return r;
}

}  // namespace

void RefDynamicsParams::validate() const {
  if (!(mass > 0 && kx > 0 && ky > 0 && kT > 0 && arm > 0 && yaw_moment > 0 &&
        inertia.minCoeff() > 0 && max_thrust_accel > kGravity)) {
    throw ContractViolation("dynamics parameters must be positive (and allow hover)");
  }
}

Eigen::Matrix3d body_from_camera_rotation() {
  Eigen::Matrix3d R;
  R.col(0) = Eigen::Vector3d(0, -1, 0);
  R.col(1) = Eigen::Vector3d(0, 0, -1);
  R.col(2) = Eigen::Vector3d(1, 0, 0);
  return R;
}

SimulatedStreams simulate_imu_motors(const TrajectorySpec& trajectory,
                                     const RefDynamicsParams& dyn, const ImuNoise& noise) {
  trajectory.validate();
  dyn.validate();
  const double dt = 1.0 / trajectory.imu_rate;
  const auto steps = static_cast<std::size_t>(std::floor(trajectory.duration * trajectory.imu_rate)) + 1;
  const Eigen::Vector3d g(0, 0, -kGravity);

  // quad-X mixer: rows (thrust, roll, pitch, yaw torque) over motors
  // 1 front-right, 2 rear-left, 3 front-left, 4 rear-right (props 1,2 CCW).
  const double l = dyn.arm / std::sqrt(2.0);
  Eigen::Matrix4d mixer;
  mixer << 1, 1, 1, 1,
           -l, l, l, -l,
           -l, l, -l, l,
           dyn.yaw_moment, dyn.yaw_moment, -dyn.yaw_moment, -dyn.yaw_moment;
  const Eigen::Matrix4d unmix = mixer.inverse();
  const Eigen::Matrix3d J = dyn.inertia.asDiagonal();

  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> N(0.0, 1.0);
  auto gauss3 = [&]() { return Eigen::Vector3d(N(rng), N(rng), N(rng)); };

  SimulatedStreams out;
  out.imu.reserve(steps);
  out.imu_clean.reserve(steps);
  out.motors.reserve(steps);
  out.truth.reserve(steps);

  const double scale = shape_scale(trajectory);
  const ReferencePoint r0 = reference_at(trajectory, scale, 0.0);
  Eigen::Vector3d p = r0.position;
  Eigen::Vector3d v = r0.velocity;
  Eigen::Quaterniond q(attitude_from(r0.acceleration - g, r0.yaw));
  Eigen::Vector3d prev_rate = Eigen::Vector3d::Zero();

  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * dt;
    const Eigen::Matrix3d R = q.toRotationMatrix();
    const Eigen::Vector3d vb = R.transpose() * v;
    out.truth.push_back({t, p, v, vb, q});

    // desired specific force for the next tick
    const ReferencePoint ref = reference_at(trajectory, scale, t);
    const Eigen::Vector3d a_des = ref.acceleration + dyn.position_gain * (ref.position - p) +
                                  dyn.velocity_gain * (ref.velocity - v);
    const Eigen::Vector3d f_world = a_des - g;
    const Eigen::Vector3d drag_body(-dyn.kx * vb.x(), -dyn.ky * vb.y(), 0.0);
    const double thrust_accel = (R.transpose() * f_world - drag_body).z();
    if (thrust_accel < 0.0 || thrust_accel > dyn.max_thrust_accel) {
      throw InfeasibleTrajectory("trajectory needs thrust acceleration " +
                                 std::to_string(thrust_accel) + " m/s^2 at t=" + std::to_string(t));
    }
    const Eigen::Vector3d accel = drag_body + Eigen::Vector3d(0, 0, thrust_accel);

    const ReferencePoint ref_next = reference_at(trajectory, scale, t + dt);
    const Eigen::Vector3d a_next = ref_next.acceleration +
                                   dyn.position_gain * (ref_next.position - p - v * dt) +
                                   dyn.velocity_gain * (ref_next.velocity - v - (R * accel + g) * dt);
    const Eigen::Matrix3d R_des = attitude_from(a_next - g - R * drag_body, ref_next.yaw);
    const Eigen::Vector3d rate = so3_log(R.transpose() * R_des) / dt;

    // motors from thrust and the torque that realizes the rate change
    const Eigen::Vector3d alpha = i == 0 ? Eigen::Vector3d::Zero() : Eigen::Vector3d((rate - prev_rate) / dt);
    const Eigen::Vector3d torque = J * alpha + rate.cross(J * rate);
    Eigen::Vector4d wrench;
    wrench << dyn.mass * thrust_accel, torque;
    const Eigen::Vector4d motor_thrust = unmix * wrench;
    if (motor_thrust.minCoeff() < 0.0) {
      throw InfeasibleTrajectory("motor thrust would be negative at t=" + std::to_string(t));
    }
    Eigen::Vector4d rpm = (motor_thrust / dyn.kT).cwiseSqrt();
    prev_rate = rate;

    out.imu_clean.push_back({t, rate, accel});
    ImuSample meas{t, rate + noise.gyro_bias, accel + noise.accel_bias};
    if (noise.gyro_std > 0) meas.gyro += noise.gyro_std * gauss3();
    if (noise.accel_std > 0) meas.accel += noise.accel_std * gauss3();
    out.imu.push_back(meas);
    if (noise.rpm_std > 0) {
      for (int k = 0; k < 4; ++k) rpm(k) = std::max(0.0, rpm(k) + noise.rpm_std * N(rng));
    }
    out.motors.push_back({t, rpm});

    // advance
    const Eigen::Vector3d v_next = v + (R * accel + g) * dt;
    p += 0.5 * (v + v_next) * dt;
    v = v_next;
    q = (q * Eigen::Quaterniond(so3_exp(rate * dt))).normalized();
  }
  return out;
}

BodyState interpolate_state(const std::vector<BodyState>& truth, double t) {
  if (truth.empty()) throw ContractViolation("interpolate_state: empty trajectory");
  if (t <= truth.front().t) return truth.front();
  if (t >= truth.back().t) return truth.back();
  auto it = std::upper_bound(truth.begin(), truth.end(), t,
                             [](double v, const BodyState& s) { return v < s.t; });
  const BodyState& b = *it;
  const BodyState& a = *(it - 1);
  const double u = (t - a.t) / (b.t - a.t);
  BodyState s;
  s.t = t;
  s.position = (1 - u) * a.position + u * b.position;
  s.velocity = (1 - u) * a.velocity + u * b.velocity;
  s.world_from_body = a.world_from_body.slerp(u, b.world_from_body);
  s.body_velocity = s.world_from_body.toRotationMatrix().transpose() * s.velocity;
  return s;
}

SE3Pose world_from_camera(const BodyState& state) {
  return SE3Pose(Eigen::Matrix3d(state.world_from_body.toRotationMatrix() * body_from_camera_rotation()),
                 state.position);
}

CameraTrack camera_track(const SimulatedStreams& streams, double camera_rate, double scale,
                         double velocity_noise, std::uint64_t seed) {
  if (streams.truth.size() < 2 || !(camera_rate > 0.0) || !(scale > 0.0) || !(velocity_noise >= 0.0)) {
    throw ContractViolation("camera_track: need a simulated span, positive rate and scale");
  }
  CameraTrack track;
  const double t0 = streams.truth.front().t, t1 = streams.truth.back().t;
  const double dt = 1.0 / camera_rate;
  const auto frames = static_cast<std::size_t>(std::floor((t1 - t0) * camera_rate + 1e-9)) + 1;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  for (std::size_t k = 0; k < frames; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    track.t.push_back(t);
    track.world_from_camera.push_back(world_from_camera(interpolate_state(streams.truth, t)));
    if (k == 0) continue;
    const SE3Pose rel = track.world_from_camera[k - 1].inverse() * track.world_from_camera[k];
    Eigen::Vector3d noise = Eigen::Vector3d::Zero();
    if (velocity_noise > 0.0) noise = Eigen::Vector3d(N(rng), N(rng), N(rng)) * velocity_noise * dt;
    track.prev_from_cur.emplace_back(rel.rotation(), scale * rel.translation() + noise);
  }
  return track;
}

SceneSpec scene_for_trajectory(const TrajectorySpec& trajectory, int gate_count,
                               std::uint32_t seed) {
  trajectory.validate();
  SceneSpec scene;
  scene.texture_seed = seed;
  const double horizon = closed_shape(trajectory.kind) ? trajectory.period : trajectory.duration;
  Eigen::Vector3d lo = trajectory.center, hi = trajectory.center;
  std::vector<ReferencePoint> path;
  const double t_end = trajectory.duration + trajectory.ramp_time;
  for (int k = 0; k <= 2000; ++k) {
    const ReferencePoint r = reference_at(trajectory, t_end * k / 2000.0);
    lo = lo.cwiseMin(r.position);
    hi = hi.cwiseMax(r.position);
    path.push_back(r);
  }

  auto add_gate = [&](const Eigen::Vector3d& at, const Eigen::Vector3d& along) {
    const Eigen::Vector3d z = along.normalized();
    Eigen::Vector3d x = Eigen::Vector3d::UnitZ().cross(z);
    if (x.norm() < 1e-6) x = Eigen::Vector3d::UnitX();
    x.normalize();
    Eigen::Matrix3d R;
    R.col(0) = x;
    R.col(1) = z.cross(x);
    R.col(2) = z;
    Gate g;
    g.world_from_gate = SE3Pose(R, at);
    g.inner_half = {1.2, 1.2};
    g.outer_half = {1.6, 1.6};
    scene.gates.push_back(g);
  };
  if (trajectory.kind == TrajectoryKind::Hover) {
    for (int k = 0; k < gate_count; ++k) {
      const Eigen::Vector3d ahead(std::cos(trajectory.heading), std::sin(trajectory.heading), 0.0);
      add_gate(trajectory.center + (4.0 + 3.0 * k) * ahead, ahead);
    }
  } else {
    // gates at evenly spaced arc positions of the first lap (or the run)
    const double t0 = trajectory.ramp_time * 1.5;
    for (int k = 0; k < gate_count; ++k) {
      const double t = t0 + (horizon - t0) * (k + 0.5) / gate_count;
      const ReferencePoint r = reference_at(trajectory, t);
      add_gate(r.position, r.velocity);
    }
  }
  // room around the path and every gate
  for (const Gate& g : scene.gates) {
    lo = lo.cwiseMin(g.world_from_gate.translation());
    hi = hi.cwiseMax(g.world_from_gate.translation());
  }
  const Eigen::Vector3d margin(10.0, 10.0, 5.0);
  scene.room_min = lo - margin;
  scene.room_max = hi + margin;
  scene.room_min.z() = std::min(scene.room_min.z(), lo.z() - 3.0);
  scene.validate();
  return scene;
}

}  // namespace ssego
