#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ssego/errors.hpp"
#include "ssego/fusion.hpp"

using namespace ssego;

namespace {

TrajectorySpec flight(TrajectoryKind kind, double speed, double duration) {
  TrajectorySpec t;
  t.kind = kind;
  t.peak_speed = speed;
  t.duration = duration;
  t.period = 12.0;
  return t;
}

// Constant-output network: d and eps fixed through the final biases.
DroneModelParams constant_model(double dx, double dy, double eps) {
  DroneModelParams p = DroneModelParams::zeros();
  auto logit = [](double u) { return std::log(u / (1.0 - u)); };
  p.biases[3] << logit(dx / 2.0), logit(dy / 2.0), logit((eps + 5.0) / 10.0);
  return p;
}

TrajectoryEstimate truth_of(const SimulatedStreams& s) {
  TrajectoryEstimate gt;
  for (const BodyState& b : s.truth) {
    gt.t.push_back(b.t);
    gt.position.push_back(b.position);
  }
  return gt;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(FusedAccel, EndpointsAndBlend) {
  const Eigen::Vector3d imu(0.4, -0.3, 9.6);
  ModelOutput o;
  o.dx = 0.5;
  o.dy = 0.8;
  o.eps = 0.1;
  const Eigen::Vector3d vb(2.0, -1.0, 0.3);
  const Eigen::Vector3d model = model_specific_force(o, vb, 9.81);
  EXPECT_EQ(model, Eigen::Vector3d(-1.0, 0.8, 9.81 - 0.1));
  EXPECT_EQ(fused_accel(imu, model, 0.0), imu);
  EXPECT_EQ(fused_accel(imu, model, 1.0), model);
  EXPECT_NEAR(fused_accel(imu, model, 0.3).z(), 9.633, 1e-12);
  const Eigen::Vector3d mid = fused_accel(imu, model, 0.5);
  EXPECT_LT((mid - 0.5 * (imu + model)).norm(), 1e-15);
  // affine: equal steps in w give equal steps in the output
  const Eigen::Vector3d a = fused_accel(imu, model, 0.2), b = fused_accel(imu, model, 0.4),
                        c = fused_accel(imu, model, 0.6);
  EXPECT_LT(((b - a) - (c - b)).norm(), 1e-14);
  EXPECT_THROW(fused_accel(imu, model, 1.5), ContractViolation);
}

TEST(FusionConfig, RatesMustDivideTheCameraRate) {
  FusionConfig c;
  for (double r : {120.0, 60.0, 40.0, 30.0, 24.0, 20.0}) {
    c.update_rate = r;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.frame_skip(), static_cast<int>(120.0 / r));
  }
  c.update_rate = 50.0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c.update_rate = 240.0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c.update_rate = 60.0;
  c.model_weight = -0.1;
  EXPECT_THROW(c.validate(), ContractViolation);
}

TEST(VisualVelocity, SkippedFramesAverageOverTheSpan) {
  const SimulatedStreams sim = simulate_imu_motors(flight(TrajectoryKind::Straight, 4.0, 4.0), {});
  const CameraTrack track = camera_track(sim, 120.0);
  const auto one = visual_velocities(track.t, track.prev_from_cur, body_from_camera_rotation(), 1.0, 1);
  const auto three = visual_velocities(track.t, track.prev_from_cur, body_from_camera_rotation(), 1.0, 3);
  EXPECT_EQ(three.size(), (track.t.size() - 1) / 3);
  for (std::size_t k = 0; k < three.size(); ++k) EXPECT_EQ(three[k].t, track.t[3 * (k + 1)]);
  // at cruise along +x both see the true forward speed
  const VisualVelocity& late = three.back();
  EXPECT_NEAR(late.body_velocity.x(), interpolate_state(sim.truth, late.t).body_velocity.x(), 0.02);
  EXPECT_NEAR(one.back().body_velocity.x(), late.body_velocity.x(), 0.02);
  const auto scaled = visual_velocities(track.t, track.prev_from_cur, body_from_camera_rotation(), 2.0, 3);
  for (std::size_t k = 0; k < three.size(); ++k) {
    EXPECT_LT((scaled[k].body_velocity - 2.0 * three[k].body_velocity).norm(), 1e-12);
  }
}

TEST(Filter, ExactInputsTrackTheTruth) {
  // zero process and measurement noise is not allowed, so make the
  // measurements exact and the filter trust them
  const SimulatedStreams sim = simulate_imu_motors(flight(TrajectoryKind::Ellipse, 5.0, 10.0), {});
  const CameraTrack track = camera_track(sim, 120.0);
  FusionConfig c;
  c.model_weight = 0.0;
  FusionInputs in = fusion_inputs(sim, track, c);
  in.visual.clear();  // IMU, attitude and initial state are exact: dead reckoning alone
  const FusionResult r = run_filter(in, nullptr, c);
  double worst = 0.0;
  for (std::size_t i = 0; i < sim.truth.size(); ++i) {
    worst = std::max(worst, (r.states[i].position - sim.truth[i].position).norm());
  }
  EXPECT_LT(worst, 1e-3);
  // an exact model gives the same answer at any weight
  const DroneModelParams exact = constant_model(0.5, 0.8, 0.0);
  c.model_weight = 1.0;
  const FusionResult m = run_filter(in, &exact, c);
  for (std::size_t i = 0; i < sim.truth.size(); ++i) {
    worst = std::max(worst, (m.states[i].position - sim.truth[i].position).norm());
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Filter, PerfectSensorsAtFullRate) {
  const SimulatedStreams sim = simulate_imu_motors(flight(TrajectoryKind::Ellipse, 5.0, 20.0), {});
  FusionConfig c;
  c.model_weight = 0.0;
  const FusionResult r = run_filter(fusion_inputs(sim, camera_track(sim, 120.0), c), nullptr, c);
  EXPECT_GT(r.updates, 2000u);
  EXPECT_LT(position_rmse(r.trajectory(), truth_of(sim), AlignMode::SE3).rmse, 0.05);
}

TEST(Filter, LowerRatesNeverHelpWithoutTheModel) {
  // median over seeds of the SE3-aligned RMSE, IMU with vibration noise
  std::vector<double> med;
  for (double rate : {120.0, 60.0, 40.0, 30.0, 20.0}) {
    std::vector<double> e;
    for (int seed = 0; seed < 10; ++seed) {
      ImuNoise n;
      n.accel_std = 1.0;
      n.seed = static_cast<std::uint64_t>(seed);
      const SimulatedStreams sim = simulate_imu_motors(flight(TrajectoryKind::Ellipse, 5.0, 10.0), {}, n);
      FusionConfig c;
      c.model_weight = 0.0;
      c.update_rate = rate;
      FusionInputs in = fusion_inputs(sim, camera_track(sim, 120.0, 1.0, 0.2, seed), c);
      e.push_back(position_rmse(run_filter(in, nullptr, c).trajectory(), truth_of(sim), AlignMode::SE3).rmse);
    }
    med.push_back(median(e));
  }
  for (std::size_t k = 1; k < med.size(); ++k) EXPECT_GE(med[k], med[k - 1]) << k;
}

TEST(Filter, DeterministicAndRequiresAModelWhenWeighted) {
  ImuNoise n;
  n.accel_std = 0.5;
  n.seed = 3;
  const SimulatedStreams sim = simulate_imu_motors(flight(TrajectoryKind::Lemniscate, 4.0, 4.0), {}, n);
  FusionConfig c;
  c.update_rate = 40.0;
  const FusionInputs in = fusion_inputs(sim, camera_track(sim, 120.0, 1.0, 0.1, 1), c);
  const DroneModelParams model = DroneModelParams::initialize(4);
  const FusionResult a = run_filter(in, &model, c), b = run_filter(in, &model, c);
  ASSERT_EQ(a.states.size(), b.states.size());
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    EXPECT_EQ(a.states[i].position, b.states[i].position);
    EXPECT_EQ(a.states[i].covariance, b.states[i].covariance);
  }
  EXPECT_THROW(run_filter(in, nullptr, c), ContractViolation);
}

TEST(Filter, DivergenceIsReportedWithItsTime) {
  const SimulatedStreams sim = simulate_imu_motors(flight(TrajectoryKind::Hover, 1.0, 3.0), {});
  FusionConfig c;
  c.model_weight = 0.0;
  c.accel_noise = 10.0;
  c.divergence_limit = 1.0;
  FusionInputs in = fusion_inputs(sim, camera_track(sim, 120.0), c);
  in.visual.clear();
  try {
    run_filter(in, nullptr, c);
    FAIL() << "expected divergence";
  } catch (const NumericalFailure& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_NE(std::string(e.what()).find("at t = "), std::string::npos);
  }
}

TEST(Degrade, DropsMeasurementsNearGatesOnly) {
  const TrajectorySpec traj = flight(TrajectoryKind::Ellipse, 5.0, 12.0);
  const SimulatedStreams sim = simulate_imu_motors(traj, {});
  const SceneSpec scene = scene_for_trajectory(traj, 4, 1);
  FusionConfig c;
  FusionInputs in = fusion_inputs(sim, camera_track(sim, 120.0), c);
  std::vector<VisualVelocity> v = in.visual;
  VisualDegradation d;
  d.gate_radius = 2.0;
  degrade(v, sim.truth, scene.gates, d);
  std::size_t dropped = 0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const Eigen::Vector3d p = interpolate_state(sim.truth, v[k].t).position;
    double nearest = 1e9;
    for (const Gate& g : scene.gates) nearest = std::min(nearest, (p - g.world_from_gate.translation()).norm());
    EXPECT_EQ(v[k].valid, nearest >= 2.0);
    EXPECT_EQ(v[k].body_velocity, in.visual[k].body_velocity);  // no noise requested
    dropped += !v[k].valid;
  }
  EXPECT_GT(dropped, 0u);
  EXPECT_LT(dropped, v.size() / 2);
}

TEST(Filter, ModelBlendHelpsWhenVisionIsDegraded) {
  // exact drone model, vibrating IMU with bias, noisy vision with gate dropouts
  const DroneModelParams model = constant_model(0.5, 0.8, 0.0);
  TrajectorySpec traj = flight(TrajectoryKind::Racing3D, 10.0, 12.0);
  std::vector<double> e0, e3;
  for (int seed = 0; seed < 7; ++seed) {
    ImuNoise n;
    n.accel_std = 3.0;
    n.seed = static_cast<std::uint64_t>(seed);
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> N(0.0, 0.3);
    n.accel_bias = {N(rng), N(rng), N(rng)};
    const SimulatedStreams sim = simulate_imu_motors(traj, {}, n);
    const SceneSpec scene = scene_for_trajectory(traj, 4, seed);
    for (double w : {0.0, 0.3}) {
      FusionConfig c;
      c.model_weight = w;
      c.update_rate = 30.0;
      c.visual_noise = 0.3;
      c.accel_noise = 0.134;
      FusionInputs in = fusion_inputs(sim, camera_track(sim, 120.0), c);
      VisualDegradation d;
      d.noise_std = 0.3;
      d.gate_radius = 3.0;
      d.seed = static_cast<std::uint64_t>(seed);
      degrade(in.visual, sim.truth, scene.gates, d);
      const double rmse =
          position_rmse(run_filter(in, &model, c).trajectory(), truth_of(sim), AlignMode::SE3).rmse;
      (w > 0 ? e3 : e0).push_back(rmse);
    }
  }
  EXPECT_LT(median(e3), median(e0));
}
