#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ssego/eval.hpp"
#include "ssego/optimizer.hpp"
#include "ssego/scene.hpp"

using namespace ssego;
using Eigen::Vector3d;

namespace {

CameraIntrinsics cam() { return {60.0, 60.0, 31.5, 23.5, 64, 48}; }

SE3Pose at(const Vector3d& p, double yaw = 0.0) {
  return SE3Pose(Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vector3d::UnitY())), p);
}

DepthMap scaled(const DepthMap& d, double k) {
  DepthMap out = d;
  for (double& v : out.values()) v *= k;
  return out;
}

EstimationFrames pair_of(const SimulatedFrame& a, const SimulatedFrame& b, double depth_scale = 1.0) {
  return {{a.image, b.image}, {scaled(a.depth, depth_scale), scaled(b.depth, depth_scale)}, cam()};
}

PoseEstimate zero_init(std::size_t n = 1) {
  PoseEstimate p;
  p.twists.assign(n, Vector6d::Zero());
  return p;
}

OptimizerConfig config(LossScheme scheme) {
  OptimizerConfig c;
  c.loss.scheme = scheme;
  return c;
}

// points of frame b mapped into frame a
SE3Pose relative(const SimulatedFrame& a, const SimulatedFrame& b) {
  return a.world_from_camera.inverse() * b.world_from_camera;
}

}  // namespace

TEST(EstimatePose, IdenticalFramesStayAtIdentity) {
  const SceneSpec s = SceneSpec::fronto(12.0, 6.0, 0.8, 1.2, 1);
  const SimulatedFrame f = render(s, SE3Pose::identity(), cam());
  for (LossScheme scheme : {LossScheme::Benchmark, LossScheme::TwoFrame}) {
    EstimationFrames fr = pair_of(f, f);
    const PoseEstimate e = estimate_pose(fr, zero_init(), config(scheme));
    EXPECT_LT(e.twists[0].norm(), 1e-12);
    LossInputs in;
    in.camera = cam();
    in.frames = {{&f.image, &f.depth}, {&f.image, &f.depth}};
    in.poses = {SE3Pose::identity()};
    const LossDiagnostics d = total_loss(in, config(scheme).loss);
    EXPECT_DOUBLE_EQ(e.final_loss, config(scheme).loss.lambda2 * d.smoothness);
  }
}

TEST(EstimatePose, LateralTranslationDirectionAndScale) {
  // textured wall only: no depth edges, so the loss minimum sits on the truth
  SceneSpec s = SceneSpec::fronto(10.0, 5.0, 0.9, 1.3, 2);
  s.gates.clear();
  const SimulatedFrame a = render(s, at({0, 0, 0}), cam());
  const SimulatedFrame b = render(s, at({0.4, 0.1, 0}), cam());
  const Vector3d truth = relative(a, b).translation();
  for (double k : {1.0, 2.5}) {
    EstimationFrames fr = pair_of(a, b, k);
    const PoseEstimate e = estimate_pose(fr, zero_init(), config(LossScheme::TwoFrame));
    const Vector3d t = e.pose().translation();
    const double angle = std::acos(std::clamp(t.normalized().dot(truth.normalized()), -1.0, 1.0));
    EXPECT_LT(angle, 2.0 * M_PI / 180.0) << t.transpose();
    EXPECT_NEAR(t.norm() / truth.norm(), k, 0.03 * k);
  }
}

TEST(EstimatePose, LossNeverIncreases) {
  const SceneSpec s = SceneSpec::fronto(10.0, 4.0, 0.8, 1.1, 3);
  const SimulatedFrame a = render(s, at({0, 0, 0}), cam());
  const SimulatedFrame b = render(s, at({0.05, -0.02, 0.3}, 0.02), cam());
  for (LossScheme scheme : {LossScheme::Benchmark, LossScheme::TwoFrame}) {
    EstimationFrames fr = pair_of(a, b);
    const PoseEstimate e = estimate_pose(fr, zero_init(), config(scheme));
    ASSERT_GE(e.loss_trace.size(), 2u);
    for (std::size_t i = 1; i < e.loss_trace.size(); ++i) {
      EXPECT_LE(e.loss_trace[i], e.loss_trace[i - 1]);
    }
    EXPECT_EQ(e.final_loss, e.loss_trace.back());
    EXPECT_GE(e.final_loss, 0.0);
  }
}

TEST(EstimatePose, PerPixelDepthModeDecreasesLoss) {
  const SceneSpec s = SceneSpec::fronto(10.0, 4.0, 0.8, 1.1, 3);
  const SimulatedFrame a = render(s, at({0, 0, 0}), cam());
  const SimulatedFrame b = render(s, at({0.08, 0, 0.1}), cam());
  EstimationFrames fr = pair_of(a, b, 1.3);
  OptimizerConfig c = config(LossScheme::TwoFrame);
  c.depth_mode = DepthMode::OptimizePerPixel;
  c.max_iterations = 40;
  const PoseEstimate e = estimate_pose(fr, zero_init(), c);
  EXPECT_LT(e.final_loss, e.loss_trace.front());
  for (const DepthMap& d : fr.depths) validate_depth(d);
}

TEST(EstimatePose, SwappedPairGivesInversePose) {
  const SceneSpec s = SceneSpec::fronto(10.0, 5.0, 0.9, 1.3, 4);
  const SimulatedFrame a = render(s, at({0, 0, 0}), cam());
  const SimulatedFrame b = render(s, at({0.1, 0.02, 0.2}, 0.015), cam());
  OptimizerConfig c = config(LossScheme::TwoFrame);
  c.tolerance = 1e-10;
  EstimationFrames ab = pair_of(a, b), ba = pair_of(b, a);
  const PoseEstimate e_ab = estimate_pose(ab, zero_init(), c);
  const PoseEstimate e_ba = estimate_pose(ba, zero_init(), c);
  EXPECT_LT((e_ab.pose() * e_ba.pose()).log().norm(), 1e-2);
}

TEST(EstimatePose, TruePoseIsALocalMinimum) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int inst = 0; inst < 20; ++inst) {
    const SceneSpec s = SceneSpec::fronto(9.0 + 3 * U(rng), 4.0 + U(rng), 0.8, 1.2, 40 + inst);
    const SimulatedFrame a = render(s, at({0, 0, 0}), cam());
    const SimulatedFrame b =
        render(s, at({0.1 * U(rng), 0.05 * U(rng), 0.2 + 0.1 * U(rng)}, 0.02 * U(rng)), cam());
    const EstimationFrames fr = pair_of(a, b);
    const SE3Pose truth = relative(a, b);
    Vector6d dir;
    for (int i = 0; i < 6; ++i) dir(i) = U(rng);
    dir = dir.normalized() * 0.05 * truth.log().norm();
    const SE3Pose off = SE3Pose::exp(dir) * truth;
    const LossConfig lc = config(LossScheme::TwoFrame).loss;
    const double g_true = pose_gradient(fr, {truth}, lc)[0].norm();
    const double g_off = pose_gradient(fr, {off}, lc)[0].norm();
    EXPECT_LT(g_true, g_off) << "instance " << inst;
  }
}

TEST(EstimatePose, RejectsBadInputs) {
  const SceneSpec s = SceneSpec::fronto(10.0, 5.0, 0.9, 1.3, 4);
  const SimulatedFrame a = render(s, SE3Pose::identity(), cam());
  EstimationFrames fr = pair_of(a, a);
  PoseEstimate bad = zero_init();
  bad.twists[0](0) = std::nan("");
  EXPECT_THROW(estimate_pose(fr, bad, config(LossScheme::TwoFrame)), ContractViolation);
  EXPECT_THROW(estimate_pose(fr, zero_init(), config(LossScheme::ThreeFrame)), ContractViolation);
  OptimizerConfig c = config(LossScheme::TwoFrame);
  c.step_size = 0.0;
  EXPECT_THROW(estimate_pose(fr, zero_init(), c), ContractViolation);
}

TEST(RunSequence, StaticSequenceIsIdentity) {
  const SceneSpec s = SceneSpec::fronto(10.0, 5.0, 0.9, 1.3, 6);
  const SimulatedFrame f = render(s, SE3Pose::identity(), cam());
  const std::vector<GrayImage> images(5, f.image);
  const std::vector<DepthMap> depths(5, f.depth);
  for (LossScheme scheme : {LossScheme::TwoFrame, LossScheme::ThreeFrame}) {
    const SequenceResult r = run_sequence(images, depths, cam(), config(scheme));
    ASSERT_EQ(r.first_from_frame.size(), 5u);
    for (const SE3Pose& p : r.first_from_frame) EXPECT_LT(p.log().norm(), 1e-12);
    for (bool d : r.dropped) EXPECT_FALSE(d);
  }
}

namespace {

struct Line {
  std::vector<GrayImage> images;
  std::vector<DepthMap> depths;
  std::vector<Vector3d> truth;
};

Line straight_line(int frames, const Vector3d& step) {
  SceneSpec s = SceneSpec::fronto(14.0, 7.0, 1.0, 1.5, 7);
  s.gates.clear();
  Line l;
  for (int i = 0; i < frames; ++i) {
    const Vector3d p = Vector3d(-1.0, -0.2, 0.0) + i * step;
    const SimulatedFrame f = render(s, at(p), cam());
    l.images.push_back(f.image);
    l.depths.push_back(f.depth);
    l.truth.push_back(p);
  }
  return l;
}

}  // namespace

TEST(RunSequence, ConstantVelocityLineStaysStraight) {
  const Line l = straight_line(20, {0.12, 0.03, 0.1});
  const SequenceResult r = run_sequence(l.images, l.depths, cam(), config(LossScheme::TwoFrame));
  TrajectoryEstimate est, gt;
  for (int i = 0; i < 20; ++i) {
    est.t.push_back(i);
    gt.t.push_back(i);
    est.position.push_back(r.first_from_frame[i].translation());
    gt.position.push_back(l.truth[i]);
  }
  // a line has no unique rotation about itself; align the endpoints' span instead
  const double length = (l.truth.back() - l.truth.front()).norm();
  const Vector3d dir = (est.position.back() - est.position.front()).normalized();
  double off_line = 0.0;
  for (const Vector3d& p : est.position) {
    const Vector3d d = p - est.position.front();
    off_line += (d - d.dot(dir) * dir).squaredNorm();
  }
  const double scale = (est.position.back() - est.position.front()).norm() / length;
  EXPECT_LT(std::sqrt(off_line / 20.0) / scale, 0.01 * length);
  // spacing is uniform: position along the line is linear in the frame index
  double spacing_err = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double along = (est.position[i] - est.position.front()).dot(dir) / scale;
    spacing_err += std::pow(along - length * i / 19.0, 2);
  }
  EXPECT_LT(std::sqrt(spacing_err / 20.0), 0.01 * length);
}

TEST(RunSequence, FrameSkipScalesStepLength) {
  const Line l = straight_line(9, {0.1, 0.0, 0.1});
  Line skip;
  for (std::size_t i = 0; i < l.images.size(); i += 2) {
    skip.images.push_back(l.images[i]);
    skip.depths.push_back(l.depths[i]);
  }
  const OptimizerConfig c = config(LossScheme::TwoFrame);
  const SequenceResult full = run_sequence(l.images, l.depths, cam(), c);
  const SequenceResult half = run_sequence(skip.images, skip.depths, cam(), c);
  double m1 = 0, m2 = 0;
  for (const PoseEstimate& e : full.estimates) m1 += e.pose().translation().norm();
  for (const PoseEstimate& e : half.estimates) m2 += e.pose().translation().norm();
  m1 /= full.estimates.size();
  m2 /= half.estimates.size();
  EXPECT_NEAR(m2 / m1, 2.0, 0.1);
}
