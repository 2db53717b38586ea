#pragma once

#include <string>
#include <vector>

#include "ssego/losses.hpp"

namespace ssego {

enum class DepthMode {
  GroundTruthScaled,  // depth maps are given (up to a global scale) and held fixed
  OptimizePerPixel,   // depth maps are refined jointly with the pose
};

struct OptimizerConfig {
  LossConfig loss;
  int max_iterations = 150;
  double step_size = 1.0;       // initial step, in preconditioned units
  double tolerance = 1e-7;      // stop when the relative loss decrease falls below this
  int max_backtracks = 30;
  double max_rotation_step = 0.05;     // rad per iteration
  double max_translation_step = 0.05;  // fraction of the mean depth per iteration
  double min_valid_fraction = 0.3;     // iterates seeing less overlap are rejected
  DepthMode depth_mode = DepthMode::GroundTruthScaled;

  void validate() const;
};

/**
 * Relative pose(s) of one estimation window. twists[0] maps points of the
 * current frame into the previous frame (cur -> prev); the triplet layout adds
 * twists[1] (cur -> next). Twists are ordered (translation, rotation).
 */
struct PoseEstimate {
  std::vector<Vector6d> twists;
  bool converged = false;
  double final_loss = 0.0;
  int iterations = 0;
  std::vector<double> loss_trace;  // one entry per accepted step, starting with the initial loss

  SE3Pose pose(std::size_t k = 0) const { return SE3Pose::exp(twists.at(k)); }
};

struct EstimationFrames {
  std::vector<GrayImage> images;  // {prev, cur} or {prev, cur, next}
  std::vector<DepthMap> depths;
  CameraIntrinsics camera;
};

/**
 * Descent with Armijo backtracking on total_loss. Pose-only problems take BFGS
 * directions seeded with a diagonal preconditioner (squared mean depth on the
 * translation half); OptimizePerPixel uses the preconditioned gradient alone.
 * Steps are capped per iteration. Returns the best iterate; with OptimizePerPixel the
 * refined depths are written back into `frames.depths`. Throws
 * NumericalFailure if the loss becomes non-finite.
 */
PoseEstimate estimate_pose(EstimationFrames& frames, const PoseEstimate& init,
                           const OptimizerConfig& config);

/// Gradient of the total loss with respect to the twist(s) at a given pose.
std::vector<Vector6d> pose_gradient(const EstimationFrames& frames,
                                    const std::vector<SE3Pose>& poses, const LossConfig& config);

struct SequenceResult {
  std::vector<PoseEstimate> estimates;          // one per window
  std::vector<SE3Pose> first_from_frame;        // chained trajectory, one per input frame
  std::vector<bool> dropped;                    // per window: optimizer failed, warm start used
  std::vector<DepthMap> depths;                 // final per-frame depth maps
};

/// Chains windowed estimates over a sequence. Each window starts from the
/// previous window's result (constant-velocity warm start).
SequenceResult run_sequence(const std::vector<GrayImage>& images,
                            const std::vector<DepthMap>& depths, const CameraIntrinsics& camera,
                            const OptimizerConfig& config);

}  // namespace ssego
