#pragma once

#include <string>
#include <vector>

#include <Eigen/Geometry>

namespace ssego {

struct Sim3Transform {
  double scale = 1.0;
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

/**
 * Least-squares similarity (with_scale) or rigid transform T minimizing
 * sum |gt_i - T(est_i)|^2. The rotation is always proper (det = +1).
 * Throws DegenerateInput for fewer than 3 points or collinear/coincident sets.
 */
Sim3Transform umeyama_align(const std::vector<Eigen::Vector3d>& est,
                            const std::vector<Eigen::Vector3d>& gt, bool with_scale);

struct TrajectoryEstimate {
  std::vector<double> t;
  std::vector<Eigen::Vector3d> position;
  std::vector<Eigen::Vector3d> velocity;  // optional; empty or one per sample
  std::string frame = "world";

  void validate() const;
  std::size_t size() const noexcept { return t.size(); }
};

enum class AlignMode { None, SE3, Sim3 };
const char* to_string(AlignMode mode);
AlignMode parse_align_mode(const std::string& text);

struct Association {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (est index, gt index)
  std::size_t unmatched = 0;                               // est samples without a partner
};

/// Nearest-timestamp association; pairs further apart than max_gap are dropped.
Association associate(const std::vector<double>& est_t, const std::vector<double>& gt_t,
                      double max_gap);

struct RmseResult {
  double rmse = 0.0;
  std::size_t matched = 0;
  std::size_t unmatched = 0;
  Sim3Transform alignment;
};

/// Position RMSE after alignment. max_gap <= 0 picks half the median estimate
/// period. Throws DegenerateInput when nothing associates.
RmseResult position_rmse(const TrajectoryEstimate& est, const TrajectoryEstimate& gt,
                         AlignMode mode, double max_gap = 0.0);

struct VelocityBin {
  double lo = 0.0, hi = 0.0;  // gt speed range [lo, hi)
  double mean = 0.0, stddev = 0.0;
  std::size_t count = 0;
};

/// Relative velocity error |v_est - v_gt| / |v_gt| binned by gt speed. Samples
/// slower than `floor` are skipped; empty bins are omitted.
std::vector<VelocityBin> relative_velocity_error(const std::vector<Eigen::Vector3d>& est,
                                                 const std::vector<Eigen::Vector3d>& gt,
                                                 double bin_width = 1.0, double floor = 0.5);

}  // namespace ssego
