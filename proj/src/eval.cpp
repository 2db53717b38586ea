#include "ssego/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "ssego/errors.hpp"

namespace ssego {

Sim3Transform umeyama_align(const std::vector<Eigen::Vector3d>& est,
                            const std::vector<Eigen::Vector3d>& gt, bool with_scale) {
  if (est.size() != gt.size()) throw ContractViolation("umeyama_align: point counts differ");
  const std::size_t n = est.size();
  if (n < 3) throw DegenerateInput("umeyama_align: need at least 3 correspondences");
  Eigen::Vector3d mu_e = Eigen::Vector3d::Zero(), mu_g = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_e += est[i];
    mu_g += gt[i];
  }
  mu_e /= static_cast<double>(n);
  mu_g /= static_cast<double>(n);
  Eigen::Matrix3d sigma = Eigen::Matrix3d::Zero(), cov_e = Eigen::Matrix3d::Zero(),
                  cov_g = Eigen::Matrix3d::Zero();
  double var_e = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d e = est[i] - mu_e, g = gt[i] - mu_g;
    sigma += g * e.transpose();
    cov_e += e * e.transpose();
    cov_g += g * g.transpose();
    var_e += e.squaredNorm();
  }
  sigma /= static_cast<double>(n);
  var_e /= static_cast<double>(n);

  // a line (or point) leaves the rotation about it undetermined
  for (const Eigen::Matrix3d* c : {&cov_e, &cov_g}) {
    const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(*c).eigenvalues();
    if (!(ev(1) > 1e-12 * std::max(ev(2), 1e-300))) {
      throw DegenerateInput("umeyama_align: correspondences are collinear or coincident");
    }
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s_diag(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s_diag(2) = -1.0;
  const Eigen::Matrix3d R = svd.matrixU() * s_diag.asDiagonal() * svd.matrixV().transpose();
  Sim3Transform out;
  out.scale = with_scale ? svd.singularValues().dot(s_diag) / var_e : 1.0;
  out.rotation = Eigen::Quaterniond(R).normalized();
  out.translation = mu_g - out.scale * R * mu_e;
  return out;
}

void TrajectoryEstimate::validate() const {
  if (position.size() != t.size() || (!velocity.empty() && velocity.size() != t.size())) {
    throw ContractViolation("trajectory: column lengths differ");
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i]) || !position[i].allFinite() ||
        (!velocity.empty() && !velocity[i].allFinite())) {
      throw ContractViolation("trajectory: non-finite value at row " + std::to_string(i));
    }
    if (i > 0 && !(t[i] > t[i - 1])) {
      throw NonMonotoneTimestamps("trajectory", i);
    }
  }
}

const char* to_string(AlignMode mode) {
  switch (mode) {
    case AlignMode::None: return "none";
    case AlignMode::SE3: return "se3";
    case AlignMode::Sim3: return "sim3";
  }
  return "?";
}

AlignMode parse_align_mode(const std::string& text) {
  if (text == "none") return AlignMode::None;
  if (text == "se3") return AlignMode::SE3;
  if (text == "sim3") return AlignMode::Sim3;
  throw ConfigError("unknown alignment mode '" + text + "' (expected none, se3 or sim3)");
}

Association associate(const std::vector<double>& est_t, const std::vector<double>& gt_t,
                      double max_gap) {
  Association a;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est_t.size(); ++i) {
    while (j + 1 < gt_t.size() && std::abs(gt_t[j + 1] - est_t[i]) <= std::abs(gt_t[j] - est_t[i])) {
      ++j;
    }
    if (!gt_t.empty() && std::abs(gt_t[j] - est_t[i]) <= max_gap) {
      a.pairs.emplace_back(i, j);
    } else {
      ++a.unmatched;
    }
  }
  return a;
}

RmseResult position_rmse(const TrajectoryEstimate& est, const TrajectoryEstimate& gt,
                         AlignMode mode, double max_gap) {
  est.validate();
  gt.validate();
  if (max_gap <= 0.0) {
    std::vector<double> dt;
    for (std::size_t i = 1; i < est.t.size(); ++i) dt.push_back(est.t[i] - est.t[i - 1]);
    if (dt.empty()) {
      max_gap = 1e-9;
    } else {
      std::nth_element(dt.begin(), dt.begin() + dt.size() / 2, dt.end());
      max_gap = 0.5 * dt[dt.size() / 2];
    }
  }
  const Association a = associate(est.t, gt.t, max_gap);
  if (a.pairs.empty()) throw DegenerateInput("position_rmse: no associated samples");
  std::vector<Eigen::Vector3d> pe, pg;
  for (const auto& [i, j] : a.pairs) {
    pe.push_back(est.position[i]);
    pg.push_back(gt.position[j]);
  }
  RmseResult r;
  r.matched = a.pairs.size();
  r.unmatched = a.unmatched;
  if (mode != AlignMode::None) r.alignment = umeyama_align(pe, pg, mode == AlignMode::Sim3);
  double s = 0.0;
  for (std::size_t k = 0; k < pe.size(); ++k) s += (pg[k] - r.alignment * pe[k]).squaredNorm();
  r.rmse = std::sqrt(s / static_cast<double>(pe.size()));
  return r;
}

std::vector<VelocityBin> relative_velocity_error(const std::vector<Eigen::Vector3d>& est,
                                                 const std::vector<Eigen::Vector3d>& gt,
                                                 double bin_width, double floor) {
  if (est.size() != gt.size()) throw ContractViolation("relative_velocity_error: lengths differ");
  if (!(bin_width > 0.0)) throw ContractViolation("relative_velocity_error: bin width must be > 0");
  std::map<long, std::vector<double>> bins;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double speed = gt[i].norm();
    if (speed < floor) continue;
    bins[static_cast<long>(std::floor(speed / bin_width))].push_back((est[i] - gt[i]).norm() / speed);
  }
  std::vector<VelocityBin> out;
  for (const auto& [k, v] : bins) {
    VelocityBin b;
    b.lo = static_cast<double>(k) * bin_width;
    b.hi = b.lo + bin_width;
    b.count = v.size();
    for (double e : v) b.mean += e;
    b.mean /= static_cast<double>(v.size());
    for (double e : v) b.stddev += (e - b.mean) * (e - b.mean);
    b.stddev = std::sqrt(b.stddev / static_cast<double>(v.size()));
    out.push_back(b);
  }
  return out;
}

}  // namespace ssego
