#include "ssego/optimizer.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace ssego {

namespace {

struct Iterate {
  std::vector<SE3Pose> poses;
  std::vector<DepthMap> depths;
};

LossInputs inputs_of(const std::vector<GrayImage>& images, const std::vector<DepthMap>& depths,
                     const std::vector<SE3Pose>& poses, const CameraIntrinsics& camera) {
  LossInputs in;
  in.camera = camera;
  for (std::size_t i = 0; i < images.size(); ++i) in.frames.push_back({&images[i], &depths[i]});
  in.poses = poses;
  return in;
}

// Loss at an iterate; degenerate configurations (nothing jointly visible)
// count as +inf so the line search simply rejects them.
double evaluate(const EstimationFrames& f, const Iterate& it, const LossConfig& cfg,
                double min_valid_fraction, LossGradient* grad) {
  try {
    const LossDiagnostics d =
        total_loss(inputs_of(f.images, it.depths, it.poses, f.camera), cfg, grad);
    const double npix = static_cast<double>(f.camera.width) * f.camera.height;
    if (static_cast<double>(d.photometric_pixels) < min_valid_fraction * npix) {
      return std::numeric_limits<double>::infinity();
    }
    return d.total;
  } catch (const DegenerateInput&) {
    return std::numeric_limits<double>::infinity();
  }
}

double mean_depth(const std::vector<DepthMap>& depths) {
  double s = 0.0;
  std::size_t n = 0;
  for (const DepthMap& d : depths) {
    for (double v : d.values()) s += v;
    n += d.size();
  }
  return s / static_cast<double>(n);
}

std::string trace_text(const std::vector<double>& trace) {
  std::ostringstream os;
  os.precision(10);
  os << "loss trace:";
  const std::size_t first = trace.size() > 8 ? trace.size() - 8 : 0;
  for (std::size_t i = first; i < trace.size(); ++i) os << ' ' << trace[i];
  return os.str();
}

}  // namespace

void OptimizerConfig::validate() const {
  loss.validate();
  if (max_iterations < 0 || !(step_size > 0.0) || !(tolerance >= 0.0) || max_backtracks < 1 ||
      !(max_rotation_step > 0.0) || !(max_translation_step > 0.0) ||
      !(min_valid_fraction >= 0.0 && min_valid_fraction <= 1.0)) {
    throw ContractViolation("optimizer: need positive step size and a nonnegative iteration budget");
  }
}

std::vector<Vector6d> pose_gradient(const EstimationFrames& frames,
                                    const std::vector<SE3Pose>& poses, const LossConfig& config) {
  LossGradient g;
  total_loss(inputs_of(frames.images, frames.depths, poses, frames.camera), config, &g);
  return g.pose;
}

PoseEstimate estimate_pose(EstimationFrames& frames, const PoseEstimate& init,
                           const OptimizerConfig& config) {
  config.validate();
  const bool triplet = config.loss.scheme == LossScheme::ThreeFrame ||
                       (config.loss.scheme == LossScheme::Benchmark && frames.images.size() == 3);
  const std::size_t npose = triplet ? 2 : 1;
  if (frames.images.size() != npose + 1 || frames.depths.size() != frames.images.size()) {
    throw ContractViolation("estimate_pose: frame count does not fit the loss scheme");
  }
  Iterate cur;
  for (std::size_t k = 0; k < npose; ++k) {
    const Vector6d xi = k < init.twists.size() ? init.twists[k] : Vector6d::Zero();
    if (!xi.allFinite()) throw ContractViolation("estimate_pose: non-finite initial twist");
    cur.poses.push_back(SE3Pose::exp(xi));
  }
  cur.depths = frames.depths;
  const bool refine_depth = config.depth_mode == DepthMode::OptimizePerPixel;
  const double depth_scale = mean_depth(frames.depths);
  const double scale2 = depth_scale * depth_scale;
  const double npix = static_cast<double>(frames.camera.width) * frames.camera.height;

  PoseEstimate out;
  LossGradient grad;
  double loss = evaluate(frames, cur, config.loss, config.min_valid_fraction, &grad);
  if (!std::isfinite(loss)) {
    throw NumericalFailure("estimate_pose: initial loss is not finite", 0);
  }
  out.loss_trace.push_back(loss);
  double step = config.step_size;

  // Pose-only problems use BFGS on the stacked twist (the translation and
  // rotation halves are strongly coupled); the per-pixel depth mode is too
  // large for a dense inverse Hessian and falls back to preconditioned descent.
  const Eigen::Index n = static_cast<Eigen::Index>(6 * npose);
  Eigen::VectorXd h0(n);
  for (Eigen::Index i = 0; i < n; ++i) h0(i) = (i % 6) < 3 ? scale2 : 1.0;
  Eigen::MatrixXd H = h0.asDiagonal();
  auto stack = [&](const std::vector<Vector6d>& g) {
    Eigen::VectorXd v(n);
    for (std::size_t k = 0; k < npose; ++k) v.segment<6>(static_cast<Eigen::Index>(6 * k)) = g[k];
    return v;
  };
  Eigen::VectorXd g = stack(grad.pose);
  bool bfgs_reset = false;

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    Eigen::VectorXd d = refine_depth ? Eigen::VectorXd(-(h0.asDiagonal() * g)) : Eigen::VectorXd(-H * g);
    if (!(g.dot(d) < 0.0)) {
      H = h0.asDiagonal();
      d = -(h0.asDiagonal() * g);
    }
    double slope = -g.dot(d);
    std::vector<std::vector<double>> ddir;
    if (refine_depth) {
      ddir.resize(cur.depths.size());
      for (std::size_t f = 0; f < cur.depths.size(); ++f) {
        ddir[f].resize(cur.depths[f].size());
        for (std::size_t i = 0; i < ddir[f].size(); ++i) {
          const double d2 = cur.depths[f][i] * cur.depths[f][i];
          const double p = grad.depth[f][i] * d2 * npix;
          ddir[f][i] = -p;
          slope += grad.depth[f][i] * p;
        }
      }
    }
    if (!(slope > 0.0)) {
      out.converged = true;
      break;
    }

    if (!refine_depth) step = config.step_size;
    // trust region on the pose part of the step
    for (std::size_t k = 0; k < npose; ++k) {
      const Vector6d dk = d.segment<6>(static_cast<Eigen::Index>(6 * k));
      const double nt = dk.head<3>().norm(), nr = dk.tail<3>().norm();
      if (nt > 0.0) step = std::min(step, config.max_translation_step * depth_scale / nt);
      if (nr > 0.0) step = std::min(step, config.max_rotation_step / nr);
    }
    bool accepted = false;
    Iterate trial;
    LossGradient trial_grad;
    double trial_loss = 0.0;
    for (int b = 0; b < config.max_backtracks; ++b, step *= 0.5) {
      trial.poses.clear();
      for (std::size_t k = 0; k < npose; ++k) {
        const Vector6d dk = d.segment<6>(static_cast<Eigen::Index>(6 * k));
        trial.poses.push_back(SE3Pose::exp(step * dk) * cur.poses[k]);
      }
      trial.depths = cur.depths;
      if (refine_depth) {
        bool positive = true;
        for (std::size_t f = 0; f < trial.depths.size() && positive; ++f) {
          for (std::size_t i = 0; i < ddir[f].size(); ++i) {
            trial.depths[f][i] += step * ddir[f][i];
            if (!(trial.depths[f][i] > 0.0)) {
              positive = false;
              break;
            }
          }
        }
        if (!positive) continue;
      }
      trial_loss = evaluate(frames, trial, config.loss, config.min_valid_fraction, &trial_grad);
      if (std::isnan(trial_loss)) {
        throw NumericalFailure("estimate_pose: loss became NaN; " + trace_text(out.loss_trace),
                               static_cast<std::size_t>(iter));
      }
      if (trial_loss <= loss - 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // a stale curvature model can point nowhere useful; retry from scratch once
      if (!refine_depth && !bfgs_reset) {
        H = h0.asDiagonal();
        bfgs_reset = true;
        continue;
      }
      out.converged = true;
      break;
    }
    bfgs_reset = false;
    const double decrease = loss - trial_loss;
    const Eigen::VectorXd s_k = step * d;
    const Eigen::VectorXd g_new = stack(trial_grad.pose);
    const Eigen::VectorXd y_k = g_new - g;
    const double sy = s_k.dot(y_k);
    if (!refine_depth && sy > 1e-12 * s_k.norm() * y_k.norm()) {
      const Eigen::VectorXd Hy = H * y_k;
      const double rho = 1.0 / sy;
      H += (rho * rho * y_k.dot(Hy) + rho) * s_k * s_k.transpose() -
           rho * (Hy * s_k.transpose() + s_k * Hy.transpose());
    }
    cur = std::move(trial);
    grad = std::move(trial_grad);
    g = g_new;
    loss = trial_loss;
    out.loss_trace.push_back(loss);
    out.iterations = iter + 1;
    if (refine_depth) step = std::min(step * 2.0, 1e6 * config.step_size);
    if (decrease <= config.tolerance * std::abs(loss)) {
      out.converged = true;
      break;
    }
  }

  out.final_loss = loss;
  for (const SE3Pose& p : cur.poses) out.twists.push_back(p.log());
  if (refine_depth) frames.depths = cur.depths;
  return out;
}

SequenceResult run_sequence(const std::vector<GrayImage>& images,
                            const std::vector<DepthMap>& depths, const CameraIntrinsics& camera,
                            const OptimizerConfig& config) {
  config.validate();
  if (images.size() < 2 || images.size() != depths.size()) {
    throw ContractViolation("run_sequence: need at least two frames with depth");
  }
  const bool triplet = config.loss.scheme == LossScheme::ThreeFrame;
  if (triplet && images.size() < 3) throw ContractViolation("run_sequence: triplets need 3 frames");
  SequenceResult r;
  r.depths = depths;
  r.first_from_frame.push_back(SE3Pose::identity());
  PoseEstimate warm;
  warm.twists.assign(triplet ? 2 : 1, Vector6d::Zero());

  // pair layout: window k = frames {k-1, k}; triplet layout: {k-1, k, k+1}
  const std::size_t windows = triplet ? images.size() - 2 : images.size() - 1;
  for (std::size_t w = 0; w < windows; ++w) {
    EstimationFrames f;
    f.camera = camera;
    const std::size_t n = triplet ? 3 : 2;
    for (std::size_t j = 0; j < n; ++j) {
      f.images.push_back(images[w + j]);
      f.depths.push_back(r.depths[w + j]);
    }
    PoseEstimate est;
    bool dropped = false;
    try {
      est = estimate_pose(f, warm, config);
    } catch (const NumericalFailure&) {
      est = warm;
      dropped = true;
    }
    if (config.depth_mode == DepthMode::OptimizePerPixel && !dropped) {
      for (std::size_t j = 0; j < n; ++j) r.depths[w + j] = f.depths[j];
    }
    // cur -> prev maps frame (w+1) into frame w
    const SE3Pose prev_from_cur = est.pose(0);
    r.first_from_frame.push_back(r.first_from_frame.back() * prev_from_cur);
    if (triplet && w + 1 == windows) {
      const SE3Pose next_from_cur = est.pose(1);
      r.first_from_frame.push_back(r.first_from_frame.back() * next_from_cur.inverse());
    }
    r.estimates.push_back(est);
    r.dropped.push_back(dropped);
    warm = est;
    if (triplet) {
      // next window's prev is this window's cur: cur->prev of the next window
      // is the inverse of this window's cur->next.
      warm.twists[0] = est.pose(1).inverse().log();
      warm.twists[1] = est.twists[1];
    }
  }
  return r;
}

}  // namespace ssego
