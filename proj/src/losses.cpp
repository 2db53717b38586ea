#include "ssego/losses.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "warp_kernel.hpp"

namespace ssego {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (!a.same_shape(b)) throw ContractViolation(std::string(what) + ": shape mismatch");
}

// Windowed statistics of (a, b) around (x, y); a pixel q enters the window
// when it lies inside the image and, if `mask` is given, mask(q) == 1.
struct WindowStats {
  double mu_a = 0.0, mu_b = 0.0, var_a = 0.0, var_b = 0.0, cov = 0.0;
  int count = 0;
};

WindowStats window_stats(const GrayImage& a, const GrayImage& b, const ValidMask* mask, int x,
                         int y, int half) {
  double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
  int n = 0;
  for (int dy = -half; dy <= half; ++dy) {
    const int yy = y + dy;
    if (yy < 0 || yy >= a.height()) continue;
    for (int dx = -half; dx <= half; ++dx) {
      const int xx = x + dx;
      if (xx < 0 || xx >= a.width()) continue;
      if (mask && !(*mask)(xx, yy)) continue;
      const double va = a(xx, yy);
      const double vb = b(xx, yy);
      sa += va;
      sb += vb;
      saa += va * va;
      sbb += vb * vb;
      sab += va * vb;
      ++n;
    }
  }
  WindowStats s;
  s.count = n;
  if (n == 0) return s;
  const double inv = 1.0 / n;
  s.mu_a = sa * inv;
  s.mu_b = sb * inv;
  s.var_a = saa * inv - s.mu_a * s.mu_a;
  s.var_b = sbb * inv - s.mu_b * s.mu_b;
  s.cov = sab * inv - s.mu_a * s.mu_b;
  return s;
}

double ssim_index(const WindowStats& s) {
  const double num = (2.0 * s.mu_a * s.mu_b + kC1) * (2.0 * s.cov + kC2);
  const double den = (s.mu_a * s.mu_a + s.mu_b * s.mu_b + kC1) * (s.var_a + s.var_b + kC2);
  return num / den;
}

double ssim_term(const WindowStats& s) {
  return std::clamp((1.0 - ssim_index(s)) / 2.0, 0.0, 1.0);
}

// d(ssim_term)/d(a_q) = coef_mu + coef_var * (a_q - mu_a) + coef_cov * (b_q - mu_b).
struct SsimPartials {
  double coef_mu = 0.0, coef_var = 0.0, coef_cov = 0.0;
};

SsimPartials ssim_partials(const WindowStats& s) {
  SsimPartials p;
  const double a1 = 2.0 * s.mu_a * s.mu_b + kC1;
  const double a2 = 2.0 * s.cov + kC2;
  const double b1 = s.mu_a * s.mu_a + s.mu_b * s.mu_b + kC1;
  const double b2 = s.var_a + s.var_b + kC2;
  const double den = b1 * b2;
  const double ssim = a1 * a2 / den;
  const double raw = (1.0 - ssim) / 2.0;
  if (raw < 0.0 || raw > 1.0) return p;  // clamped: flat
  const double d_mu = (2.0 * s.mu_b * a2 - ssim * 2.0 * s.mu_a * b2) / den;
  const double d_var = -ssim / b2;
  const double d_cov = 2.0 * a1 / den;
  const double n = s.count;
  // chain through d(term)/d(ssim) = -1/2 and the 1/n of the window means
  p.coef_mu = -0.5 * d_mu / n;
  p.coef_var = -0.5 * d_var * 2.0 / n;
  p.coef_cov = -0.5 * d_cov / n;
  return p;
}

double depth_error_value(double warped, double target) {
  return std::abs(warped - target) / (warped + target);
}

}  // namespace

// --- config ----------------------------------------------------------------

const char* to_string(LossScheme scheme) {
  switch (scheme) {
    case LossScheme::Benchmark: return "benchmark";
    case LossScheme::TwoFrame: return "2f";
    case LossScheme::ThreeFrame: return "3f";
  }
  return "?";
}

LossScheme parse_loss_scheme(const std::string& text) {
  if (text == "benchmark") return LossScheme::Benchmark;
  if (text == "2f") return LossScheme::TwoFrame;
  if (text == "3f") return LossScheme::ThreeFrame;
  throw ConfigError("unknown loss scheme '" + text + "' (expected benchmark, 2f or 3f)");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractViolation("alpha must lie in [0,1]");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw ContractViolation("loss weights must be nonnegative");
  }
  if (ssim_window < 3 || ssim_window % 2 == 0) {
    throw ContractViolation("ssim window must be odd and >= 3");
  }
}

// --- per-pixel maps ----------------------------------------------------------

PerPixelErrorMap ssim_loss(const GrayImage& a, const GrayImage& b, int window) {
  require_same_shape(a, b, "ssim_loss");
  if (window < 3 || window % 2 == 0) throw ContractViolation("ssim window must be odd and >= 3");
  PerPixelErrorMap out(a.width(), a.height());
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      out(x, y) = ssim_term(window_stats(a, b, nullptr, x, y, window / 2));
    }
  }
  return out;
}

PerPixelErrorMap appearance_loss(const GrayImage& recon, const GrayImage& target,
                                 const LossConfig& config) {
  config.validate();
  require_same_shape(recon, target, "appearance_loss");
  const PerPixelErrorMap ssim = ssim_loss(recon, target, config.ssim_window);
  PerPixelErrorMap out(recon.width(), recon.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (1.0 - config.alpha) * std::abs(recon[i] - target[i]) + config.alpha * ssim[i];
  }
  return out;
}

PerPixelErrorMap depth_consistency_error(const DepthMap& warped, const DepthMap& target) {
  require_same_shape(warped, target, "depth_consistency_error");
  validate_depth(warped);
  validate_depth(target);
  PerPixelErrorMap out(target.width(), target.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = depth_error_value(warped[i], target[i]);
  return out;
}

namespace {

std::vector<double> normalized_disparity(const DisparityMap& d, bool normalize, double* mean_out) {
  double mean = 0.0;
  for (double v : d.values()) mean += v;
  mean /= static_cast<double>(d.size());
  if (mean_out) *mean_out = mean;
  std::vector<double> out(d.values());
  if (normalize) {
    for (double& v : out) v /= mean;
  }
  return out;
}

// Smoothness value; when grad_out is given it receives d(L)/d(disparity).
double smoothness_impl(const DisparityMap& disparity, const GrayImage& image, bool normalize,
                       std::vector<double>* grad_out) {
  require_same_shape(disparity, image, "smoothness_loss");
  const int w = disparity.width();
  const int h = disparity.height();
  double mean = 1.0;
  const std::vector<double> d = normalized_disparity(disparity, normalize, &mean);
  std::vector<double> g;
  if (grad_out) g.assign(d.size(), 0.0);
  double loss = 0.0;
  if (w > 1) {
    const double inv = 1.0 / (static_cast<double>(h) * (w - 1));
    double sum = 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x + 1 < w; ++x) {
        const std::size_t i0 = image.index(x, y);
        const std::size_t i1 = i0 + 1;
        const double diff = d[i1] - d[i0];
        const double weight = std::exp(-std::abs(image[i1] - image[i0]));
        sum += std::abs(diff) * weight;
        if (grad_out && diff != 0.0) {
          const double s = (diff > 0.0 ? 1.0 : -1.0) * weight * inv;
          g[i1] += s;
          g[i0] -= s;
        }
      }
    }
    loss += sum * inv;
  }
  if (h > 1) {
    const double inv = 1.0 / (static_cast<double>(h - 1) * w);
    double sum = 0.0;
    for (int y = 0; y + 1 < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i0 = image.index(x, y);
        const std::size_t i1 = image.index(x, y + 1);
        const double diff = d[i1] - d[i0];
        const double weight = std::exp(-std::abs(image[i1] - image[i0]));
        sum += std::abs(diff) * weight;
        if (grad_out && diff != 0.0) {
          const double s = (diff > 0.0 ? 1.0 : -1.0) * weight * inv;
          g[i1] += s;
          g[i0] -= s;
        }
      }
    }
    loss += sum * inv;
  }
  if (grad_out) {
    if (normalize) {
      // d_n = d / mean(d): dL/dd_q = g_q / m - sum_i(g_i d_i) / (n m^2)
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * disparity[i];
      const double n = static_cast<double>(g.size());
      for (double& v : g) v = v / mean - dot / (n * mean * mean);
    }
    *grad_out = std::move(g);
  }
  return loss;
}

}  // namespace

double smoothness_loss(const DisparityMap& disparity, const GrayImage& image,
                       bool normalize_disparity) {
  return smoothness_impl(disparity, image, normalize_disparity, nullptr);
}

// --- aggregation -----------------------------------------------------------

PerPixelErrorMap masked_min_map(std::span<const PerPixelErrorMap> errors,
                                std::span<const ValidMask> masks) {
  if (errors.empty() || errors.size() != masks.size()) {
    throw ContractViolation("masked_min: need one mask per error map");
  }
  const PerPixelErrorMap& first = errors.front();
  for (std::size_t k = 0; k < errors.size(); ++k) {
    require_same_shape(first, errors[k], "masked_min");
    require_same_shape(first, masks[k], "masked_min");
  }
  PerPixelErrorMap out(first.width(), first.height(), 0.0);
  for (std::size_t i = 0; i < first.size(); ++i) {
    bool valid = true;
    double best = errors[0][i];
    for (std::size_t k = 0; k < errors.size(); ++k) {
      valid = valid && masks[k][i];
      if (errors[k][i] < best) best = errors[k][i];
    }
    out[i] = valid ? best : 0.0;
  }
  return out;
}

namespace {

double masked_min_mean(std::span<const PerPixelErrorMap> errors, std::span<const ValidMask> masks,
                       const char* what) {
  const PerPixelErrorMap map = masked_min_map(errors, masks);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    bool valid = true;
    for (const ValidMask& m : masks) valid = valid && m[i];
    if (!valid) continue;
    sum += map[i];
    ++count;
  }
  if (count == 0) throw DegenerateInput(std::string(what) + ": no jointly valid pixels");
  return sum / static_cast<double>(count);
}

}  // namespace

double masked_min_photometric(std::span<const PerPixelErrorMap> errors,
                              std::span<const ValidMask> masks) {
  return masked_min_mean(errors, masks, "masked_min_photometric");
}

double masked_min_depth(std::span<const PerPixelErrorMap> errors,
                        std::span<const ValidMask> masks) {
  return masked_min_mean(errors, masks, "masked_min_depth");
}

double unmasked_min(std::span<const PerPixelErrorMap> errors) {
  if (errors.empty()) throw ContractViolation("unmasked_min: no error maps");
  double sum = 0.0;
  for (std::size_t i = 0; i < errors[0].size(); ++i) {
    double best = errors[0][i];
    for (const PerPixelErrorMap& e : errors) {
      require_same_shape(errors[0], e, "unmasked_min");
      best = std::min(best, e[i]);
    }
    sum += best;
  }
  return sum / static_cast<double>(errors[0].size());
}

// --- total loss ------------------------------------------------------------

namespace {

struct ReprojectionSpec {
  int target;
  int source;
  int pose_index;
  bool inverted;  // uses inverse(poses[pose_index])
};

std::vector<ReprojectionSpec> layout(const LossInputs& inputs, LossScheme scheme) {
  const std::size_t nf = inputs.frames.size();
  const std::size_t np = inputs.poses.size();
  const bool pair = nf == 2 && np == 1;
  const bool triplet = nf == 3 && np == 2;
  switch (scheme) {
    case LossScheme::TwoFrame:
      if (!pair) throw ContractViolation("TwoFrame scheme needs frames {prev, cur} and one pose");
      break;
    case LossScheme::ThreeFrame:
      if (!triplet) {
        throw ContractViolation("ThreeFrame scheme needs frames {prev, cur, next} and two poses");
      }
      break;
    case LossScheme::Benchmark:
      if (!pair && !triplet) {
        throw ContractViolation("Benchmark scheme needs a pair (1 pose) or a triplet (2 poses)");
      }
      break;
  }
  if (pair) return {{1, 0, 0, false}, {0, 1, 0, true}};
  return {{1, 0, 0, false}, {1, 2, 1, false}};
}

// Everything a reprojection needs for its backward pass.
struct ReprojectionState {
  ReprojectionSpec spec{};
  SE3Pose pose;
  std::vector<detail::PixelWarp> warps;
  ReprojectionMaps maps;
};

ReprojectionState evaluate_reprojection(const LossInputs& in, const ReprojectionSpec& spec,
                                        const LossConfig& cfg, bool masked) {
  const CameraIntrinsics& cam = in.camera;
  const GrayImage& target = *in.frames[spec.target].image;
  const DepthMap& target_depth = *in.frames[spec.target].depth;
  const GrayImage& source = *in.frames[spec.source].image;
  const DepthMap& source_depth = *in.frames[spec.source].depth;

  ReprojectionState st;
  st.spec = spec;
  st.pose = spec.inverted ? in.poses[spec.pose_index].inverse() : in.poses[spec.pose_index];
  const Eigen::Vector3d r3 = st.pose.rotation_matrix().col(2);
  const int w = cam.width;
  const int h = cam.height;
  ReprojectionMaps& m = st.maps;
  m.target = spec.target;
  m.source = spec.source;
  m.reconstruction = GrayImage(w, h, 0.0);
  m.image_mask = ValidMask(w, h, 0);
  m.photometric = PerPixelErrorMap(w, h, 0.0);
  m.warped_depth = DepthMap(w, h, 0.0);
  m.depth_mask = ValidMask(w, h, 0);
  m.depth = PerPixelErrorMap(w, h, 0.0);
  st.warps.resize(static_cast<std::size_t>(w) * h);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = target.index(x, y);
      detail::PixelWarp& pw = st.warps[i];
      pw = detail::warp_pixel(x, y, target_depth[i], cam, st.pose, r3, &source_depth);
      if (pw.image_valid) {
        m.reconstruction[i] = detail::sample(source, pw.taps);
        m.image_mask[i] = 1;
      }
      if (pw.depth_valid) {
        m.warped_depth[i] = pw.back_depth;
        m.depth_mask[i] = 1;
      }
    }
  }

  const int half = cfg.ssim_window / 2;
  const ValidMask* window_mask = masked ? &m.image_mask : nullptr;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = target.index(x, y);
      if (masked && !m.image_mask[i]) continue;
      const WindowStats s = window_stats(m.reconstruction, target, window_mask, x, y, half);
      m.photometric[i] = (1.0 - cfg.alpha) * std::abs(m.reconstruction[i] - target[i]) +
                         cfg.alpha * ssim_term(s);
    }
  }
  for (std::size_t i = 0; i < m.depth.size(); ++i) {
    if (m.depth_mask[i]) {
      m.depth[i] = depth_error_value(m.warped_depth[i], target_depth[i]);
    } else if (!masked) {
      m.depth[i] = 1.0;  // warped depth carries 0: |0 - D| / (0 + D)
    }
  }
  return st;
}

// Backward through one reprojection. grad_photo / grad_depth hold dL/d(error)
// per target pixel. Writes the pose gradient (w.r.t. the left perturbation of
// the pose actually used) and accumulates depth gradients.
Vector6d backward_reprojection(const LossInputs& in, const ReprojectionState& st,
                               const LossConfig& cfg, bool masked,
                               const std::vector<double>& grad_photo,
                               const std::vector<double>& grad_depth,
                               std::vector<double>& grad_target_depth,
                               std::vector<double>& grad_source_depth) {
  const CameraIntrinsics& cam = in.camera;
  const GrayImage& target = *in.frames[st.spec.target].image;
  const DepthMap& target_depth = *in.frames[st.spec.target].depth;
  const GrayImage& source = *in.frames[st.spec.source].image;
  const DepthMap& source_depth = *in.frames[st.spec.source].depth;
  const ReprojectionMaps& m = st.maps;
  const int w = cam.width;
  const int h = cam.height;
  const int half = cfg.ssim_window / 2;
  const ValidMask* window_mask = masked ? &m.image_mask : nullptr;
  const Eigen::Matrix3d R = st.pose.rotation_matrix();
  const Eigen::Vector3d r3 = R.col(2);

  // dL/d(reconstruction)
  std::vector<double> grad_recon(m.reconstruction.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = target.index(x, y);
      const double g = grad_photo[i];
      if (g == 0.0) continue;
      const double diff = m.reconstruction[i] - target[i];
      if (diff != 0.0 && m.image_mask[i]) {
        grad_recon[i] += g * (1.0 - cfg.alpha) * (diff > 0.0 ? 1.0 : -1.0);
      }
      if (cfg.alpha == 0.0) continue;
      const WindowStats s = window_stats(m.reconstruction, target, window_mask, x, y, half);
      const SsimPartials p = ssim_partials(s);
      const double scale = g * cfg.alpha;
      for (int dy = -half; dy <= half; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -half; dx <= half; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          if (window_mask && !(*window_mask)(xx, yy)) continue;
          const std::size_t q = target.index(xx, yy);
          grad_recon[q] += scale * (p.coef_mu + p.coef_var * (m.reconstruction[q] - s.mu_a) +
                                    p.coef_cov * (target[q] - s.mu_b));
        }
      }
    }
  }

  Vector6d grad_pose = Vector6d::Zero();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = target.index(x, y);
      const detail::PixelWarp& pw = st.warps[i];
      const double gr = pw.image_valid ? grad_recon[i] : 0.0;
      const double gd = pw.depth_valid ? grad_depth[i] : 0.0;
      if (gr == 0.0 && gd == 0.0) continue;

      const Eigen::Vector3d& Y = pw.point;
      const double iz = 1.0 / Y.z();
      Eigen::Matrix<double, 2, 3> duv;
      duv << cam.fx * iz, 0.0, -cam.fx * Y.x() * iz * iz, 0.0, cam.fy * iz,
          -cam.fy * Y.y() * iz * iz;
      const BilinearTaps& t = pw.taps;
      const double ax = pw.taps.w10 + pw.taps.w11;  // fractional offsets
      const double ay = pw.taps.w01 + pw.taps.w11;

      Eigen::Vector3d grad_Y = Eigen::Vector3d::Zero();
      if (gr != 0.0) {
        const Eigen::Vector2d grad_img{
            (1.0 - ay) * (source(t.x1, t.y0) - source(t.x0, t.y0)) +
                ay * (source(t.x1, t.y1) - source(t.x0, t.y1)),
            (1.0 - ax) * (source(t.x0, t.y1) - source(t.x0, t.y0)) +
                ax * (source(t.x1, t.y1) - source(t.x1, t.y0))};
        grad_Y += gr * (duv.transpose() * grad_img);
      }
      if (gd != 0.0) {
        const double back = pw.back_depth;
        const double tgt = target_depth[i];
        const double sum = back + tgt;
        double d_back = 0.0;
        double d_tgt = 0.0;
        if (back > tgt) {
          d_back = 2.0 * tgt / (sum * sum);
          d_tgt = -2.0 * back / (sum * sum);
        } else if (back < tgt) {
          d_back = -2.0 * tgt / (sum * sum);
          d_tgt = 2.0 * back / (sum * sum);
        }
        const double gb = gd * d_back;
        grad_target_depth[i] += gd * d_tgt;
        if (gb != 0.0) {
          const double ds = pw.sampled_depth;
          const Eigen::Vector2d grad_ds{
              (1.0 - ay) * (source_depth(t.x1, t.y0) - source_depth(t.x0, t.y0)) +
                  ay * (source_depth(t.x1, t.y1) - source_depth(t.x0, t.y1)),
              (1.0 - ax) * (source_depth(t.x0, t.y1) - source_depth(t.x0, t.y0)) +
                  ax * (source_depth(t.x1, t.y1) - source_depth(t.x1, t.y0))};
          Eigen::Matrix3d dn;
          dn << iz, 0.0, -Y.x() * iz * iz, 0.0, iz, -Y.y() * iz * iz, 0.0, 0.0, 0.0;
          const Eigen::RowVector3d dback_dY =
              ds * r3.transpose() * dn +
              r3.dot(pw.normalized) * grad_ds.transpose() * duv;
          grad_Y += gb * dback_dY.transpose();
          // explicit dependence of inverse(pose) on the perturbation
          grad_pose.head<3>() += gb * (-r3);
          grad_pose.tail<3>() += gb * (r3.transpose() * hat(pw.source_point)).transpose();
          // source depth taps
          const double gs = gb * r3.dot(pw.normalized);
          grad_source_depth[source_depth.index(t.x0, t.y0)] += gs * t.w00;
          grad_source_depth[source_depth.index(t.x1, t.y0)] += gs * t.w10;
          grad_source_depth[source_depth.index(t.x0, t.y1)] += gs * t.w01;
          grad_source_depth[source_depth.index(t.x1, t.y1)] += gs * t.w11;
        }
      }
      if (grad_Y.isZero(0.0)) continue;
      // Y = exp(eps) * P * (D * ray): dY/dv = I, dY/dw = -[Y]x, dY/dD = R ray
      grad_pose.head<3>() += grad_Y;
      grad_pose.tail<3>() += (-hat(Y)).transpose() * grad_Y;
      grad_target_depth[i] += grad_Y.dot(R * cam.ray(x, y));
    }
  }
  return grad_pose;
}

void check_inputs(const LossInputs& in) {
  in.camera.validate();
  for (const FrameView& f : in.frames) {
    if (!f.image || !f.depth) throw ContractViolation("loss frame without image or depth");
    if (!in.camera.matches(*f.image) || !in.camera.matches(*f.depth)) {
      throw ContractViolation("loss frame shape disagrees with the camera");
    }
    validate_depth(*f.depth);
  }
}

std::vector<int> smoothness_targets(const std::vector<ReprojectionSpec>& specs) {
  std::vector<int> out;
  for (const ReprojectionSpec& s : specs) {
    if (std::find(out.begin(), out.end(), s.target) == out.end()) out.push_back(s.target);
  }
  return out;
}

}  // namespace

std::vector<ReprojectionMaps> reprojection_maps(const LossInputs& inputs,
                                                const LossConfig& config) {
  config.validate();
  check_inputs(inputs);
  const bool masked = config.scheme != LossScheme::Benchmark;
  std::vector<ReprojectionMaps> out;
  for (const ReprojectionSpec& spec : layout(inputs, config.scheme)) {
    out.push_back(evaluate_reprojection(inputs, spec, config, masked).maps);
  }
  return out;
}

LossDiagnostics total_loss(const LossInputs& inputs, const LossConfig& config,
                           LossGradient* gradient) {
  config.validate();
  check_inputs(inputs);
  const bool masked = config.scheme != LossScheme::Benchmark;
  const std::vector<ReprojectionSpec> specs = layout(inputs, config.scheme);
  std::vector<ReprojectionState> states;
  states.reserve(specs.size());
  for (const ReprojectionSpec& spec : specs) {
    states.push_back(evaluate_reprojection(inputs, spec, config, masked));
  }
  const std::size_t npix = states[0].maps.photometric.size();

  // Photometric: per-pixel min over both maps; `which` records the winner.
  std::vector<std::int8_t> photo_pick(npix, -1);
  double photo_sum = 0.0;
  std::size_t photo_count = 0;
  for (std::size_t i = 0; i < npix; ++i) {
    const bool valid = !masked || (states[0].maps.image_mask[i] && states[1].maps.image_mask[i]);
    if (!valid) continue;
    const double e0 = states[0].maps.photometric[i];
    const double e1 = states[1].maps.photometric[i];
    photo_pick[i] = e1 < e0 ? 1 : 0;
    photo_sum += std::min(e0, e1);
    ++photo_count;
  }
  if (photo_count == 0) throw DegenerateInput("total_loss: no jointly valid photometric pixels");

  // Depth consistency: masked min of both maps, or the first map unmasked.
  std::vector<std::int8_t> depth_pick(npix, -1);
  double depth_sum = 0.0;
  std::size_t depth_count = 0;
  for (std::size_t i = 0; i < npix; ++i) {
    if (masked) {
      if (!(states[0].maps.depth_mask[i] && states[1].maps.depth_mask[i])) continue;
      const double e0 = states[0].maps.depth[i];
      const double e1 = states[1].maps.depth[i];
      depth_pick[i] = e1 < e0 ? 1 : 0;
      depth_sum += std::min(e0, e1);
    } else {
      depth_pick[i] = 0;
      depth_sum += states[0].maps.depth[i];
    }
    ++depth_count;
  }
  if (depth_count == 0) throw DegenerateInput("total_loss: no jointly valid depth pixels");

  const std::vector<int> smooth_frames = smoothness_targets(specs);
  double smooth = 0.0;
  std::vector<std::vector<double>> smooth_grads(smooth_frames.size());
  for (std::size_t k = 0; k < smooth_frames.size(); ++k) {
    const FrameView& f = inputs.frames[smooth_frames[k]];
    smooth += smoothness_impl(to_disparity(*f.depth), *f.image, config.normalize_disparity,
                              gradient ? &smooth_grads[k] : nullptr);
  }
  smooth /= static_cast<double>(smooth_frames.size());

  LossDiagnostics d;
  d.photometric = photo_sum / static_cast<double>(photo_count);
  d.depth = depth_sum / static_cast<double>(depth_count);
  d.smoothness = smooth;
  d.total = d.photometric + config.lambda1 * d.depth + config.lambda2 * d.smoothness;
  d.photometric_pixels = photo_count;
  d.depth_pixels = depth_count;

  if (gradient) {
    gradient->pose.assign(inputs.poses.size(), Vector6d::Zero());
    gradient->depth.assign(inputs.frames.size(), std::vector<double>(npix, 0.0));
    const double gp = 1.0 / static_cast<double>(photo_count);
    const double gdep = config.lambda1 / static_cast<double>(depth_count);
    for (std::size_t r = 0; r < states.size(); ++r) {
      std::vector<double> grad_photo(npix, 0.0);
      std::vector<double> grad_depth(npix, 0.0);
      for (std::size_t i = 0; i < npix; ++i) {
        if (photo_pick[i] == static_cast<int>(r)) grad_photo[i] = gp;
        if (depth_pick[i] == static_cast<int>(r)) grad_depth[i] = gdep;
      }
      const ReprojectionState& st = states[r];
      const Vector6d g = backward_reprojection(inputs, st, config, masked, grad_photo, grad_depth,
                                               gradient->depth[st.spec.target],
                                               gradient->depth[st.spec.source]);
      if (st.spec.inverted) {
        // inverse(exp(d) T) = exp(-Ad(T^-1) d) T^-1
        gradient->pose[st.spec.pose_index] -= st.pose.adjoint().transpose() * g;
      } else {
        gradient->pose[st.spec.pose_index] += g;
      }
    }
    const double ws = config.lambda2 / static_cast<double>(smooth_frames.size());
    for (std::size_t k = 0; k < smooth_frames.size(); ++k) {
      const DepthMap& depth = *inputs.frames[smooth_frames[k]].depth;
      std::vector<double>& out = gradient->depth[smooth_frames[k]];
      for (std::size_t i = 0; i < npix; ++i) {
        // disparity = 1 / depth
        out[i] += ws * smooth_grads[k][i] * (-1.0 / (depth[i] * depth[i]));
      }
    }
  }
  return d;
}

void write_diagnostics_header(std::ostream& out) {
  out << "label,total,photometric,depth,smoothness,photometric_pixels,depth_pixels\n";
}

void write_diagnostics_row(std::ostream& out, const std::string& label,
                           const LossDiagnostics& d) {
  const auto old = out.precision(17);
  out << label << ',' << d.total << ',' << d.photometric << ',' << d.depth << ','
      << d.smoothness << ',' << d.photometric_pixels << ',' << d.depth_pixels << '\n';
  out.precision(old);
}

}  // namespace ssego
