#pragma once

#include <iosfwd>
#include <string>
#include <span>
#include <vector>

#include "ssego/geometry.hpp"

namespace ssego {

/// Which reprojections feed the loss and how they are aggregated.
///  - Benchmark: per-pixel minimum over the reprojection errors without any
///    validity mask (normalized by all pixels), plus a single-reprojection
///    depth-consistency term.
///  - TwoFrame: frames {prev, cur}; cur is reconstructed from prev with T and
///    prev from cur with inverse(T). Masked per-pixel minimum of both.
///  - ThreeFrame: frames {prev, cur, next}; cur is reconstructed from both
///    neighbours with two independent poses. Masked per-pixel minimum.
enum class LossScheme { Benchmark, TwoFrame, ThreeFrame };

const char* to_string(LossScheme scheme);
LossScheme parse_loss_scheme(const std::string& text);

struct LossConfig {
  double alpha = 0.85;     // SSIM share of the appearance term
  double lambda1 = 0.15;   // depth consistency weight
  double lambda2 = 0.001;  // disparity smoothness weight
  LossScheme scheme = LossScheme::TwoFrame;
  int ssim_window = 3;
  bool normalize_disparity = true;

  void validate() const;
};

/// Per-pixel (1 - SSIM(a, b)) / 2 over box windows clipped to the image,
/// clamped to [0, 1].
PerPixelErrorMap ssim_loss(const GrayImage& a, const GrayImage& b, int window);

/// (1 - alpha) |recon - target| + alpha * ssim_loss(recon, target).
PerPixelErrorMap appearance_loss(const GrayImage& recon, const GrayImage& target,
                                 const LossConfig& config);

/// |warped - target| / (warped + target); both maps must be strictly positive.
PerPixelErrorMap depth_consistency_error(const DepthMap& warped, const DepthMap& target);

/// Edge-aware first-order smoothness of the (optionally mean-normalized)
/// disparity: mean_x(|dx d| e^-|dx I|) + mean_y(|dy d| e^-|dy I|), forward
/// differences.
double smoothness_loss(const DisparityMap& disparity, const GrayImage& image,
                       bool normalize_disparity = true);

/// Per-pixel minimum across the maps (first map wins ties), multiplied by the
/// product of all masks, averaged over the jointly valid pixels. Throws
/// DegenerateInput when no pixel is jointly valid.
double masked_min_photometric(std::span<const PerPixelErrorMap> errors,
                              std::span<const ValidMask> masks);
double masked_min_depth(std::span<const PerPixelErrorMap> errors,
                        std::span<const ValidMask> masks);

/// Per-pixel minimum across the maps averaged over every pixel (no masking).
double unmasked_min(std::span<const PerPixelErrorMap> errors);

/// Per-pixel minimum across the maps, masked; invalid pixels carry 0.
PerPixelErrorMap masked_min_map(std::span<const PerPixelErrorMap> errors,
                                std::span<const ValidMask> masks);

// ---------------------------------------------------------------------------

struct FrameView {
  const GrayImage* image = nullptr;
  const DepthMap* depth = nullptr;
};

/// Frames and relative poses for one loss evaluation. Poses map points of the
/// reconstructed (target) frame into the source frame:
///  - pair layout {prev, cur}: poses = {cur -> prev}
///  - triplet layout {prev, cur, next}: poses = {cur -> prev, cur -> next}
struct LossInputs {
  std::vector<FrameView> frames;
  std::vector<SE3Pose> poses;
  CameraIntrinsics camera;
};

struct LossDiagnostics {
  double total = 0.0;
  double photometric = 0.0;
  double depth = 0.0;
  double smoothness = 0.0;
  std::size_t photometric_pixels = 0;  // pixels entering the photometric mean
  std::size_t depth_pixels = 0;
};

/// Gradient of the total loss: one 6-vector per pose (left perturbation
/// exp(eps) * T, translation first) and one per-pixel array per frame depth.
struct LossGradient {
  std::vector<Vector6d> pose;
  std::vector<std::vector<double>> depth;
};

/// Error maps of a single reprojection, on the target frame's pixel grid.
struct ReprojectionMaps {
  int target = 0;
  int source = 0;
  GrayImage reconstruction;
  ValidMask image_mask;
  PerPixelErrorMap photometric;
  DepthMap warped_depth;
  ValidMask depth_mask;
  PerPixelErrorMap depth;
};

/// L_p + lambda1 L_D + lambda2 L_s for the configured scheme. When `gradient`
/// is non-null it receives d(total)/d(pose twists) and d(total)/d(depths).
LossDiagnostics total_loss(const LossInputs& inputs, const LossConfig& config,
                           LossGradient* gradient = nullptr);

/// The reprojections the configured scheme evaluates, with their error maps.
std::vector<ReprojectionMaps> reprojection_maps(const LossInputs& inputs,
                                                const LossConfig& config);

/// CSV header + row helpers for per-evaluation diagnostics.
void write_diagnostics_header(std::ostream& out);
void write_diagnostics_row(std::ostream& out, const std::string& label,
                           const LossDiagnostics& diagnostics);

}  // namespace ssego
