#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "ssego/geometry.hpp"
#include "ssego/sensors.hpp"
#include "ssego/simulation.hpp"

namespace ssego {

/// Network inputs, in this order: body velocity (3), measured accel z (1),
/// gyro (3), motor rpm (4).
struct ModelInput {
  Eigen::Vector3d body_velocity = Eigen::Vector3d::Zero();
  double accel_z = 0.0;
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();
  Eigen::Vector4d rpm = Eigen::Vector4d::Zero();
};

using InputVector = Eigen::Matrix<double, 11, 1>;
InputVector pack(const ModelInput& in);

/// Drag coefficients in [0, 2] (1/s) and accel-z residual in [-5, 5] (m/s^2).
struct ModelOutput {
  double dx = 1.0;
  double dy = 1.0;
  double eps = 0.0;
};

/**
 * 11 -> 45 -> 45 -> 45 -> 3 perceptron, tanh hidden units, sigmoid outputs
 * rescaled to the drag and residual ranges. Inputs are z-scored with the
 * stored statistics. Each training sequence owns a velocity scale, stored as
 * its logarithm so it stays positive.
 */
struct DroneModelParams {
  std::array<Eigen::MatrixXd, 4> weights;
  std::array<Eigen::VectorXd, 4> biases;
  InputVector input_mean = InputVector::Zero();
  InputVector input_std = InputVector::Ones();
  std::vector<std::string> sequence_ids;
  std::vector<double> log_scales;

  static constexpr int kInputs = 11;
  static constexpr int kHidden = 45;
  static constexpr int kOutputs = 3;

  /// Glorot-uniform weights, zero biases; the last layer is shrunk tenfold so
  /// training starts near d = 1, eps = 0.
  static DroneModelParams initialize(std::uint64_t seed);
  /// All weights and biases zero: d = 1 and eps = 0 for every input.
  static DroneModelParams zeros();

  double scale(std::size_t sequence) const;
  std::size_t scale_index(const std::string& sequence_id) const;  // throws ContractViolation
  /// Trainable vector: each layer's weights (row-major) then its bias, then
  /// the log scales.
  std::size_t parameter_count() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& theta);
  void validate() const;
};

ModelOutput model_forward(const DroneModelParams& params, const ModelInput& input);

/**
 * Aligned training data, one entry per IMU tick: the IMU sample, motor rpm,
 * gravity in the body frame (from an attitude estimate), and the unscaled
 * teacher body velocity. Built by make_train_sequence.
 */
struct TrainSequence {
  std::string id;
  std::vector<ImuSample> imu;
  std::vector<Eigen::Vector4d> rpm;
  std::vector<Eigen::Vector3d> gravity;
  std::vector<Eigen::Vector3d> teacher;  // body frame, scale 1, smoothed
  std::vector<std::size_t> gap_frames;   // camera frames that followed a dropout

  std::size_t size() const { return imu.size(); }
  double duration() const { return imu.back().t - imu.front().t; }
  void validate() const;
};

/// Motor rpm at the given times, linear between samples, held past the ends.
std::vector<Eigen::Vector4d> resample_rpm(const std::vector<double>& times,
                                          const std::vector<MotorSample>& motors);

/// Camera velocities from consecutive relative poses (prev_from_cur, one per
/// frame after the first), expressed at the interval midpoint in the
/// mid-interval camera frame. The divisor is the actual time step, so
/// dropped frames do not bias the result; intervals longer than 1.5x the
/// median are listed in `gaps`.
struct CameraVelocities {
  std::vector<double> t;
  std::vector<Eigen::Vector3d> velocity;
  std::vector<std::size_t> gaps;
};
CameraVelocities camera_velocities(const std::vector<double>& frame_times,
                                   const std::vector<SE3Pose>& prev_from_cur);

/// s * filtfilt(R_bc * v_c), third-order Butterworth low-pass. The scale is
/// applied after the (linear) filter, so outputs are exactly homogeneous in s.
std::vector<Eigen::Vector3d> teacher_velocity(const CameraVelocities& camera,
                                              const Eigen::Matrix3d& body_from_camera, double s,
                                              double cutoff_hz = 10.0);

/// Resamples the camera-rate streams onto the IMU clock. `world_from_body`
/// holds one attitude per IMU sample. Motor rpm is interpolated linearly; the
/// teacher linearly between midpoints and held flat past the ends.
TrainSequence make_train_sequence(const std::string& id, const std::vector<ImuSample>& imu,
                                  const std::vector<MotorSample>& motors,
                                  const std::vector<Eigen::Quaterniond>& world_from_body,
                                  const std::vector<double>& frame_times,
                                  const std::vector<SE3Pose>& prev_from_cur,
                                  const Eigen::Matrix3d& body_from_camera,
                                  double cutoff_hz = 10.0);

/// Same, from simulator output with its true attitude and a camera track.
TrainSequence make_train_sequence(const std::string& id, const SimulatedStreams& streams,
                                  const CameraTrack& track, double cutoff_hz = 10.0);

struct VelocityRollout {
  std::vector<double> t;
  std::vector<Eigen::Vector3d> body_velocity;  // steps + 1 entries, starting at Vb0
  std::vector<Eigen::Vector3d> specific_force; // model-predicted, one per step
};

/**
 * Open-loop integration from IMU tick `start`:
 *   Vb_{i+1} = exp(w_i dt)^T (Vb_i + [-dx Vb_x + g_x, -dy Vb_y + g_y, a_z - eps + g_z] dt)
 * with the network re-evaluated at every step. Throws NumericalFailure with
 * the step index if the state stops being finite.
 */
VelocityRollout rollout(const DroneModelParams& params, const TrainSequence& seq,
                        std::size_t start, std::size_t steps, const Eigen::Vector3d& vb0);

/// Mean over steps 1..steps of |Vb_j - s T_j|^2 with Vb_0 = s T_0, where s is
/// the scale of sequence `scale_index`. With `grad` set, the exact gradient
/// with respect to flatten() is accumulated into it (backprop through time).
double window_loss(const DroneModelParams& params, const TrainSequence& seq,
                   std::size_t scale_index, std::size_t start, std::size_t steps,
                   Eigen::VectorXd* grad = nullptr);

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  double learning_rate = 1e-3;
  double scale_learning_rate = 1e-2;
  double final_rate_fraction = 0.1;  // both rates decay geometrically to this by the last step
  double min_window = 0.25;  // s
  double max_window = 5.0;   // s
  std::uint64_t seed = 0;
  void validate() const;
};

struct TrainResult {
  DroneModelParams params;
  std::vector<double> loss_trace;  // mean batch loss per step
};

/// Input statistics over all sequences (teacher velocity at scale 1).
void fit_normalization(DroneModelParams& params, const std::vector<TrainSequence>& sequences);

/// Fresh network with fitted normalization and scale 1 for every sequence.
DroneModelParams prepare_model(const std::vector<TrainSequence>& sequences, std::uint64_t seed);

/**
 * Adam over random windows of 0.25-5 s, starting from `init`, which must
 * already hold a scale for every sequence id (see prepare_model). Throws
 * NumericalFailure when the batch loss stays above 10x the first batch loss
 * for 100 consecutive steps.
 */
TrainResult train(const std::vector<TrainSequence>& sequences, const DroneModelParams& init,
                  const TrainConfig& config);

/// JSON text with a format name and version; doubles round-trip exactly.
std::string serialize_model(const DroneModelParams& params);
DroneModelParams deserialize_model(const std::string& text);  // VersionMismatch / DataError
void save_model(const DroneModelParams& params, const std::string& path);
DroneModelParams load_model(const std::string& path);  // MissingFile if absent

}  // namespace ssego
