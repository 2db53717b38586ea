#include "ssego/drone_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ssego/errors.hpp"
#include "ssego/signal.hpp"

namespace ssego {

namespace {

constexpr int kLayers = 4;
constexpr const char* kFormat = "ssego-drone-model";
constexpr int kVersion = 1;

int layer_in(int l) { return l == 0 ? DroneModelParams::kInputs : DroneModelParams::kHidden; }
int layer_out(int l) { return l == kLayers - 1 ? DroneModelParams::kOutputs : DroneModelParams::kHidden; }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Activations kept for the backward pass.
struct ForwardCache {
  InputVector x;                     // normalized input
  std::array<Eigen::VectorXd, 3> h;  // tanh layers
  Eigen::Vector3d sig;               // output sigmoids
};

ModelOutput forward(const DroneModelParams& p, const InputVector& raw, ForwardCache* cache) {
  const InputVector x = (raw - p.input_mean).cwiseQuotient(p.input_std);
  Eigen::VectorXd a = x;
  std::array<Eigen::VectorXd, 3> h;
  for (int l = 0; l < 3; ++l) {
    h[l] = (p.weights[l] * a + p.biases[l]).array().tanh().matrix();
    a = h[l];
  }
  const Eigen::VectorXd z = p.weights[3] * a + p.biases[3];
  const Eigen::Vector3d sig(sigmoid(z(0)), sigmoid(z(1)), sigmoid(z(2)));
  if (cache) {
    cache->x = x;
    cache->h = std::move(h);
    cache->sig = sig;
  }
  return {2.0 * sig(0), 2.0 * sig(1), -5.0 + 10.0 * sig(2)};
}

struct MlpGrad {
  std::array<Eigen::MatrixXd, 4> w;
  std::array<Eigen::VectorXd, 4> b;
  explicit MlpGrad(const DroneModelParams& p) {
    for (int l = 0; l < kLayers; ++l) {
      w[l] = Eigen::MatrixXd::Zero(p.weights[l].rows(), p.weights[l].cols());
      b[l] = Eigen::VectorXd::Zero(p.biases[l].size());
    }
  }
};

// Backprop of dL/d(dx, dy, eps) through the network; returns dL/d(raw input).
InputVector backward(const DroneModelParams& p, const ForwardCache& c, const Eigen::Vector3d& dout,
                     MlpGrad& g) {
  Eigen::VectorXd delta(3);
  delta(0) = dout(0) * 2.0 * c.sig(0) * (1.0 - c.sig(0));
  delta(1) = dout(1) * 2.0 * c.sig(1) * (1.0 - c.sig(1));
  delta(2) = dout(2) * 10.0 * c.sig(2) * (1.0 - c.sig(2));
  for (int l = kLayers - 1; l >= 0; --l) {
    const Eigen::VectorXd& in = l == 0 ? Eigen::VectorXd(c.x) : c.h[l - 1];
    g.w[l].noalias() += delta * in.transpose();
    g.b[l] += delta;
    Eigen::VectorXd up = p.weights[l].transpose() * delta;
    if (l > 0) up.array() *= 1.0 - c.h[l - 1].array().square();
    delta = std::move(up);
  }
  return InputVector(delta).cwiseQuotient(p.input_std);
}

InputVector step_input(const TrainSequence& seq, std::size_t i, const Eigen::Vector3d& vb) {
  return pack({vb, seq.imu[i].accel.z(), seq.imu[i].gyro, seq.rpm[i]});
}

void check_window(const TrainSequence& seq, std::size_t start, std::size_t steps) {
  if (steps == 0 || start + steps >= seq.size()) {
    throw ContractViolation("drone model: window [" + std::to_string(start) + ", +" +
                            std::to_string(steps) + "] outside sequence of " +
                            std::to_string(seq.size()) + " samples");
  }
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

InputVector pack(const ModelInput& in) {
  InputVector x;
  x << in.body_velocity, in.accel_z, in.gyro, in.rpm;
  return x;
}

DroneModelParams DroneModelParams::initialize(std::uint64_t seed) {
  DroneModelParams p;
  std::mt19937_64 rng(seed);
  for (int l = 0; l < kLayers; ++l) {
    const int in = layer_in(l), out = layer_out(l);
    const double limit = std::sqrt(6.0 / (in + out)) * (l == kLayers - 1 ? 0.1 : 1.0);
    std::uniform_real_distribution<double> U(-limit, limit);
    p.weights[l].resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) p.weights[l](r, c) = U(rng);
    p.biases[l] = Eigen::VectorXd::Zero(out);
  }
  return p;
}

DroneModelParams DroneModelParams::zeros() {
  DroneModelParams p;
  for (int l = 0; l < kLayers; ++l) {
    p.weights[l] = Eigen::MatrixXd::Zero(layer_out(l), layer_in(l));
    p.biases[l] = Eigen::VectorXd::Zero(layer_out(l));
  }
  return p;
}

double DroneModelParams::scale(std::size_t sequence) const {
  return std::exp(log_scales.at(sequence));
}

std::size_t DroneModelParams::scale_index(const std::string& sequence_id) const {
  const auto it = std::find(sequence_ids.begin(), sequence_ids.end(), sequence_id);
  if (it == sequence_ids.end()) {
    throw ContractViolation("drone model: no scale for sequence '" + sequence_id + "'");
  }
  return static_cast<std::size_t>(it - sequence_ids.begin());
}

std::size_t DroneModelParams::parameter_count() const {
  std::size_t n = 0;
  for (int l = 0; l < kLayers; ++l) n += static_cast<std::size_t>(layer_in(l) + 1) * layer_out(l);
  return n + log_scales.size();
}

Eigen::VectorXd DroneModelParams::flatten() const {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (int l = 0; l < kLayers; ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) theta(k++) = weights[l](r, c);
    for (Eigen::Index r = 0; r < biases[l].size(); ++r) theta(k++) = biases[l](r);
  }
  for (double s : log_scales) theta(k++) = s;
  return theta;
}

void DroneModelParams::unflatten(const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count()) {
    throw ContractViolation("drone model: parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (int l = 0; l < kLayers; ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = theta(k++);
    for (Eigen::Index r = 0; r < biases[l].size(); ++r) biases[l](r) = theta(k++);
  }
  for (double& s : log_scales) s = theta(k++);
}

void DroneModelParams::validate() const {
  for (int l = 0; l < kLayers; ++l) {
    if (weights[l].rows() != layer_out(l) || weights[l].cols() != layer_in(l) ||
        biases[l].size() != layer_out(l)) {
      throw ContractViolation("drone model: layer " + std::to_string(l) + " has the wrong shape");
    }
    if (!weights[l].allFinite() || !biases[l].allFinite()) {
      throw ContractViolation("drone model: non-finite weights in layer " + std::to_string(l));
    }
  }
  if (!input_mean.allFinite() || !input_std.allFinite() || !(input_std.minCoeff() > 0.0)) {
    throw ContractViolation("drone model: normalization needs finite mean and positive std");
  }
  if (sequence_ids.size() != log_scales.size()) {
    throw ContractViolation("drone model: one scale per sequence id");
  }
  for (double s : log_scales)
    if (!std::isfinite(s)) throw ContractViolation("drone model: non-finite scale");
}

ModelOutput model_forward(const DroneModelParams& params, const ModelInput& input) {
  return forward(params, pack(input), nullptr);
}

void TrainSequence::validate() const {
  const std::size_t n = imu.size();
  if (n < 2 || rpm.size() != n || gravity.size() != n || teacher.size() != n) {
    throw ContractViolation("train sequence '" + id + "': streams must be aligned to the IMU clock");
  }
  check_monotone(times_of(imu), "imu");
  for (std::size_t i = 0; i < n; ++i) {
    if (!teacher[i].allFinite() || !rpm[i].allFinite() || !gravity[i].allFinite()) {
      throw ContractViolation("train sequence '" + id + "': non-finite value at sample " +
                              std::to_string(i));
    }
  }
}

std::vector<Eigen::Vector4d> resample_rpm(const std::vector<double>& times,
                                          const std::vector<MotorSample>& motors) {
  if (motors.empty()) throw ContractViolation("resample_rpm: no motor samples");
  check_monotone(times_of(motors), "motors");
  std::vector<Eigen::Vector4d> out;
  out.reserve(times.size());
  std::size_t m = 0;
  for (double t : times) {
    while (m + 1 < motors.size() && motors[m + 1].t <= t) ++m;
    if (t <= motors.front().t) {
      out.push_back(motors.front().rpm);
    } else if (m + 1 == motors.size()) {
      out.push_back(motors.back().rpm);
    } else {
      const double u = (t - motors[m].t) / (motors[m + 1].t - motors[m].t);
      out.push_back((1.0 - u) * motors[m].rpm + u * motors[m + 1].rpm);
    }
  }
  return out;
}

CameraVelocities camera_velocities(const std::vector<double>& frame_times,
                                   const std::vector<SE3Pose>& prev_from_cur) {
  if (frame_times.size() < 2 || prev_from_cur.size() + 1 != frame_times.size()) {
    throw ContractViolation("camera_velocities: need one relative pose per frame after the first");
  }
  check_monotone(frame_times, "camera");
  std::vector<double> dts;
  for (std::size_t k = 1; k < frame_times.size(); ++k) dts.push_back(frame_times[k] - frame_times[k - 1]);
  const double nominal = median_of(dts);
  CameraVelocities out;
  for (std::size_t k = 1; k < frame_times.size(); ++k) {
    const SE3Pose& T = prev_from_cur[k - 1];
    const double dt = dts[k - 1];
    // displacement in the prev frame, rotated into the frame halfway between
    const Eigen::Matrix3d half = so3_exp(0.5 * so3_log(T.rotation_matrix()));
    out.t.push_back(0.5 * (frame_times[k - 1] + frame_times[k]));
    out.velocity.push_back(half.transpose() * T.translation() / dt);
    if (dt > 1.5 * nominal) out.gaps.push_back(k);
  }
  return out;
}

std::vector<Eigen::Vector3d> teacher_velocity(const CameraVelocities& camera,
                                              const Eigen::Matrix3d& body_from_camera, double s,
                                              double cutoff_hz) {
  if (!(s > 0.0) || !std::isfinite(s)) throw ContractViolation("teacher_velocity: scale must be positive");
  check_monotone(camera.t, "camera");
  if (camera.t.size() != camera.velocity.size()) {
    throw ContractViolation("teacher_velocity: one velocity per timestamp");
  }
  std::vector<double> dts;
  for (std::size_t k = 1; k < camera.t.size(); ++k) dts.push_back(camera.t[k] - camera.t[k - 1]);
  if (dts.empty()) throw ContractViolation("teacher_velocity: need at least two samples");
  const IirFilter f = butter_lowpass(3, cutoff_hz, 1.0 / median_of(dts));
  std::array<std::vector<double>, 3> ch;
  for (const Eigen::Vector3d& v : camera.velocity) {
    const Eigen::Vector3d b = body_from_camera * v;
    for (int a = 0; a < 3; ++a) ch[a].push_back(b(a));
  }
  for (auto& c : ch) c = filtfilt(f, c);
  std::vector<Eigen::Vector3d> out(camera.t.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = s * Eigen::Vector3d(ch[0][k], ch[1][k], ch[2][k]);
  return out;
}

TrainSequence make_train_sequence(const std::string& id, const std::vector<ImuSample>& imu,
                                  const std::vector<MotorSample>& motors,
                                  const std::vector<Eigen::Quaterniond>& world_from_body,
                                  const std::vector<double>& frame_times,
                                  const std::vector<SE3Pose>& prev_from_cur,
                                  const Eigen::Matrix3d& body_from_camera, double cutoff_hz) {
  if (imu.size() < 2 || world_from_body.size() != imu.size() || motors.empty()) {
    throw ContractViolation("make_train_sequence: need IMU, motors and one attitude per IMU sample");
  }
  check_monotone(times_of(imu), "imu");
  check_monotone(times_of(motors), "motors");
  const CameraVelocities cam = camera_velocities(frame_times, prev_from_cur);
  const std::vector<Eigen::Vector3d> teacher = teacher_velocity(cam, body_from_camera, 1.0, cutoff_hz);

  TrainSequence seq;
  seq.id = id;
  seq.imu = imu;
  seq.gap_frames = cam.gaps;
  const Eigen::Vector3d g(0, 0, -kGravity);
  seq.rpm = resample_rpm(times_of(imu), motors);
  std::size_t c = 0;
  for (std::size_t i = 0; i < imu.size(); ++i) {
    const double t = imu[i].t;
    seq.gravity.push_back(world_from_body[i].conjugate() * g);

    while (c + 1 < cam.t.size() && cam.t[c + 1] <= t) ++c;
    if (t <= cam.t.front() || c + 1 == cam.t.size()) {
      seq.teacher.push_back(t <= cam.t.front() ? teacher.front() : teacher.back());
    } else {
      const double u = (t - cam.t[c]) / (cam.t[c + 1] - cam.t[c]);
      seq.teacher.push_back((1.0 - u) * teacher[c] + u * teacher[c + 1]);
    }
  }
  seq.validate();
  return seq;
}

TrainSequence make_train_sequence(const std::string& id, const SimulatedStreams& streams,
                                  const CameraTrack& track, double cutoff_hz) {
  std::vector<Eigen::Quaterniond> attitude;
  for (const BodyState& b : streams.truth) attitude.push_back(b.world_from_body);
  return make_train_sequence(id, streams.imu, streams.motors, attitude, track.t, track.prev_from_cur,
                             body_from_camera_rotation(), cutoff_hz);
}

VelocityRollout rollout(const DroneModelParams& params, const TrainSequence& seq,
                        std::size_t start, std::size_t steps, const Eigen::Vector3d& vb0) {
  check_window(seq, start, steps);
  VelocityRollout r;
  r.t.push_back(seq.imu[start].t);
  r.body_velocity.push_back(vb0);
  Eigen::Vector3d v = vb0;
  for (std::size_t j = 0; j < steps; ++j) {
    const std::size_t i = start + j;
    const double dt = seq.imu[i + 1].t - seq.imu[i].t;
    const ModelOutput o = forward(params, step_input(seq, i, v), nullptr);
    const Eigen::Vector3d f(-o.dx * v.x(), -o.dy * v.y(), seq.imu[i].accel.z() - o.eps);
    v = so3_exp(seq.imu[i].gyro * dt).transpose() * (v + (f + seq.gravity[i]) * dt);
    if (!v.allFinite()) throw NumericalFailure("rollout: velocity is not finite", j);
    r.t.push_back(seq.imu[i + 1].t);
    r.body_velocity.push_back(v);
    r.specific_force.push_back(f);
  }
  return r;
}

double window_loss(const DroneModelParams& params, const TrainSequence& seq,
                   std::size_t scale_index, std::size_t start, std::size_t steps,
                   Eigen::VectorXd* grad) {
  check_window(seq, start, steps);
  const double s = params.scale(scale_index);
  const double inv = 1.0 / static_cast<double>(steps);
  std::vector<Eigen::Vector3d> V(steps + 1);
  std::vector<Eigen::Matrix3d> E(grad ? steps : 0);
  std::vector<ForwardCache> cache(grad ? steps : 0);
  std::vector<ModelOutput> outs(grad ? steps : 0);
  std::vector<double> dts(steps);
  V[0] = s * seq.teacher[start];
  double loss = 0.0;
  for (std::size_t j = 0; j < steps; ++j) {
    const std::size_t i = start + j;
    dts[j] = seq.imu[i + 1].t - seq.imu[i].t;
    const ModelOutput o = forward(params, step_input(seq, i, V[j]), grad ? &cache[j] : nullptr);
    const Eigen::Vector3d f(-o.dx * V[j].x(), -o.dy * V[j].y(), seq.imu[i].accel.z() - o.eps);
    const Eigen::Matrix3d Ej = so3_exp(seq.imu[i].gyro * dts[j]);
    V[j + 1] = Ej.transpose() * (V[j] + (f + seq.gravity[i]) * dts[j]);
    if (!V[j + 1].allFinite()) throw NumericalFailure("window_loss: velocity is not finite", j);
    loss += (V[j + 1] - s * seq.teacher[i + 1]).squaredNorm();
    if (grad) {
      E[j] = Ej;
      outs[j] = o;
    }
  }
  loss *= inv;
  if (!grad) return loss;

  if (static_cast<std::size_t>(grad->size()) != params.parameter_count()) {
    throw ContractViolation("window_loss: gradient vector has the wrong length");
  }
  MlpGrad g(params);
  Eigen::Vector3d lambda = Eigen::Vector3d::Zero();  // dL/dV_{j+1}
  double ds = 0.0;
  for (std::size_t jj = steps; jj-- > 0;) {
    const std::size_t i = start + jj;
    const Eigen::Vector3d r = V[jj + 1] - s * seq.teacher[i + 1];
    lambda += 2.0 * inv * r;
    ds -= 2.0 * inv * r.dot(seq.teacher[i + 1]);
    const Eigen::Vector3d mu = E[jj] * lambda;  // dL/d(pre-rotation velocity)
    const Eigen::Vector3d dF = mu * dts[jj];
    const Eigen::Vector3d& v = V[jj];
    Eigen::Vector3d dv = mu;
    dv.x() -= outs[jj].dx * dF.x();
    dv.y() -= outs[jj].dy * dF.y();
    const Eigen::Vector3d dout(-v.x() * dF.x(), -v.y() * dF.y(), -dF.z());
    const InputVector din = backward(params, cache[jj], dout, g);
    dv += din.head<3>();
    lambda = dv;
  }
  ds += lambda.dot(seq.teacher[start]);

  Eigen::Index k = 0;
  for (int l = 0; l < kLayers; ++l) {
    for (Eigen::Index r = 0; r < g.w[l].rows(); ++r)
      for (Eigen::Index c = 0; c < g.w[l].cols(); ++c) (*grad)(k++) += g.w[l](r, c);
    for (Eigen::Index r = 0; r < g.b[l].size(); ++r) (*grad)(k++) += g.b[l](r);
  }
  (*grad)(k + static_cast<Eigen::Index>(scale_index)) += s * ds;
  return loss;
}

void TrainConfig::validate() const {
  if (steps < 0 || batch < 1 || !(learning_rate > 0.0) || !(scale_learning_rate >= 0.0) ||
      !(final_rate_fraction > 0.0 && final_rate_fraction <= 1.0) ||
      !(min_window > 0.0) || !(max_window >= min_window)) {
    throw ContractViolation("train: need batch >= 1, positive rates and 0 < min_window <= max_window");
  }
}

void fit_normalization(DroneModelParams& params, const std::vector<TrainSequence>& sequences) {
  InputVector sum = InputVector::Zero(), sq = InputVector::Zero();
  double n = 0.0;
  for (const TrainSequence& seq : sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const InputVector x = step_input(seq, i, seq.teacher[i]);
      sum += x;
      sq += x.cwiseProduct(x);
      n += 1.0;
    }
  }
  if (n < 2.0) throw ContractViolation("fit_normalization: no samples");
  params.input_mean = sum / n;
  for (int c = 0; c < DroneModelParams::kInputs; ++c) {
    const double var = std::max(0.0, sq(c) / n - params.input_mean(c) * params.input_mean(c));
    const double sd = std::sqrt(var);
    // constant channels (e.g. zero gyro on a straight line) keep unit scale
    params.input_std(c) = sd > 1e-6 * std::max(1.0, std::abs(params.input_mean(c))) ? sd : 1.0;
  }
}

DroneModelParams prepare_model(const std::vector<TrainSequence>& sequences, std::uint64_t seed) {
  DroneModelParams p = DroneModelParams::initialize(seed);
  fit_normalization(p, sequences);
  for (const TrainSequence& seq : sequences) {
    if (std::find(p.sequence_ids.begin(), p.sequence_ids.end(), seq.id) != p.sequence_ids.end()) {
      throw ContractViolation("prepare_model: duplicate sequence id '" + seq.id + "'");
    }
    p.sequence_ids.push_back(seq.id);
    p.log_scales.push_back(0.0);
  }
  return p;
}

TrainResult train(const std::vector<TrainSequence>& sequences, const DroneModelParams& init,
                  const TrainConfig& config) {
  config.validate();
  init.validate();
  if (sequences.empty()) throw ContractViolation("train: no sequences");
  std::vector<std::size_t> scale_of;
  std::vector<double> weight;
  for (const TrainSequence& seq : sequences) {
    seq.validate();
    if (seq.duration() < 5.0) {
      throw ContractViolation("train: sequence '" + seq.id + "' is shorter than 5 s");
    }
    scale_of.push_back(init.scale_index(seq.id));
    weight.push_back(static_cast<double>(seq.size()));
  }

  TrainResult out;
  out.params = init;
  if (config.steps == 0) return out;

  std::mt19937_64 rng(config.seed);
  std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
  std::uniform_real_distribution<double> length(config.min_window, config.max_window);

  const std::size_t n = init.parameter_count();
  const std::size_t nmlp = n - init.log_scales.size();
  Eigen::VectorXd theta = init.flatten();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd v = m;
  Eigen::VectorXd lr(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    lr(static_cast<Eigen::Index>(k)) = k < nmlp ? config.learning_rate : config.scale_learning_rate;
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  DroneModelParams& p = out.params;
  int above = 0;

  for (int step = 0; step < config.steps; ++step) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    double loss = 0.0;
    // windows are drawn up front so the gradient sum has a fixed order
    for (int b = 0; b < config.batch; ++b) {
      const std::size_t q = pick(rng);
      const TrainSequence& seq = sequences[q];
      const double dt = seq.duration() / static_cast<double>(seq.size() - 1);
      const double len = length(rng);
      const std::size_t steps =
          std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(len / dt)), 1, seq.size() - 1);
      std::uniform_int_distribution<std::size_t> first(0, seq.size() - 1 - steps);
      const std::size_t start = first(rng);
      try {
        loss += window_loss(p, seq, scale_of[q], start, steps, &grad);
      } catch (const NumericalFailure&) {
        throw NumericalFailure("train: rollout diverged", static_cast<std::size_t>(step));
      }
    }
    loss /= config.batch;
    grad /= config.batch;
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw NumericalFailure("train: non-finite loss", static_cast<std::size_t>(step));
    }
    out.loss_trace.push_back(loss);
    above = loss > 10.0 * out.loss_trace.front() ? above + 1 : 0;
    if (above >= 100) {
      throw NumericalFailure("train: loss above 10x its initial value for 100 steps",
                             static_cast<std::size_t>(step));
    }

    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1, step + 1), c2 = 1.0 - std::pow(b2, step + 1);
    const double decay = std::pow(config.final_rate_fraction,
                                  static_cast<double>(step) / std::max(1, config.steps - 1));
    theta.array() -= decay * lr.array() * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    p.unflatten(theta);
  }
  return out;
}

std::string serialize_model(const DroneModelParams& params) {
  params.validate();
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["layers"] = {DroneModelParams::kInputs, DroneModelParams::kHidden, DroneModelParams::kHidden,
                 DroneModelParams::kHidden, DroneModelParams::kOutputs};
  for (int l = 0; l < kLayers; ++l) {
    std::vector<double> w;
    for (Eigen::Index r = 0; r < params.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < params.weights[l].cols(); ++c) w.push_back(params.weights[l](r, c));
    j["weights"].push_back(w);
    j["biases"].push_back(std::vector<double>(params.biases[l].data(),
                                              params.biases[l].data() + params.biases[l].size()));
  }
  j["input_mean"] = std::vector<double>(params.input_mean.data(), params.input_mean.data() + 11);
  j["input_std"] = std::vector<double>(params.input_std.data(), params.input_std.data() + 11);
  j["sequences"] = nlohmann::json::array();
  for (std::size_t k = 0; k < params.sequence_ids.size(); ++k) {
    j["sequences"].push_back({{"id", params.sequence_ids[k]}, {"log_scale", params.log_scales[k]}});
  }
  return j.dump(1) + "\n";
}

DroneModelParams deserialize_model(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat) throw DataError("not a drone model file");
    const int version = j.at("version").get<int>();
    if (version != kVersion) {
      throw VersionMismatch("model file version " + std::to_string(version) + ", expected " +
                            std::to_string(kVersion));
    }
    const std::vector<int> layers = j.at("layers").get<std::vector<int>>();
    if (layers != std::vector<int>{11, 45, 45, 45, 3}) throw DataError("unsupported layer sizes");
    DroneModelParams p = DroneModelParams::zeros();
    for (int l = 0; l < kLayers; ++l) {
      const auto w = j.at("weights").at(l).get<std::vector<double>>();
      const auto b = j.at("biases").at(l).get<std::vector<double>>();
      if (w.size() != static_cast<std::size_t>(p.weights[l].size()) ||
          b.size() != static_cast<std::size_t>(p.biases[l].size())) {
        throw DataError("layer " + std::to_string(l) + " has the wrong number of values");
      }
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < p.weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < p.weights[l].cols(); ++c) p.weights[l](r, c) = w[k++];
      for (std::size_t r = 0; r < b.size(); ++r) p.biases[l](static_cast<Eigen::Index>(r)) = b[r];
    }
    const auto mean = j.at("input_mean").get<std::vector<double>>();
    const auto sd = j.at("input_std").get<std::vector<double>>();
    if (mean.size() != 11 || sd.size() != 11) throw DataError("normalization needs 11 channels");
    for (int c = 0; c < 11; ++c) {
      p.input_mean(c) = mean[static_cast<std::size_t>(c)];
      p.input_std(c) = sd[static_cast<std::size_t>(c)];
    }
    for (const auto& s : j.at("sequences")) {
      p.sequence_ids.push_back(s.at("id").get<std::string>());
      p.log_scales.push_back(s.at("log_scale").get<double>());
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  } catch (const ContractViolation& e) {
    throw DataError(std::string("invalid model file: ") + e.what());
  }
}

void save_model(const DroneModelParams& params, const std::string& path) {
  const std::string text = serialize_model(params);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

DroneModelParams load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile(path);
  std::ostringstream os;
  os << f.rdbuf();
  return deserialize_model(os.str());
}

}  // namespace ssego
