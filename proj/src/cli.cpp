#include "ssego/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ssego/attitude.hpp"
#include "ssego/dataset.hpp"
#include "ssego/drone_model.hpp"
#include "ssego/errors.hpp"
#include "ssego/eval.hpp"
#include "ssego/fusion.hpp"
#include "ssego/optimizer.hpp"
#include "ssego/scene.hpp"
#include "ssego/simulation.hpp"

namespace ssego {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

RunConfig::RunConfig(std::string command, std::vector<Entry> schema)
    : command_(std::move(command)), values_(std::move(schema)) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (Entry& e : values_) {
    if (e.first == key) {
      e.second = value;
      return;
    }
  }
  throw ConfigError(command_ + ": unknown key '" + key + "'");
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::parse(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  for (int n = 1; std::getline(is, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(n) + ": expected key = value");
    }
    try {
      set(line);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::ostringstream os;
  os << f.rdbuf();
  parse(os.str(), path);
}

const std::string& RunConfig::raw(const std::string& key) const {
  for (const Entry& e : values_) {
    if (e.first == key) return e.second;
  }
  throw ConfigError(command_ + ": unknown key '" + key + "'");
}

bool RunConfig::has(const std::string& key) const { return !raw(key).empty(); }

std::string RunConfig::str(const std::string& key) const {
  const std::string& v = raw(key);
  if (v.empty()) throw ConfigError(command_ + ": '" + key + "' must be set");
  return v;
}

double RunConfig::number(const std::string& key) const {
  try {
    return parse_number(str(key), key);
  } catch (const DataError&) {
    throw ConfigError(command_ + ": '" + key + "' is not a number: " + raw(key));
  }
}

long RunConfig::integer(const std::string& key) const {
  const double v = number(key);
  if (v != std::floor(v) || std::abs(v) > 9e15) {
    throw ConfigError(command_ + ": '" + key + "' must be an integer");
  }
  return static_cast<long>(v);
}

bool RunConfig::flag(const std::string& key) const {
  const std::string v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(command_ + ": '" + key + "' must be true or false");
}

std::vector<double> RunConfig::numbers(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& item : split_list(str(key))) {
    try {
      out.push_back(parse_number(item, key));
    } catch (const DataError&) {
      throw ConfigError(command_ + ": '" + key + "' holds a non-number: " + item);
    }
  }
  return out;
}

std::vector<std::string> RunConfig::strings(const std::string& key) const {
  return split_list(str(key));
}

std::string RunConfig::echo() const {
  std::string s = "# ssego " + command_ + "\n";
  for (const Entry& e : values_) s += e.first + " = " + e.second + "\n";
  return s;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"generate", "estimate", "train-model",
                                                 "rollout",  "fuse",     "eval"};
  return names;
}

RunConfig command_config(const std::string& command) {
  if (command == "generate") {
    return RunConfig(command, {{"out", ""},
                               {"seed", "7"},
                               {"sequence_id", ""},
                               {"trajectory", "ellipse"},
                               {"peak_speed", "5"},
                               {"period", "12"},
                               {"duration", "20"},
                               {"ramp_time", "1.5"},
                               {"heading", "0"},
                               {"yaw_offset", "0"},
                               {"crab_period", "0"},
                               {"camera_rate", "120"},
                               {"imu_rate", "500"},
                               {"drag_x", "0.5"},
                               {"drag_y", "0.8"},
                               {"gyro_std", "0"},
                               {"accel_std", "0"},
                               {"rpm_std", "0"},
                               {"width", "448"},
                               {"height", "256"},
                               {"hfov_deg", "90"},
                               {"samples", "1"},
                               {"gates", "4"},
                               {"reference_scale", "1"},
                               {"reference_noise", "0"}});
  }
  if (command == "estimate") {
    return RunConfig(command, {{"out", ""},
                               {"seed", "0"},
                               {"dataset", ""},
                               {"scheme", "2f"},
                               {"alpha", "0.85"},
                               {"lambda1", "0.15"},
                               {"lambda2", "0.001"},
                               {"ssim_window", "3"},
                               {"depth_mode", "given"},
                               {"depth_scale", "1"},
                               {"max_iterations", "150"},
                               {"tolerance", "1e-7"},
                               {"max_frames", "0"}});
  }
  if (command == "train-model") {
    return RunConfig(command, {{"out", ""},
                               {"seed", "0"},
                               {"datasets", ""},
                               {"poses", ""},
                               {"attitude", "auto"},
                               {"gate_low", "0.95"},
                               {"gate_high", "1.05"},
                               {"attitude_gain", "0.02"},
                               {"cutoff_hz", "10"},
                               {"steps", "2000"},
                               {"batch", "4"},
                               {"learning_rate", "0.001"},
                               {"scale_learning_rate", "0.01"},
                               {"final_rate_fraction", "0.1"},
                               {"min_window", "0.25"},
                               {"max_window", "5"}});
  }
  if (command == "rollout") {
    return RunConfig(command, {{"out", ""},
                               {"seed", "0"},
                               {"model", ""},
                               {"dataset", ""},
                               {"poses", ""},
                               {"attitude", "auto"},
                               {"gate_low", "0.95"},
                               {"gate_high", "1.05"},
                               {"attitude_gain", "0.02"},
                               {"cutoff_hz", "10"},
                               {"start", "1"},
                               {"duration", "10"},
                               {"scale", "0"}});
  }
  if (command == "fuse") {
    return RunConfig(command, {{"out", ""},
                               {"seed", "0"},
                               {"dataset", ""},
                               {"poses", ""},
                               {"model", ""},
                               {"attitude", "auto"},
                               {"gate_low", "0.95"},
                               {"gate_high", "1.05"},
                               {"attitude_gain", "0.02"},
                               {"rates", "120,60,40,30,20"},
                               {"weights", "0,0.3"},
                               {"visual_noise", "0.1"},
                               {"accel_noise", "0.05"},
                               {"visual_scale", "0"},
                               {"degrade_noise", "0"},
                               {"gate_radius", "0"},
                               {"divergence_limit", "1e4"}});
  }
  if (command == "eval") {
    return RunConfig(command, {{"out", ""},
                               {"seed", "0"},
                               {"estimate", ""},
                               {"groundtruth", ""},
                               {"align", "se3,sim3"},
                               {"max_gap", "0"},
                               {"bin_width", "1"},
                               {"speed_floor", "0.5"}});
  }
  throw ConfigError("unknown command '" + command + "'");
}

namespace {

std::string fmt(double v) { return format_number(v); }

// Metric tables report metres to the micrometre; identical inputs print 0.000000.
std::string fixed6(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
  std::string s(buf, r.ptr);
  return s == "-0.000000" ? "0.000000" : s;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
  if (!f) throw DataError("write failed: " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw MissingFile(p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

template <typename... T>
std::string row(const T&... values) {
  std::string s;
  auto add = [&](const auto& v) {
    if (!s.empty()) s += ',';
    if constexpr (std::is_arithmetic_v<std::decay_t<decltype(v)>>) {
      s += fmt(static_cast<double>(v));
    } else {
      s += v;
    }
  };
  (add(values), ...);
  return s + "\n";
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

Table read_table(const fs::path& p) {
  std::istringstream is(read_text(p));
  std::string line;
  Table t;
  if (!std::getline(is, line)) throw DataError(p.string() + ": empty file");
  for (const std::string& h : split_list(line)) t.header.push_back(h);
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty()) continue;
    std::vector<double> r;
    std::istringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) r.push_back(parse_number(trim(f), p.string()));
    if (r.size() != t.header.size()) {
      throw DataError(p.string() + ": row " + std::to_string(t.rows.size()) + " has the wrong width");
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

bool header_starts_with(const Table& t, std::initializer_list<const char*> names) {
  if (t.header.size() < names.size()) return false;
  std::size_t i = 0;
  for (const char* n : names) {
    if (t.header[i++] != n) return false;
  }
  return true;
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out(cfg.str("out"));
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw DataError("cannot create output directory " + out.string());
  write_text(out / "config.txt", cfg.echo());
  return out;
}

// Attitude per IMU sample: the recorded truth, or the complementary filter.
std::vector<Eigen::Quaterniond> attitude_track(const Dataset& ds, const RunConfig& cfg) {
  std::vector<Eigen::Quaterniond> q;
  std::string mode = cfg.str("attitude");
  if (mode == "auto") mode = ds.groundtruth.empty() ? "ekf" : "truth";
  if (mode == "truth") {
    if (ds.groundtruth.empty()) throw DataError("attitude = truth needs groundtruth.csv");
    for (const ImuSample& s : ds.imu) q.push_back(interpolate_state(ds.groundtruth, s.t).world_from_body);
  } else if (mode == "ekf") {
    AttitudeConfig ac;
    ac.gate_low = cfg.number("gate_low");
    ac.gate_high = cfg.number("gate_high");
    ac.gain = cfg.number("attitude_gain");
    ac.validate();
    for (const AttitudeState& s : run_attitude(ds.imu, ac)) q.push_back(s.world_from_body());
  } else {
    throw ConfigError("attitude must be auto, truth or ekf, got '" + mode + "'");
  }
  return q;
}

struct PoseTrack {
  std::vector<double> frame_times;
  std::vector<SE3Pose> prev_from_cur;
};

// `where` is a poses CSV or a directory holding poses.csv (estimate output).
PoseTrack read_poses(const fs::path& where) {
  const fs::path p = fs::is_directory(where) ? where / "poses.csv" : where;
  if (!fs::exists(p)) throw MissingFile(p.string());
  const Table t = read_table(p);
  if (!header_starts_with(t, {"t_prev", "t", "tx", "ty", "tz", "qw", "qx", "qy", "qz"})) {
    throw DataError(p.string() + ": not a poses file (run estimate, or use generate's reference_poses.csv)");
  }
  if (t.rows.empty()) throw DataError(p.string() + ": no poses");
  PoseTrack track;
  track.frame_times.push_back(t.rows.front()[0]);
  for (const auto& r : t.rows) {
    track.frame_times.push_back(r[1]);
    track.prev_from_cur.emplace_back(Eigen::Quaterniond(r[5], r[6], r[7], r[8]),
                                     Eigen::Vector3d(r[2], r[3], r[4]));
  }
  check_monotone(track.frame_times, "poses");
  return track;
}

std::string poses_csv(const std::vector<double>& frame_times, const std::vector<SE3Pose>& prev_from_cur) {
  std::string s = "t_prev,t,tx,ty,tz,qw,qx,qy,qz\n";
  for (std::size_t k = 1; k < frame_times.size(); ++k) {
    const SE3Pose& rel = prev_from_cur[k - 1];
    const Eigen::Quaterniond q = rel.rotation();
    s += row(frame_times[k - 1], frame_times[k], rel.translation().x(), rel.translation().y(),
             rel.translation().z(), q.w(), q.x(), q.y(), q.z());
  }
  return s;
}

TrainSequence sequence_from(const Dataset& ds, const PoseTrack& poses, const RunConfig& cfg) {
  return make_train_sequence(ds.manifest.sequence_id, ds.imu, ds.motors, attitude_track(ds, cfg),
                             poses.frame_times, poses.prev_from_cur, ds.manifest.body_from_camera,
                             cfg.number("cutoff_hz"));
}

void cmd_generate(const RunConfig& cfg, std::ostream& log) {
  TrajectorySpec spec;
  spec.kind = parse_trajectory_kind(cfg.str("trajectory"));
  spec.peak_speed = cfg.number("peak_speed");
  spec.period = cfg.number("period");
  spec.duration = cfg.number("duration");
  spec.ramp_time = cfg.number("ramp_time");
  spec.heading = cfg.number("heading");
  spec.yaw_offset = cfg.number("yaw_offset");
  spec.crab_period = cfg.number("crab_period");
  spec.camera_rate = cfg.number("camera_rate");
  spec.imu_rate = cfg.number("imu_rate");
  spec.validate();
  RefDynamicsParams dyn;
  dyn.kx = cfg.number("drag_x");
  dyn.ky = cfg.number("drag_y");
  const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  ImuNoise noise;
  noise.gyro_std = cfg.number("gyro_std");
  noise.accel_std = cfg.number("accel_std");
  noise.rpm_std = cfg.number("rpm_std");
  noise.seed = seed;

  CameraIntrinsics cam;
  cam.width = static_cast<int>(cfg.integer("width"));
  cam.height = static_cast<int>(cfg.integer("height"));
  const double hfov = cfg.number("hfov_deg") * M_PI / 180.0;
  if (!(hfov > 0.0 && hfov < M_PI)) throw ConfigError("hfov_deg must lie in (0, 180)");
  cam.fx = cam.fy = 0.5 * cam.width / std::tan(0.5 * hfov);
  cam.cx = 0.5 * (cam.width - 1);
  cam.cy = 0.5 * (cam.height - 1);
  cam.validate();
  const int samples = static_cast<int>(cfg.integer("samples"));
  const int gate_count = static_cast<int>(cfg.integer("gates"));
  if (samples < 1 || gate_count < 0) throw ConfigError("samples must be >= 1 and gates >= 0");

  const fs::path out = prepare_out(cfg);
  const SimulatedStreams streams = simulate_imu_motors(spec, dyn, noise);
  const CameraTrack track = camera_track(streams, spec.camera_rate);
  const double ref_scale = cfg.number("reference_scale"), ref_noise = cfg.number("reference_noise");
  if (!(ref_scale > 0.0) || !(ref_noise >= 0.0)) {
    throw ConfigError("reference_scale must be positive and reference_noise nonnegative");
  }
  // stand-in for a learned front end: true relative poses, scaled and noisy
  const CameraTrack reference = camera_track(streams, spec.camera_rate, ref_scale, ref_noise, seed + 1);
  const SceneSpec scene = scene_for_trajectory(spec, gate_count, static_cast<std::uint32_t>(seed));

  Dataset ds;
  ds.manifest.sequence_id = cfg.has("sequence_id") ? cfg.str("sequence_id") : to_string(spec.kind);
  ds.manifest.camera = cam;
  ds.manifest.body_from_camera = body_from_camera_rotation();
  ds.manifest.camera_rate = spec.camera_rate;
  ds.manifest.imu_rate = spec.imu_rate;
  ds.frame_times = track.t;
  for (std::size_t k = 0; k < track.t.size(); ++k) {
    SimulatedFrame f = render(scene, track.world_from_camera[k], cam, track.t[k], samples);
    quantize(f.image);
    ds.images.push_back(std::move(f.image));
    ds.depths.push_back(std::move(f.depth));
  }
  ds.imu = streams.imu;
  ds.motors = streams.motors;
  ds.groundtruth = streams.truth;
  for (const Gate& g : scene.gates) ds.gates.push_back(GateRecord::from_gate(g));
  write_dataset(ds, out.string());
  write_text(out / "reference_poses.csv", poses_csv(reference.t, reference.prev_from_cur));

  log << "sequence " << ds.manifest.sequence_id << "\n"
      << "frames " << ds.images.size() << " at camera " << fmt(ds.manifest.camera_rate) << " Hz\n"
      << "imu " << ds.imu.size() << " samples at " << fmt(ds.manifest.imu_rate) << " Hz\n"
      << "image " << cam.width << "x" << cam.height << "\n"
      << "gates " << ds.gates.size() << "\n"
      << "manifest sha256 " << sha256_hex(read_text(out / "manifest.json")) << "\n";
}

void cmd_estimate(const RunConfig& cfg, std::ostream& log) {
  OptimizerConfig oc;
  oc.loss.scheme = parse_loss_scheme(cfg.str("scheme"));
  oc.loss.alpha = cfg.number("alpha");
  oc.loss.lambda1 = cfg.number("lambda1");
  oc.loss.lambda2 = cfg.number("lambda2");
  oc.loss.ssim_window = static_cast<int>(cfg.integer("ssim_window"));
  oc.max_iterations = static_cast<int>(cfg.integer("max_iterations"));
  oc.tolerance = cfg.number("tolerance");
  const std::string mode = cfg.str("depth_mode");
  if (mode == "given") {
    oc.depth_mode = DepthMode::GroundTruthScaled;
  } else if (mode == "optimize") {
    oc.depth_mode = DepthMode::OptimizePerPixel;
  } else {
    throw ConfigError("depth_mode must be given or optimize");
  }
  oc.validate();
  const double depth_scale = cfg.number("depth_scale");
  if (!(depth_scale > 0.0)) throw ConfigError("depth_scale must be positive");
  const long max_frames = cfg.integer("max_frames");

  const Dataset ds = load_dataset(cfg.str("dataset"));
  const fs::path out = prepare_out(cfg);
  if (ds.depths.empty()) throw DataError("estimate needs per-frame depth maps");
  std::size_t n = ds.images.size();
  if (max_frames > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(max_frames));
  std::vector<GrayImage> images(ds.images.begin(), ds.images.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<DepthMap> depths(ds.depths.begin(), ds.depths.begin() + static_cast<std::ptrdiff_t>(n));
  for (DepthMap& d : depths) {
    for (double& z : d.values()) z *= depth_scale;
  }
  const SequenceResult r = run_sequence(images, depths, ds.manifest.camera, oc);

  // positions of the body origin in the first body frame
  const Eigen::Matrix3d Rbc = ds.manifest.body_from_camera;
  std::string traj = "t,px,py,pz\n";
  std::vector<SE3Pose> rel;
  for (std::size_t k = 0; k < n; ++k) {
    const SE3Pose& T = r.first_from_frame[k];
    const Eigen::Vector3d p = Rbc * T.translation() + ds.manifest.camera_offset -
                              Rbc * T.rotation_matrix() * Rbc.transpose() * ds.manifest.camera_offset;
    traj += row(ds.frame_times[k], p.x(), p.y(), p.z());
    if (k > 0) rel.push_back(r.first_from_frame[k - 1].inverse() * T);
  }
  write_text(out / "trajectory.csv", traj);
  write_text(out / "poses.csv",
             poses_csv(std::vector<double>(ds.frame_times.begin(), ds.frame_times.begin() + static_cast<std::ptrdiff_t>(n)), rel));

  std::string diag = "window,t,converged,dropped,iterations,final_loss,tx,ty,tz,rx,ry,rz\n";
  std::size_t dropped = 0;
  for (std::size_t w = 0; w < r.estimates.size(); ++w) {
    const PoseEstimate& e = r.estimates[w];
    const Vector6d& x = e.twists[0];
    dropped += r.dropped[w];
    diag += row(static_cast<double>(w), ds.frame_times[w + 1], e.converged ? 1.0 : 0.0,
                r.dropped[w] ? 1.0 : 0.0, static_cast<double>(e.iterations), e.final_loss, x(0), x(1),
                x(2), x(3), x(4), x(5));
  }
  write_text(out / "diagnostics.csv", diag);
  log << "scheme " << cfg.str("scheme") << ", " << r.estimates.size() << " windows, " << dropped
      << " dropped\n";
}

void cmd_train_model(const RunConfig& cfg, std::ostream& log) {
  TrainConfig tc;
  tc.steps = static_cast<int>(cfg.integer("steps"));
  tc.batch = static_cast<int>(cfg.integer("batch"));
  tc.learning_rate = cfg.number("learning_rate");
  tc.scale_learning_rate = cfg.number("scale_learning_rate");
  tc.final_rate_fraction = cfg.number("final_rate_fraction");
  tc.min_window = cfg.number("min_window");
  tc.max_window = cfg.number("max_window");
  tc.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  tc.validate();
  const auto datasets = cfg.strings("datasets");
  const auto poses = cfg.strings("poses");
  if (datasets.size() != poses.size()) {
    throw ConfigError("datasets and poses must list the same number of directories");
  }

  std::vector<TrainSequence> seqs;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const Dataset ds = load_dataset(datasets[i]);
    seqs.push_back(sequence_from(ds, read_poses(poses[i]), cfg));
  }
  const fs::path out = prepare_out(cfg);
  const DroneModelParams init = prepare_model(seqs, tc.seed);
  const TrainResult r = train(seqs, init, tc);
  save_model(r.params, (out / "model.json").string());

  std::string loss = "step,loss\n";
  for (std::size_t k = 0; k < r.loss_trace.size(); ++k) loss += row(static_cast<double>(k), r.loss_trace[k]);
  write_text(out / "loss.csv", loss);
  std::string scales = "sequence,scale\n";
  for (const TrainSequence& s : seqs) {
    scales += row(s.id, r.params.scale(r.params.scale_index(s.id)));
    log << "sequence " << s.id << " scale " << fmt(r.params.scale(r.params.scale_index(s.id))) << "\n";
  }
  write_text(out / "scales.csv", scales);
  if (!r.loss_trace.empty()) {
    log << "loss " << fmt(r.loss_trace.front()) << " -> " << fmt(r.loss_trace.back()) << "\n";
  }
}

// Scale for a sequence: explicit, else learned for this id, else 1.
double sequence_scale(const DroneModelParams* model, const std::string& id, double requested,
                      std::ostream& log) {
  if (requested > 0.0) return requested;
  if (model) {
    const auto& ids = model->sequence_ids;
    if (std::find(ids.begin(), ids.end(), id) != ids.end()) return model->scale(model->scale_index(id));
  }
  log << "no learned scale for sequence " << id << ", using 1\n";
  return 1.0;
}

void cmd_rollout(const RunConfig& cfg, std::ostream& log) {
  const DroneModelParams model = load_model(cfg.str("model"));
  const Dataset ds = load_dataset(cfg.str("dataset"));
  const TrainSequence seq = sequence_from(ds, read_poses(cfg.str("poses")), cfg);
  const double s = sequence_scale(&model, seq.id, cfg.number("scale"), log);
  const double t_start = cfg.number("start"), duration = cfg.number("duration");
  if (!(duration > 0.0)) throw ConfigError("duration must be positive");

  std::size_t start = 0;
  while (start + 1 < seq.size() && seq.imu[start].t < seq.imu.front().t + t_start) ++start;
  std::size_t steps = 0;
  while (start + steps + 1 < seq.size() && seq.imu[start + steps].t < seq.imu[start].t + duration) ++steps;
  if (steps == 0) throw DataError("rollout window lies outside the recording");

  const bool has_gt = !ds.groundtruth.empty();
  const Eigen::Vector3d vb0 =
      has_gt ? interpolate_state(ds.groundtruth, seq.imu[start].t).body_velocity : Eigen::Vector3d(s * seq.teacher[start]);
  const fs::path out = prepare_out(cfg);
  const VelocityRollout r = rollout(model, seq, start, steps, vb0);

  std::string csv = has_gt ? "t,vx,vy,vz,teacher_x,teacher_y,teacher_z,gt_x,gt_y,gt_z\n"
                           : "t,vx,vy,vz,teacher_x,teacher_y,teacher_z\n";
  double se_gt = 0.0, se_teacher_gt = 0.0;
  for (std::size_t j = 0; j <= steps; ++j) {
    const Eigen::Vector3d& v = r.body_velocity[j];
    const Eigen::Vector3d T = s * seq.teacher[start + j];
    std::string line = row(r.t[j], v.x(), v.y(), v.z(), T.x(), T.y(), T.z());
    if (has_gt) {
      const Eigen::Vector3d g = interpolate_state(ds.groundtruth, r.t[j]).body_velocity;
      line.pop_back();
      line += "," + row(g.x(), g.y(), g.z());
      se_gt += (v - g).squaredNorm();
      se_teacher_gt += (T - g).squaredNorm();
    }
    csv += line;
  }
  write_text(out / "rollout.csv", csv);
  std::string summary = "metric,value\n";
  summary += row(std::string("scale"), s);
  summary += row(std::string("steps"), static_cast<double>(steps));
  if (has_gt) {
    const double n = static_cast<double>(steps + 1);
    summary += row(std::string("rollout_rmse"), std::sqrt(se_gt / n));
    summary += row(std::string("teacher_rmse"), std::sqrt(se_teacher_gt / n));
    log << "rollout velocity rmse " << fmt(std::sqrt(se_gt / n)) << " m/s over " << fmt(duration) << " s\n";
  }
  write_text(out / "summary.csv", summary);
}

std::string rate_label(double v) {
  std::string s = fmt(v);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

void cmd_fuse(const RunConfig& cfg, std::ostream& log) {
  const auto rates = cfg.numbers("rates");
  const auto weights = cfg.numbers("weights");
  if (rates.empty() || weights.empty()) throw ConfigError("rates and weights must not be empty");
  const bool need_model = std::any_of(weights.begin(), weights.end(), [](double w) { return w > 0.0; });
  DroneModelParams model;
  if (need_model) model = load_model(cfg.str("model"));
  else if (cfg.has("model")) model = load_model(cfg.str("model"));
  const bool have_model = need_model || cfg.has("model");

  const Dataset ds = load_dataset(cfg.str("dataset"));
  const PoseTrack poses = read_poses(cfg.str("poses"));
  const double scale =
      sequence_scale(have_model ? &model : nullptr, ds.manifest.sequence_id, cfg.number("visual_scale"), log);

  FusionInputs base;
  base.imu = ds.imu;
  base.rpm = resample_rpm(times_of(ds.imu), ds.motors);
  base.attitude = attitude_track(ds, cfg);
  const bool has_gt = !ds.groundtruth.empty();
  if (has_gt) {
    const BodyState s0 = interpolate_state(ds.groundtruth, ds.imu.front().t);
    base.initial_position = s0.position;
    base.initial_velocity = s0.body_velocity;
  }
  TrajectoryEstimate gt;
  if (has_gt) {
    for (const BodyState& b : ds.groundtruth) {
      gt.t.push_back(b.t);
      gt.position.push_back(b.position);
      gt.velocity.push_back(b.velocity);
    }
  }
  std::vector<Gate> gates;
  for (const GateRecord& g : ds.gates) gates.push_back(g.gate());
  VisualDegradation deg;
  deg.noise_std = cfg.number("degrade_noise");
  deg.gate_radius = cfg.number("gate_radius");
  deg.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  if ((deg.noise_std > 0.0 || deg.gate_radius > 0.0) && !has_gt) {
    throw DataError("visual degradation needs groundtruth.csv for the vehicle position");
  }

  const fs::path out = prepare_out(cfg);
  std::string csv = "rate,w,rmse,matched,updates\n";
  for (double rate : rates) {
    FusionConfig fc;
    fc.camera_rate = ds.manifest.camera_rate;
    fc.update_rate = rate;
    fc.visual_noise = cfg.number("visual_noise");
    fc.accel_noise = cfg.number("accel_noise");
    fc.divergence_limit = cfg.number("divergence_limit");
    fc.model_weight = 0.0;
    try {
      fc.validate();
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
    FusionInputs in = base;
    in.visual = visual_velocities(poses.frame_times, poses.prev_from_cur, ds.manifest.body_from_camera,
                                  scale, fc.frame_skip());
    if (deg.noise_std > 0.0 || deg.gate_radius > 0.0) degrade(in.visual, ds.groundtruth, gates, deg);
    if (!has_gt) {
      for (const VisualVelocity& v : in.visual) {
        if (v.valid) {
          in.initial_velocity = v.body_velocity;
          break;
        }
      }
    }
    for (double w : weights) {
      fc.model_weight = w;
      fc.validate();
      const FusionResult r = run_filter(in, have_model ? &model : nullptr, fc);
      const TrajectoryEstimate est = r.trajectory();
      TrajectoryTable table{est.t, est.position, est.velocity};
      write_trajectory_csv(table, (out / ("trajectory_r" + rate_label(rate) + "_w" + rate_label(w) + ".csv")).string());
      std::string rmse = "", matched = "";
      if (has_gt) {
        const RmseResult m = position_rmse(est, gt, AlignMode::SE3);
        rmse = fixed6(m.rmse);
        matched = fmt(static_cast<double>(m.matched));
        log << "rate " << fmt(rate) << " Hz, w " << fmt(w) << ": rmse " << rmse << " m\n";
      }
      csv += row(rate, w, rmse, matched, static_cast<double>(r.updates));
    }
  }
  write_text(out / "fuse.csv", csv);
}

void cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const TrajectoryTable est_t = read_trajectory_csv(cfg.str("estimate"));
  fs::path gt_path(cfg.str("groundtruth"));
  if (fs::is_directory(gt_path)) gt_path /= "groundtruth.csv";
  const TrajectoryTable gt_t = read_trajectory_csv(gt_path.string());
  std::vector<AlignMode> modes;
  for (const std::string& m : cfg.strings("align")) modes.push_back(parse_align_mode(m));
  const double max_gap = cfg.number("max_gap");

  TrajectoryEstimate est{est_t.t, est_t.position, est_t.velocity, "estimate"};
  TrajectoryEstimate gt{gt_t.t, gt_t.position, gt_t.velocity, "world"};
  const fs::path out = prepare_out(cfg);
  std::string csv = "align,rmse,matched,unmatched,scale\n";
  for (AlignMode m : modes) {
    const RmseResult r = position_rmse(est, gt, m, max_gap);
    csv += row(std::string(to_string(m)), fixed6(r.rmse), static_cast<double>(r.matched),
               static_cast<double>(r.unmatched), fixed6(r.alignment.scale));
    log << to_string(m) << " rmse " << fmt(r.rmse) << " m (" << r.matched << " matched)\n";
  }
  write_text(out / "metrics.csv", csv);

  if (!est.velocity.empty() && !gt.velocity.empty()) {
    const Association a = associate(est.t, gt.t, max_gap > 0.0 ? max_gap : 0.0);
    std::vector<Eigen::Vector3d> ve, vg;
    for (const auto& [i, j] : a.pairs) {
      ve.push_back(est.velocity[i]);
      vg.push_back(gt.velocity[j]);
    }
    std::string bins = "lo,hi,mean,stddev,count\n";
    for (const VelocityBin& b :
         relative_velocity_error(ve, vg, cfg.number("bin_width"), cfg.number("speed_floor"))) {
      bins += row(b.lo, b.hi, fixed6(b.mean), fixed6(b.stddev), static_cast<double>(b.count));
    }
    write_text(out / "velocity_error.csv", bins);
  }
}

}  // namespace

TrajectoryTable read_trajectory_csv(const std::string& path) {
  const Table t = read_table(path);
  if (!header_starts_with(t, {"t", "px", "py", "pz"})) {
    throw DataError(path + ": expected a header starting t,px,py,pz");
  }
  const bool vel = header_starts_with(t, {"t", "px", "py", "pz", "vx", "vy", "vz"});
  TrajectoryTable out;
  for (const auto& r : t.rows) {
    out.t.push_back(r[0]);
    out.position.emplace_back(r[1], r[2], r[3]);
    if (vel) out.velocity.emplace_back(r[4], r[5], r[6]);
  }
  check_monotone(out.t, path);
  return out;
}

void write_trajectory_csv(const TrajectoryTable& table, const std::string& path) {
  const bool vel = !table.velocity.empty();
  std::string s = vel ? "t,px,py,pz,vx,vy,vz\n" : "t,px,py,pz\n";
  for (std::size_t i = 0; i < table.t.size(); ++i) {
    const Eigen::Vector3d& p = table.position[i];
    if (vel) {
      const Eigen::Vector3d& v = table.velocity[i];
      s += row(table.t[i], p.x(), p.y(), p.z(), v.x(), v.y(), v.z());
    } else {
      s += row(table.t[i], p.x(), p.y(), p.z());
    }
  }
  write_text(path, s);
}

void run_command(const RunConfig& cfg, std::ostream& log) {
  const std::string& c = cfg.command();
  if (c == "generate") return cmd_generate(cfg, log);
  if (c == "estimate") return cmd_estimate(cfg, log);
  if (c == "train-model") return cmd_train_model(cfg, log);
  if (c == "rollout") return cmd_rollout(cfg, log);
  if (c == "fuse") return cmd_fuse(cfg, log);
  if (c == "eval") return cmd_eval(cfg, log);
  throw ConfigError("unknown command '" + c + "'");
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const InfeasibleTrajectory&) {
    return kExitConfig;
  } catch (const ContractViolation&) {
    return kExitConfig;  // bad parameter values reach the library as contract violations
  } catch (const DataError&) {
    return kExitData;
  } catch (const DegenerateInput&) {
    return kExitData;
  } catch (const NumericalFailure&) {
    return kExitNumerical;
  } catch (...) {
    return kExitFailure;
  }
}

int run_guarded(const std::string& command, const std::vector<std::string>& config_files,
                const std::vector<std::string>& assignments, std::ostream& log, std::ostream& err) {
  try {
    RunConfig cfg = command_config(command);
    for (const std::string& f : config_files) cfg.load_file(f);
    for (const std::string& a : assignments) cfg.set(a);
    run_command(cfg, log);
    return kExitOk;
  } catch (const std::exception& e) {
    const int code = exit_code_for_current_exception();
    const char* kind = code == kExitConfig ? "config error" : code == kExitData ? "data error"
                       : code == kExitNumerical ? "numerical failure" : "error";
    err << "ssego " << command << ": " << kind << ": " << e.what() << "\n";
    return code;
  }
}

}  // namespace ssego
