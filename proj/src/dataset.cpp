#include "ssego/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <openssl/evp.h>

#include <json.hpp>

#include "ssego/errors.hpp"

namespace ssego {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "depth files assume a little-endian host");

namespace {

constexpr const char* kFormat = "ssego-dataset";
constexpr int kVersion = 1;
constexpr const char* kDepthMagic = "SSDEPTH1";

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw DataError(where + ": not a number: '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw MissingFile(p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + p.string());
}

// Rows of a CSV with a mandatory header; every row must have `columns` fields.
std::vector<std::vector<std::string>> read_csv(const std::string& text, const std::string& name,
                                               const std::string& header) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || split(line) != split(header)) {
    throw DataError(name + ": expected header '" + header + "'");
  }
  const std::size_t columns = split(header).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split(line);
    if (fields.size() != columns) {
      throw DataError(name + ": row " + std::to_string(rows.size()) + " has " +
                      std::to_string(fields.size()) + " fields, expected " + std::to_string(columns));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::string join(std::initializer_list<double> values) {
  std::string s;
  for (double v : values) {
    if (!s.empty()) s += ',';
    s += fmt(v);
  }
  return s + "\n";
}

std::string encode_pgm(const GrayImage& img) {
  std::string s = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n65535\n";
  s.reserve(s.size() + 2 * img.size());
  for (double v : img.values()) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    s.push_back(static_cast<char>(q >> 8));
    s.push_back(static_cast<char>(q & 0xff));
  }
  return s;
}

GrayImage decode_pgm(const std::string& bytes, const std::string& path) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw DataError(path + ": not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw DataError(path + ": malformed PGM header");
  }
  ++pos;  // single whitespace after maxval
  if (w <= 0 || h <= 0 || maxval != 65535) throw DataError(path + ": expected a 16-bit PGM");
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos != 2 * n) throw DataError(path + ": truncated pixel data");
  GrayImage img(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    const auto hi = static_cast<unsigned char>(bytes[pos + 2 * i]);
    const auto lo = static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
    img[i] = static_cast<double>((hi << 8) | lo) / 65535.0;
  }
  return img;
}

std::string encode_depth(const DepthMap& d) {
  std::string s(kDepthMagic);
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(d.width()), static_cast<std::uint32_t>(d.height())};
  s.append(reinterpret_cast<const char*>(dims), sizeof dims);
  s.append(reinterpret_cast<const char*>(d.values().data()), d.size() * sizeof(double));
  return s;
}

DepthMap decode_depth(const std::string& bytes, const std::string& path) {
  const std::size_t head = 8 + 2 * sizeof(std::uint32_t);
  if (bytes.size() < head || bytes.compare(0, 8, kDepthMagic) != 0) {
    throw DataError(path + ": not a depth file");
  }
  std::uint32_t dims[2];
  std::memcpy(dims, bytes.data() + 8, sizeof dims);
  DepthMap d(static_cast<int>(dims[0]), static_cast<int>(dims[1]));
  if (bytes.size() != head + d.size() * sizeof(double)) throw DataError(path + ": truncated depth data");
  std::memcpy(d.values().data(), bytes.data() + head, d.size() * sizeof(double));
  return d;
}

std::string frame_name(std::size_t k, const char* ext) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << k << ext;
  return os.str();
}

void check_rotation(const Eigen::Matrix3d& R) {
  if (!R.allFinite() || (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(R.determinant() - 1.0) > 1e-9) {
    throw DataError("manifest: camera-to-body rotation is not orthonormal");
  }
}

}  // namespace

std::string format_number(double value) { return fmt(value); }

double parse_number(const std::string& text, const std::string& where) {
  return parse_double(text, where);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

void quantize(GrayImage& image) {
  for (double& v : image.values()) v = std::lround(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0;
}

GateRecord GateRecord::from_gate(const Gate& g) {
  GateRecord r;
  r.position = g.world_from_gate.translation();
  r.world_from_gate = g.world_from_gate.rotation();
  r.inner_half = g.inner_half;
  r.outer_half = g.outer_half;
  return r;
}

Gate GateRecord::gate() const {
  Gate g;
  g.world_from_gate = SE3Pose(world_from_gate, position);
  g.inner_half = inner_half;
  g.outer_half = outer_half;
  return g;
}

void DatasetManifest::validate() const {
  camera.validate();
  check_rotation(body_from_camera);
  if (!camera_offset.allFinite()) throw DataError("manifest: non-finite camera offset");
  if (!(camera_rate > 0.0) || !(imu_rate > 0.0)) throw DataError("manifest: rates must be positive");
}

void Dataset::validate() const {
  manifest.validate();
  if (images.size() != frame_times.size() || (!depths.empty() && depths.size() != images.size())) {
    throw DataError("dataset: one image (and optionally one depth map) per frame");
  }
  check_monotone(frame_times, "camera");
  check_monotone(times_of(imu), "imu");
  check_monotone(times_of(motors), "motors");
  check_monotone(times_of(groundtruth), "groundtruth");
}

void write_dataset(const Dataset& ds, const std::string& directory) {
  ds.manifest.validate();
  if (ds.images.size() != ds.frame_times.size() ||
      (!ds.depths.empty() && ds.depths.size() != ds.images.size())) {
    throw DataError("dataset: one image (and optionally one depth map) per frame");
  }
  const fs::path root(directory);
  std::map<std::string, std::string> files;  // sorted inventory

  std::string camera = "t,image,depth\n";
  for (std::size_t k = 0; k < ds.images.size(); ++k) {
    const std::string img = "images/" + frame_name(k, ".pgm");
    files[img] = encode_pgm(ds.images[k]);
    std::string depth;
    if (!ds.depths.empty()) {
      depth = "depth/" + frame_name(k, ".depth");
      files[depth] = encode_depth(ds.depths[k]);
    }
    camera += fmt(ds.frame_times[k]) + "," + img + "," + depth + "\n";
  }
  files["camera.csv"] = camera;

  std::string imu = "t,gx,gy,gz,ax,ay,az\n";
  for (const ImuSample& s : ds.imu) {
    imu += join({s.t, s.gyro.x(), s.gyro.y(), s.gyro.z(), s.accel.x(), s.accel.y(), s.accel.z()});
  }
  files["imu.csv"] = imu;

  std::string motors = "t,rpm1,rpm2,rpm3,rpm4\n";
  for (const MotorSample& m : ds.motors) motors += join({m.t, m.rpm(0), m.rpm(1), m.rpm(2), m.rpm(3)});
  files["motors.csv"] = motors;

  if (!ds.groundtruth.empty()) {
    std::string gt = "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,bvx,bvy,bvz\n";
    for (const BodyState& b : ds.groundtruth) {
      const Eigen::Quaterniond& q = b.world_from_body;
      gt += join({b.t, b.position.x(), b.position.y(), b.position.z(), b.velocity.x(), b.velocity.y(),
                  b.velocity.z(), q.w(), q.x(), q.y(), q.z(), b.body_velocity.x(), b.body_velocity.y(),
                  b.body_velocity.z()});
    }
    files["groundtruth.csv"] = gt;
  }
  if (!ds.gates.empty()) {
    std::string gates = "px,py,pz,qw,qx,qy,qz,inner_x,inner_y,outer_x,outer_y\n";
    for (const GateRecord& g : ds.gates) {
      const Eigen::Quaterniond& q = g.world_from_gate;
      gates += join({g.position.x(), g.position.y(), g.position.z(), q.w(), q.x(), q.y(), q.z(),
                     g.inner_half.x(), g.inner_half.y(), g.outer_half.x(), g.outer_half.y()});
    }
    files["gates.csv"] = gates;
  }

  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["sequence_id"] = ds.manifest.sequence_id;
  const CameraIntrinsics& c = ds.manifest.camera;
  j["camera"] = {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
  std::vector<double> R;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) R.push_back(ds.manifest.body_from_camera(r, col));
  j["body_from_camera"] = {{"rotation", R},
                           {"translation", {ds.manifest.camera_offset.x(), ds.manifest.camera_offset.y(),
                                            ds.manifest.camera_offset.z()}}};
  j["camera_rate"] = ds.manifest.camera_rate;
  j["imu_rate"] = ds.manifest.imu_rate;
  j["files"] = nlohmann::json::array();
  for (const auto& [path, bytes] : files) {
    write_file(root / path, bytes);
    j["files"].push_back({{"path", path}, {"sha256", sha256_hex(bytes)}});
  }
  write_file(root / "manifest.json", j.dump(1) + "\n");
}

Dataset load_dataset(const std::string& directory) {
  const fs::path root(directory);
  const std::string text = read_file(root / "manifest.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest.json is not valid JSON: " + std::string(e.what()));
  }

  Dataset ds;
  std::map<std::string, std::string> contents;
  try {
    if (j.at("format").get<std::string>() != kFormat) throw DataError("manifest.json: not a dataset manifest");
    const int version = j.at("version").get<int>();
    if (version != kVersion) {
      throw VersionMismatch("dataset version " + std::to_string(version) + ", this build reads " +
                            std::to_string(kVersion));
    }
    DatasetManifest& m = ds.manifest;
    m.sequence_id = j.at("sequence_id").get<std::string>();
    const auto& c = j.at("camera");
    m.camera = {c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(),
                c.at("cy").get<double>(), c.at("width").get<int>(),  c.at("height").get<int>()};
    const auto R = j.at("body_from_camera").at("rotation").get<std::vector<double>>();
    const auto t = j.at("body_from_camera").at("translation").get<std::vector<double>>();
    if (R.size() != 9 || t.size() != 3) throw DataError("manifest.json: extrinsics need 9 + 3 numbers");
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) m.body_from_camera(r, col) = R[static_cast<std::size_t>(3 * r + col)];
    m.camera_offset = {t[0], t[1], t[2]};
    m.camera_rate = j.at("camera_rate").get<double>();
    m.imu_rate = j.at("imu_rate").get<double>();
    for (const auto& f : j.at("files")) {
      m.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest.json: " + std::string(e.what()));
  }
  try {
    ds.manifest.validate();
  } catch (const ContractViolation& e) {
    throw DataError("manifest.json: " + std::string(e.what()));
  }

  for (const FileEntry& f : ds.manifest.files) {
    const fs::path p = root / f.path;
    if (!fs::exists(p)) throw MissingFile(p.string());
    std::string bytes = read_file(p);
    if (sha256_hex(bytes) != f.sha256) throw ChecksumMismatch(p.string());
    contents[f.path] = std::move(bytes);
  }
  auto listed = [&](const std::string& path) -> const std::string& {
    const auto it = contents.find(path);
    if (it == contents.end()) throw MissingFile((root / path).string());
    return it->second;
  };

  for (const auto& row : read_csv(listed("camera.csv"), "camera.csv", "t,image,depth")) {
    ds.frame_times.push_back(parse_double(row[0], "camera.csv"));
    ds.images.push_back(decode_pgm(listed(row[1]), row[1]));
    if (!row[2].empty()) ds.depths.push_back(decode_depth(listed(row[2]), row[2]));
  }
  if (!ds.depths.empty() && ds.depths.size() != ds.images.size()) {
    throw DataError("camera.csv: depth must be given for every frame or none");
  }
  for (const auto& row : read_csv(listed("imu.csv"), "imu.csv", "t,gx,gy,gz,ax,ay,az")) {
    ImuSample s;
    s.t = parse_double(row[0], "imu.csv");
    for (int a = 0; a < 3; ++a) {
      s.gyro(a) = parse_double(row[static_cast<std::size_t>(1 + a)], "imu.csv");
      s.accel(a) = parse_double(row[static_cast<std::size_t>(4 + a)], "imu.csv");
    }
    ds.imu.push_back(s);
  }
  for (const auto& row : read_csv(listed("motors.csv"), "motors.csv", "t,rpm1,rpm2,rpm3,rpm4")) {
    MotorSample s;
    s.t = parse_double(row[0], "motors.csv");
    for (int a = 0; a < 4; ++a) s.rpm(a) = parse_double(row[static_cast<std::size_t>(1 + a)], "motors.csv");
    ds.motors.push_back(s);
  }
  if (contents.count("groundtruth.csv")) {
    for (const auto& row : read_csv(contents.at("groundtruth.csv"), "groundtruth.csv",
                                    "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,bvx,bvy,bvz")) {
      std::vector<double> v;
      for (const std::string& f : row) v.push_back(parse_double(f, "groundtruth.csv"));
      BodyState b;
      b.t = v[0];
      b.position = {v[1], v[2], v[3]};
      b.velocity = {v[4], v[5], v[6]};
      b.world_from_body = Eigen::Quaterniond(v[7], v[8], v[9], v[10]);
      b.body_velocity = {v[11], v[12], v[13]};
      ds.groundtruth.push_back(b);
    }
  }
  if (contents.count("gates.csv")) {
    for (const auto& row : read_csv(contents.at("gates.csv"), "gates.csv",
                                    "px,py,pz,qw,qx,qy,qz,inner_x,inner_y,outer_x,outer_y")) {
      std::vector<double> v;
      for (const std::string& f : row) v.push_back(parse_double(f, "gates.csv"));
      GateRecord g;
      g.position = {v[0], v[1], v[2]};
      g.world_from_gate = Eigen::Quaterniond(v[3], v[4], v[5], v[6]);
      g.inner_half = {v[7], v[8]};
      g.outer_half = {v[9], v[10]};
      ds.gates.push_back(g);
    }
  }
  ds.validate();
  return ds;
}

Synchronization synchronize(const std::vector<double>& frame_times, const std::vector<ImuSample>& imu,
                            const std::vector<MotorSample>& motors) {
  if (frame_times.empty()) throw DataError("synchronize: camera stream is empty");
  check_monotone(frame_times, "camera");
  check_monotone(times_of(imu), "imu");
  check_monotone(times_of(motors), "motors");

  std::vector<double> dts;
  for (std::size_t k = 1; k < frame_times.size(); ++k) dts.push_back(frame_times[k] - frame_times[k - 1]);
  double median = 0.0;
  if (!dts.empty()) {
    std::vector<double> s = dts;
    std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2), s.end());
    median = s[s.size() / 2];
  }
  // first sample index with time >= t
  auto lower = [](const auto& samples, double t) {
    return static_cast<std::size_t>(
        std::lower_bound(samples.begin(), samples.end(), t,
                         [](const auto& s, double v) { return s.t < v; }) - samples.begin());
  };

  Synchronization out;
  out.imu_head = {0, lower(imu, frame_times.front())};
  out.motor_head = {0, lower(motors, frame_times.front())};
  for (std::size_t k = 1; k < frame_times.size(); ++k) {
    SyncedRecord r;
    r.frame = k;
    r.t = frame_times[k];
    r.dt = dts[k - 1];
    r.gap = r.dt > 1.5 * median;
    r.imu = {lower(imu, frame_times[k - 1]), lower(imu, frame_times[k])};
    r.motors = {lower(motors, frame_times[k - 1]), lower(motors, frame_times[k])};
    out.records.push_back(r);
  }
  out.imu_tail = {lower(imu, frame_times.back()), imu.size()};
  out.motor_tail = {lower(motors, frame_times.back()), motors.size()};
  return out;
}

}  // namespace ssego
