#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ssego/geometry.hpp"
#include "ssego/scene.hpp"
#include "ssego/sensors.hpp"

namespace ssego {

/**
 * On-disk layout of one sequence directory:
 *
 *   manifest.json      format/version, ids, camera, extrinsics, rates, file inventory
 *   camera.csv         t,image,depth      (depth column empty when absent)
 *   images/NNNNNN.pgm  binary 16-bit PGM (P5, maxval 65535, big-endian)
 *   depth/NNNNNN.depth "SSDEPTH1", uint32 width, uint32 height, float64 row-major (little-endian)
 *   imu.csv            t,gx,gy,gz,ax,ay,az
 *   motors.csv         t,rpm1,rpm2,rpm3,rpm4
 *   groundtruth.csv    t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,bvx,bvy,bvz   (optional)
 *   gates.csv          px,py,pz,qw,qx,qy,qz,inner_x,inner_y,outer_x,outer_y  (optional, synthetic scenes)
 *
 * Times are float64 seconds from the sequence start. Numbers are written in
 * the shortest form that parses back to the same double, independent of the
 * C locale. Every file but the manifest is listed with its SHA-256.
 */
struct FileEntry {
  std::string path;    // relative to the sequence directory
  std::string sha256;  // lowercase hex
};

struct DatasetManifest {
  std::string sequence_id;
  CameraIntrinsics camera;
  Eigen::Matrix3d body_from_camera = Eigen::Matrix3d::Identity();
  Eigen::Vector3d camera_offset = Eigen::Vector3d::Zero();  // camera origin in the body frame, m
  double camera_rate = 120.0;
  double imu_rate = 500.0;
  std::vector<FileEntry> files;

  void validate() const;
};

/// Gate as stored on disk. Kept apart from Gate so the quaternion is not
/// renormalized on load and files round-trip bit for bit.
struct GateRecord {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond world_from_gate = Eigen::Quaterniond::Identity();
  Eigen::Vector2d inner_half{0.7, 0.7};
  Eigen::Vector2d outer_half{1.0, 1.0};

  static GateRecord from_gate(const Gate& gate);
  Gate gate() const;
  bool operator==(const GateRecord& o) const {
    return position == o.position && world_from_gate.coeffs() == o.world_from_gate.coeffs() &&
           inner_half == o.inner_half && outer_half == o.outer_half;
  }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<double> frame_times;
  std::vector<GrayImage> images;
  std::vector<DepthMap> depths;  // empty, or one per frame
  std::vector<ImuSample> imu;
  std::vector<MotorSample> motors;
  std::vector<BodyState> groundtruth;  // optional
  std::vector<GateRecord> gates;       // optional

  void validate() const;
};

/// Rounds intensities to the 16-bit grid the PGM files store, so an
/// in-memory dataset equals what loading its files gives back.
void quantize(GrayImage& image);

/// Writes every file and a manifest with fresh checksums. The directory is
/// created if needed; existing files of the same names are replaced.
void write_dataset(const Dataset& dataset, const std::string& directory);

/**
 * Reads and validates a sequence directory. Distinct errors: MissingFile
 * (naming the path) for the manifest or any listed file, ChecksumMismatch,
 * NonMonotoneTimestamps (stream name and first bad row), VersionMismatch,
 * and DataError for anything malformed.
 */
Dataset load_dataset(const std::string& directory);

std::string sha256_hex(const std::string& bytes);

/// Shortest text that parses back to the same double; '.' decimal always.
std::string format_number(double value);
/// Strict inverse of format_number; DataError naming `where` otherwise.
double parse_number(const std::string& text, const std::string& where);

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Frame k >= 1 with the samples of the half-open interval [t_{k-1}, t_k).
struct SyncedRecord {
  std::size_t frame = 0;
  double t = 0.0;
  double dt = 0.0;
  bool gap = false;  // dt > 1.5x the median frame interval
  IndexRange imu;
  IndexRange motors;
};

/// Records plus the samples before the first frame and at/after the last,
/// so every sample is accounted for exactly once.
struct Synchronization {
  std::vector<SyncedRecord> records;
  IndexRange imu_head, imu_tail, motor_head, motor_tail;
};

Synchronization synchronize(const std::vector<double>& frame_times,
                            const std::vector<ImuSample>& imu,
                            const std::vector<MotorSample>& motors);

}  // namespace ssego
