#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace ssego {

/**
 * Key-value run configuration. Each command declares its keys with defaults;
 * files hold `key = value` lines ('#' starts a comment) and later sources
 * override earlier ones. Unknown keys are a ConfigError. The echo lists every
 * key in declaration order, so a run can be repeated from it.
 */
class RunConfig {
 public:
  using Entry = std::pair<std::string, std::string>;  // key, default ("" = required)

  RunConfig(std::string command, std::vector<Entry> schema);

  void load_file(const std::string& path);
  void parse(const std::string& text, const std::string& source = "<text>");
  void set(const std::string& assignment);  // "key=value"
  void set(const std::string& key, const std::string& value);

  const std::string& command() const { return command_; }
  bool has(const std::string& key) const;  // declared and non-empty
  std::string str(const std::string& key) const;  // ConfigError when required and unset
  double number(const std::string& key) const;
  long integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;   // comma separated
  std::vector<std::string> strings(const std::string& key) const;

  std::string echo() const;

 private:
  std::string command_;
  std::vector<Entry> values_;
  const std::string& raw(const std::string& key) const;
};

/// The verbs: generate, estimate, train-model, rollout, fuse, eval.
const std::vector<std::string>& command_names();

/// Configuration of a verb with its defaults; ConfigError for unknown verbs.
RunConfig command_config(const std::string& command);

/**
 * Runs a verb. Outputs go to the directory named by the `out` key, which
 * also receives config.txt with the full echo. Library errors propagate.
 */
void run_command(const RunConfig& config, std::ostream& log);

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumerical = 4,
};

/// Exit code for the exception in flight (call inside a catch block).
int exit_code_for_current_exception();

/// Builds the config of `command` from files and assignments, runs it, and
/// reports any error on `err`. Returns the exit code.
int run_guarded(const std::string& command, const std::vector<std::string>& config_files,
                const std::vector<std::string>& assignments, std::ostream& log, std::ostream& err);

/// Trajectory CSV: header t,px,py,pz optionally followed by vx,vy,vz; any
/// further columns are ignored, so groundtruth.csv reads directly.
struct TrajectoryTable {
  std::vector<double> t;
  std::vector<Eigen::Vector3d> position;
  std::vector<Eigen::Vector3d> velocity;
};
TrajectoryTable read_trajectory_csv(const std::string& path);
void write_trajectory_csv(const TrajectoryTable& table, const std::string& path);

}  // namespace ssego
