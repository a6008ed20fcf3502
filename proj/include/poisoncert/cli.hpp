#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "poisoncert/attacks.hpp"
#include "poisoncert/certify.hpp"
#include "poisoncert/data.hpp"
#include "poisoncert/defense.hpp"

namespace poisoncert::cli {

inline constexpr std::string_view kVersion = "0.1.0";

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kNumericalError = 2;

struct DataSource {
  std::string train_path;
  std::string test_path;
  DataFormat format = DataFormat::kDenseCsv;
  /// Used instead of files when set; the generated points are split like gen-data does.
  std::optional<GaussianSpec> gaussian;
  double test_fraction = 0.2;
};

struct RunConfig {
  DataSource data;
  DefenseConfig defense;
  std::vector<double> eps{0.1};
  std::vector<std::uint64_t> seeds{0};
  double rho = 1.0;
  std::optional<double> eta;
  std::optional<long> steps;
  int sdp_samples = 50;
  double sdp_tol = 1e-7;
  int sdp_max_iter = 100000;
  int attack_samples = 5;
  int candidate_steps = 10;
  double train_tol = 1e-9;
  int train_max_epochs = 2000;
  int integer_budget = 1000;
  AttackKind attack_kind = AttackKind::kLabelFlip;
  int attack_steps = 20;
  double attack_step_size = 0.1;
  std::string out_dir = ".";
  int jobs = 1;

  void validate() const;
};

/// Reads a JSON config. Syntax errors and schema errors are reported as ParseError
/// with the line of the offending text.
RunConfig parse_run_config(std::string_view text);
/// Fields that affect results (everything except out_dir and jobs), as JSON.
nlohmann::json config_to_json(const RunConfig& config);
/// FNV-1a of the compact JSON echo, as 16 hex digits.
std::string config_hash(const RunConfig& config);

CertifyConfig certify_config(const RunConfig& config, double eps, std::uint64_t seed);

nlohmann::json certificate_to_json(const Certificate& cert);

/// Train/test split of a shuffled copy (seeded); both parts keep the input's order otherwise.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed);

inline constexpr std::string_view kSweepHeader =
    "eps,upper_bound,lower_bound,clean_train_loss,test_hinge,test_zero_one,duality_gap,regret_bound";

/// Shortest round-trip decimal text for a double.
std::string format_double(double value);

/// Writes through a temporary file and rename.
void write_file_atomic(const std::string& path, std::string_view contents);

/// Entry point; returns the process exit code. Errors go to `err` as one JSON line.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace poisoncert::cli
