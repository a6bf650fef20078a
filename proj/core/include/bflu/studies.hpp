#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bflu/hlu.hpp"

namespace bflu {

enum class Experiment { reconstruct, ranks, scaling, cylinder, compress, solve };
std::string to_string(Experiment e);
Experiment experiment_from_string(const std::string& s);

/// Flat experiment configuration. Lengths are in wavelengths (k = 2 pi).
struct RunConfig {
  Experiment experiment = Experiment::scaling;
  std::string geometry = "circle";  // circle, arc or file:PATH
  std::string kernel = "efie2d";    // efie2d or synthetic
  double ppw = 10.0;                // points per wavelength
  std::vector<Index> sizes{4096, 8192, 16384, 32768, 65536};

  double tol = 1e-4;    // direct compression
  double eps = 1e-3;    // per-block reconstruction target
  double delta = 1e-2;  // factorization probe residual
  double chi = 2.0;
  double chi_s = 3.0;
  Index leaf_size = 64;
  Index r_max = 256;
  Index c = 10;
  int level_threshold = 1;
  int max_iter = 20;
  double rank_tol = 1e-4;
  std::uint64_t seed = 1;

  // reconstruction study
  int l_min = 1;
  int l_max = 5;
  std::string schemes = "both";  // iterative, noniterative or both
  int block_level = 3;

  // cylinder demo
  double radius = 5.0;
  Index angles = 360;
  bool monostatic = false;
  double amplitude = 1.0;

  Index n_rhs = 8;               // right-hand sides for solve timing
  double time_budget = 3600.0;   // seconds; later sizes are skipped once exceeded
  bool correction = false;       // one residual-correction step in solves

  std::string output_dir = ".";
  std::string prefix;
};

/// Invalid configuration value; field() names the offending key.
class ConfigError : public InvalidInput {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : InvalidInput(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

void validate(const RunConfig& cfg);

/// key=value lines for every field, in a fixed order.
std::string to_config_text(const RunConfig& cfg);
/// Hash of the result-determining fields (output paths excluded), 16 hex digits.
std::string config_hash(const RunConfig& cfg);

inline constexpr int kReportSchemaVersion = 1;

struct Report {
  std::string study;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> columns;
  std::vector<nlohmann::ordered_json> rows;  // keys are a subset of columns
  std::vector<std::string> timing_columns;   // wall-clock fields, not reproducible
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();

  /// Row fields excluding the timing columns.
  nlohmann::ordered_json deterministic_rows() const;
};

/// Least-squares slope of log2(y) against log2(x); NaN with fewer than two points.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

std::string to_csv(const Report& r);
nlohmann::ordered_json to_json(const Report& r);
/// Writes through a temporary file and a rename.
void write_atomic(const std::filesystem::path& path, const std::string& content);
/// <output_dir>/<prefix><study>.csv and .json.
void write_report(const Report& r, const RunConfig& cfg);

struct SweepRow {
  double angle_deg = 0.0;
  double echo_width_db = 0.0;
  double reference_db = 0.0;
  double diff_db = 0.0;
  bool flagged = false;  // zero field or below the comparison floor
};

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

/// Built problem shared by the studies: geometry, tree, partition, kernel.
struct Problem {
  PointCloud cloud;
  std::vector<double> weights;
  KernelSpec kernel;
  std::shared_ptr<const ClusterTree> tree;
  BlockPartition partition;
  double k = 0.0;
};

Problem build_problem(const RunConfig& cfg, Index n);

AssembleOptions assemble_options(const RunConfig& cfg);
LUOptions lu_options(const RunConfig& cfg);

Report run_reconstruction_study(const RunConfig& cfg);
Report run_rank_study(const RunConfig& cfg);
Report run_scaling_study(const RunConfig& cfg);
Report run_cylinder_demo(const RunConfig& cfg, std::vector<SweepRow>* sweep);
/// Assembly only: accuracy against dense products on probes and storage.
Report run_compress(const RunConfig& cfg);
/// Manufactured-solution solve per size.
Report run_solve(const RunConfig& cfg);

Report run_experiment(const RunConfig& cfg, std::vector<SweepRow>* sweep);

}  // namespace bflu
