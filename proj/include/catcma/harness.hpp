#pragma once

#include "catcma/benchmarks.hpp"
#include "catcma/hyperparams.hpp"
#include "catcma/optimizer.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace catcma::harness {

/// How the margin vector is chosen for an experiment.
struct MarginSetting {
  enum class Kind { Large, Small, SmallAlt, Recommended, Explicit };
  Kind kind = Kind::Recommended;
  double value = 0;  // used when kind == Explicit

  static MarginSetting parse(const std::string& text);
  std::string name() const;
  std::vector<double> resolve(const ProblemDims& dims, Eigen::Index lambda) const;
};

struct ExperimentConfig {
  std::string function = "SphereCOM";
  Eigen::Index n_co = 5;
  Eigen::Index n_ca = 5;
  Eigen::Index uniform_k = 5;            // used when categories is empty
  std::vector<Eigen::Index> categories;  // explicit per-dimension K list
  MarginSetting margin;
  Mode mode = Mode::Full;
  int trials = 20;
  long budget = 20000;
  std::optional<double> target;
  std::uint64_t seed_base = 1;
  double init_lower = -3.0;
  double init_upper = 3.0;
  double sigma0 = 1.0;
  std::string out_dir;               // empty: no files written
  std::vector<long> checkpoints;     // empty: lambda * 2^k up to budget

  ProblemDims dims() const;
  void validate() const;
};

/// One per-generation diagnostics row.
struct GenerationRow {
  long eval_count = 0;
  double best_f = 0;
  double sigma = 0;
  double min_eig = 0;    // of sigma^2 C
  double max_eig = 0;
  double q_best_max = 0; // max_n q_{n, best known category}
  double delta = 0;
};

struct TrialRecord {
  int trial = 0;
  std::uint64_t seed = 0;
  std::vector<GenerationRow> rows;
};

struct SummaryRow {
  long checkpoint = 0;
  double median = 0;
  double q25 = 0;
  double q75 = 0;
};

struct ExperimentResult {
  std::vector<TrialRecord> trials;
  std::vector<SummaryRow> summary;
};

/// Linear-interpolation quantile on a copy of the values: h = (n-1) p,
/// v[floor h] + frac(h) (v[floor h + 1] - v[floor h]).
double quantile(std::vector<double> values, double p);

/// Default checkpoint grid: lambda * 2^k while below the budget, then the
/// budget itself.
std::vector<long> default_checkpoints(Eigen::Index lambda, long budget);

/// Best-so-far per trial at each checkpoint, reduced to median and
/// interquartile range across trials.
std::vector<SummaryRow> summarize(const std::vector<TrialRecord>& records,
                                  const std::vector<long>& checkpoints);

/// Runs `config.trials` seeded trials (parallel up to CATCMA_THREADS) and
/// writes per-trial CSVs plus a summary table when out_dir is set.
ExperimentResult run_experiment(const ExperimentConfig& config);

ExperimentConfig load_config(std::istream& is);
ExperimentConfig load_config_file(const std::string& path);
/// Applies one `key = value` override onto a config; throws ConfigError on
/// unknown keys or malformed values.
void apply_config_entry(ExperimentConfig& config, const std::string& key,
                        const std::string& value);

void write_trial_csv(const TrialRecord& record, std::ostream& os);
void write_summary(const ExperimentConfig& config,
                   const std::vector<SummaryRow>& summary, std::ostream& os);

/// CLI entry point (subcommands: run, margins, bench-suite). Returns 0 on
/// success, 1 on configuration errors, 2 on runtime failures.
int cli_main(int argc, const char* const* argv);

}  // namespace catcma::harness
