#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "deta/adaptation.hpp"
#include "deta/episodes.hpp"

namespace deta {

enum class NoiseType { none, label, image };
std::string to_string(NoiseType t);
NoiseType noise_type_from_string(const std::string& s);

struct Ablation {
  std::string name;
  DetaComponents components;
  bool operator==(const Ablation&) const = default;
};

/// Named variants accepted on the command line: full, no-cora, no-local,
/// no-global, no-ma, no-ooc and none (every component off).
Ablation ablation_from_name(const std::string& name);

/// Five-character 0/1 mask in the order cora, local, global, accumulator,
/// out-of-class term.
std::string ablation_mask(const DetaComponents& c);

struct BenchmarkConfig {
  int episodes_per_cell = 100;
  int way = 5;
  int shot = 10;
  int dim = 64;
  NoiseType noise_type = NoiseType::label;
  std::vector<double> noise_ratios{0.3};
  std::vector<Ablation> ablations{{"full", DetaComponents{}}};
  SyntheticNoiseConfig synthetic;  // ratios inside are overwritten per cell
  AdaptationConfig adaptation;     // seed is overwritten per episode
  std::uint64_t seed = 7;
  int threads = 1;
};

struct SampleWeight {
  int sample_id = 0;
  double omega = 0.0;
  NoiseTag tag = NoiseTag::clean;
  bool operator==(const SampleWeight&) const = default;
};

struct EpisodeReport {
  std::size_t cell_id = 0;
  std::size_t episode_index = 0;
  std::uint64_t seed = 0;
  double noise_ratio = 0.0;
  std::string ablation;
  bool failed = false;
  std::string error;
  double baseline_accuracy = 0.0;
  double deta_accuracy = 0.0;
  std::vector<SampleWeight> weights;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool operator==(const EpisodeReport&) const = default;
};

struct CellSummary {
  std::size_t cell_id = 0;
  NoiseType noise_type = NoiseType::label;
  double noise_ratio = 0.0;
  std::string ablation;
  std::string ablation_mask;
  std::size_t n_episodes = 0;  // successful episodes
  std::size_t n_failed = 0;
  double baseline_mean = 0.0;
  double baseline_ci95 = 0.0;
  double deta_mean = 0.0;
  double deta_ci95 = 0.0;
  double delta_mean = 0.0;
  /// Mean over episodes of mean omega(clean) - mean omega(noisy); episodes
  /// without both groups are skipped, and 0 is reported if none remain.
  double omega_separation = 0.0;
  bool operator==(const CellSummary&) const = default;
};

struct AggregateReport {
  std::vector<CellSummary> cells;
  std::vector<EpisodeReport> episodes;
  bool operator==(const AggregateReport&) const = default;

  std::vector<const EpisodeReport*> episodes_of(std::size_t cell_id) const;
};

/// Runs one seeded episode: baseline and the configured variant on the
/// same support and query sets.
EpisodeReport run_episode(const BenchmarkConfig& cfg, double noise_ratio, const Ablation& ablation,
                          std::size_t episode_index);

/// Seed of episode `index`; independent of the cell so that cells are paired.
std::uint64_t episode_seed(std::uint64_t master, std::size_t index);

AggregateReport run_benchmark(const BenchmarkConfig& cfg);

/// Mean and 95% normal-approximation half-width of `xs`.
struct MeanCI {
  double mean = 0.0;
  double half_width = 0.0;
};
MeanCI mean_ci95(const std::vector<double>& xs);

/// One-sided paired t-test of mean(a - b) > 0. Returns the p-value.
double paired_t_test_greater(const std::vector<double>& a, const std::vector<double>& b);

enum class ReportFormat { csv, json };
ReportFormat report_format_from_string(const std::string& s);

void write_report_csv(const AggregateReport& report, std::ostream& out);
std::string report_to_json(const AggregateReport& report);
AggregateReport report_from_json(const std::string& text);
void emit_report(const AggregateReport& report, ReportFormat format, const std::filesystem::path& path);

}  // namespace deta
