#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deta/numerics.hpp"

namespace deta {

enum class NoiseTag { clean, image_noisy, label_noisy };

std::string to_string(NoiseTag tag);
NoiseTag noise_tag_from_string(const std::string& s);

struct SupportSample {
  int sample_id = 0;
  int label = 0;
  Vec image_feature;
  std::vector<Vec> region_features;
  // Evaluation-only provenance; never consulted by adaptation.
  int ground_truth_label = 0;
  NoiseTag noise_tag = NoiseTag::clean;

  bool operator==(const SupportSample&) const = default;
};

struct QuerySample {
  int sample_id = 0;
  Vec image_feature;
  int ground_truth_label = 0;

  bool operator==(const QuerySample&) const = default;
};

/// Generative description kept alongside synthetic episodes so that fresh
/// regions can be drawn on every adaptation iteration. Vectors are aligned
/// with TaskEpisode::support.
struct SyntheticSource {
  std::vector<Vec> instance_centres;
  std::vector<double> distractor_fraction;
  std::vector<Vec> distractor_centres;
  double region_sigma = 0.0;  // per-coordinate standard deviation

  bool operator==(const SyntheticSource&) const = default;
};

struct TaskEpisode {
  int way = 0;
  int feature_dim = 0;
  std::uint64_t seed = 0;
  std::vector<SupportSample> support;
  std::vector<QuerySample> queries;
  std::optional<SyntheticSource> generator;

  /// Support count per class, indexed by (possibly corrupted) label.
  std::vector<int> shots_per_class() const;
  std::size_t num_support() const { return support.size(); }

  bool operator==(const TaskEpisode&) const = default;
};

/// Compares the serialisable content only (ignores seed and generator).
bool same_data(const TaskEpisode& a, const TaskEpisode& b);

/// Throws InvalidParameter if the episode violates a structural invariant.
void validate_episode(const TaskEpisode& ep, bool require_every_class = true);

struct SyntheticNoiseConfig {
  double label_noise_ratio = 0.0;
  double image_noise_ratio = 0.0;
  /// Fraction of an image-noisy sample's regions drawn from the distractors.
  double distractor_mix = 0.5;
  /// Euclidean distance between the unit class-mean directions, in (0, sqrt 2].
  double class_separation = 1.4142135623730951;
  /// Perturbation scales, expressed as expected vector norms so they do not
  /// depend on the feature dimension.
  double instance_spread = 0.6;
  double view_spread = 0.3;
  double region_spread = 0.3;
  /// Class-irrelevant directions with large per-instance variance, shared by
  /// an instance's image and regions. Requires way + 1 + nuisance_rank <= d.
  int nuisance_rank = 2;
  double nuisance_spread = 1.5;
  int num_distractors = 3;
  int queries_per_class = 15;
};

/// Builds a seeded synthetic episode. Class means share a common component
/// so that `class_separation` is the exact pairwise distance between them.
TaskEpisode generate_synthetic_episode(int way, int shot, int k, int d,
                                       const SyntheticNoiseConfig& cfg, std::uint64_t seed);

/// Moves exactly round(ratio * N_s) support samples to a label drawn
/// uniformly from the other C-1 classes. The corrupted set for a smaller
/// ratio is a prefix of the set for a larger ratio under the same seed.
TaskEpisode corrupt_labels(const TaskEpisode& episode, double ratio, std::uint64_t seed);

/// Regions used by one adaptation iteration, aligned with episode.support.
using RegionDraw = std::vector<std::vector<Vec>>;

RegionDraw resample_regions(const TaskEpisode& episode, int k, double jitter, std::uint64_t seed,
                            std::uint64_t iteration);

TaskEpisode load_episode_file(const std::filesystem::path& path);
TaskEpisode parse_episode_json(const std::string& text);
std::string episode_to_json(const TaskEpisode& ep);
void save_episode_file(const TaskEpisode& ep, const std::filesystem::path& path);

/// Counter-based seed derivation (splitmix64 finaliser over master ^ f(stream, index)).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace deta
