#pragma once

#include <cstddef>
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "deta/episodes.hpp"
#include "deta/numerics.hpp"

namespace deta {

// Contrastive relevance aggregation. A region is weighted by how similar it
// is to regions of other images with the same label, relative to how similar
// it is to regions of other classes. No trainable state.

struct RegionIndex {
  int sample_id = 0;
  int region_slot = 0;
  int class_id = 0;

  bool operator==(const RegionIndex&) const = default;
};

/// Flattens per-sample regions sample-major: all regions of support[0],
/// then support[1], and so on.
std::vector<RegionIndex> index_regions(std::span<const int> sample_ids, std::span<const int> labels,
                                       const RegionDraw& regions);

struct RegionSets {
  std::vector<std::size_t> in_class;      // same class, other images
  std::vector<std::size_t> out_of_class;  // every region of every other class
};

std::vector<RegionSets> build_region_sets(std::span<const RegionIndex> index);

struct Relevance {
  double phi = 0.0;
  double psi = 0.0;
};

/// Mean cosine similarity of `region` to each set. An empty set scores 0.
Relevance relevance_scores(std::span<const double> region, const std::vector<Vec>& in_set,
                           const std::vector<Vec>& out_set);

struct RegionWeightTable {
  std::vector<RegionIndex> index;
  std::vector<double> phi;
  std::vector<double> psi;
  std::vector<double> phi_tilde;
  std::vector<double> psi_tilde;
  std::vector<double> lambda;

  std::size_t size() const { return index.size(); }
  /// Mean lambda over the regions of each sample, keyed by sample_id.
  std::map<int, double> mean_lambda_per_sample() const;
};

struct CoraOptions {
  /// When false the out-of-class relevance is replaced by a constant, so
  /// psi_tilde is uniform inside each class.
  bool use_out_of_class = true;
};

/// Throws InvalidParameter when fewer than two classes carry regions.
RegionWeightTable region_weights(const RegionDraw& regions, std::span<const int> sample_ids,
                                 std::span<const int> labels, const CoraOptions& opts = {});

/// Table with lambda = 1 for every region; used when CoRA is switched off.
RegionWeightTable uniform_region_weights(const RegionDraw& regions, std::span<const int> sample_ids,
                                         std::span<const int> labels);

/// Momentum-smoothed per-image weights. The first update sets omega to the
/// sample's mean region weight; later updates blend with `momentum`.
class ImageWeightAccumulator {
public:
  ImageWeightAccumulator() = default;
  ImageWeightAccumulator(std::vector<int> sample_ids, double momentum);

  double momentum() const { return momentum_; }
  std::size_t iteration() const { return iteration_; }
  const std::map<int, double>& omega() const { return omega_; }
  double omega(int sample_id) const;
  const std::vector<int>& sample_ids() const { return sample_ids_; }

  /// Restores a serialised state; used by the JSON loaders.
  static ImageWeightAccumulator restore(std::vector<int> sample_ids, double momentum, std::size_t iteration,
                                        std::map<int, double> omega);

  friend ImageWeightAccumulator accumulate_image_weights(const ImageWeightAccumulator& acc,
                                                         const RegionWeightTable& table);

  bool operator==(const ImageWeightAccumulator&) const = default;

private:
  std::vector<int> sample_ids_;
  double momentum_ = 0.7;
  std::size_t iteration_ = 0;
  std::map<int, double> omega_;
};

/// Throws MissingWeight when `table` has no region for a tracked sample.
ImageWeightAccumulator accumulate_image_weights(const ImageWeightAccumulator& acc,
                                                const RegionWeightTable& table);

/// Writes `iteration,sample_id,region_slot,phi,psi,lambda,omega` rows.
void write_weight_csv_header(std::ostream& out);
void write_weight_csv_rows(std::ostream& out, std::size_t iteration, const RegionWeightTable& table,
                           const ImageWeightAccumulator& acc);

}  // namespace deta
