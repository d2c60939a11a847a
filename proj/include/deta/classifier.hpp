#pragma once

#include <span>
#include <vector>

#include "deta/adaptation.hpp"
#include "deta/episodes.hpp"
#include "deta/numerics.hpp"

namespace deta {

enum class CentroidMetric { cosine, euclidean };

/// Weighted class centroids in adapted-feature space.
struct PrototypeSet {
  std::vector<Vec> centroids;        // indexed by class id
  std::vector<double> weight_source;  // the image weights used, support order
};

/// centroid_c = (1 / N_c) * sum_{y_i = c} omega_i f(x_i).
PrototypeSet build_classifier(const std::vector<Vec>& features, std::span<const int> labels,
                              std::span<const double> omega, int way);

struct Prediction {
  int label = 0;
  Vec scores;  // cosine similarity, or negative Euclidean distance
};

/// Highest-scoring class; ties go to the lowest class id.
Prediction classify(std::span<const double> query, const PrototypeSet& prototypes,
                    CentroidMetric metric = CentroidMetric::cosine);

/// Predicted labels of every query in `episode` using `adapter` for both
/// support and query features and `omega` (support order) for the centroids.
std::vector<int> predict_queries(const TaskEpisode& episode, const AdapterParams& adapter,
                                 std::span<const double> omega, CentroidMetric metric = CentroidMetric::cosine);

/// Fraction of queries whose prediction matches the ground truth.
double evaluate(const TaskEpisode& episode, const AdaptedState& state,
                CentroidMetric metric = CentroidMetric::cosine);

/// Plain nearest-centroid accuracy on the raw features with unit weights.
double evaluate_baseline(const TaskEpisode& episode, CentroidMetric metric = CentroidMetric::cosine);

double accuracy(const TaskEpisode& episode, std::span<const int> predictions);

}  // namespace deta
