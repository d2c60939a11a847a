#include "deta/classifier.hpp"

#include <cmath>

#include "deta/error.hpp"

namespace deta {

PrototypeSet build_classifier(const std::vector<Vec>& features, std::span<const int> labels,
                              std::span<const double> omega, int way) {
  if (features.size() != labels.size() || features.size() != omega.size())
    throw InvalidParameter("build_classifier: size mismatch");
  if (way < 1) throw InvalidParameter("build_classifier: way must be >= 1");
  const std::size_t dim = features.empty() ? 0 : features.front().size();
  PrototypeSet p;
  p.centroids.assign(static_cast<std::size_t>(way), Vec(dim, 0.0));
  p.weight_source.assign(omega.begin(), omega.end());
  std::vector<int> count(static_cast<std::size_t>(way), 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= way) throw InvalidParameter("build_classifier: label out of range");
    const auto c = static_cast<std::size_t>(labels[i]);
    for (std::size_t k = 0; k < dim; ++k) p.centroids[c][k] += omega[i] * features[i][k];
    ++count[c];
  }
  for (std::size_t c = 0; c < p.centroids.size(); ++c) {
    if (count[c] == 0) throw EmptyClass("build_classifier: class " + std::to_string(c) + " is empty");
    for (double& x : p.centroids[c]) x /= count[c];
  }
  return p;
}

Prediction classify(std::span<const double> query, const PrototypeSet& prototypes, CentroidMetric metric) {
  if (prototypes.centroids.empty()) throw InvalidParameter("classify: no centroids");
  if (!(norm(query) > 0.0)) throw DegenerateVector("classify: zero-norm query");
  Prediction out;
  out.scores.reserve(prototypes.centroids.size());
  for (const Vec& c : prototypes.centroids) {
    if (metric == CentroidMetric::cosine) {
      out.scores.push_back(cosine_similarity(query, c));
    } else {
      if (c.size() != query.size()) throw InvalidParameter("classify: dimension mismatch");
      double d2 = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) d2 += (query[k] - c[k]) * (query[k] - c[k]);
      out.scores.push_back(-std::sqrt(d2));
    }
  }
  for (std::size_t c = 1; c < out.scores.size(); ++c)
    if (out.scores[c] > out.scores[static_cast<std::size_t>(out.label)]) out.label = static_cast<int>(c);
  return out;
}

std::vector<int> predict_queries(const TaskEpisode& episode, const AdapterParams& adapter,
                                 std::span<const double> omega, CentroidMetric metric) {
  std::vector<Vec> features;
  std::vector<int> labels;
  features.reserve(episode.support.size());
  for (const auto& s : episode.support) {
    features.push_back(forward_features(adapter, s.image_feature));
    labels.push_back(s.label);
  }
  const PrototypeSet protos = build_classifier(features, labels, omega, episode.way);
  std::vector<int> out;
  out.reserve(episode.queries.size());
  for (const auto& q : episode.queries) out.push_back(classify(forward_features(adapter, q.image_feature), protos, metric).label);
  return out;
}

double accuracy(const TaskEpisode& episode, std::span<const int> predictions) {
  if (episode.queries.empty()) throw InvalidParameter("evaluate: episode has no queries");
  if (predictions.size() != episode.queries.size()) throw InvalidParameter("evaluate: prediction count mismatch");
  std::size_t correct = 0;
  for (std::size_t q = 0; q < predictions.size(); ++q)
    if (predictions[q] == episode.queries[q].ground_truth_label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double evaluate(const TaskEpisode& episode, const AdaptedState& state, CentroidMetric metric) {
  if (episode.queries.empty()) throw InvalidParameter("evaluate: episode has no queries");
  const auto omega = state.support_weights(episode);
  return accuracy(episode, predict_queries(episode, state.params.adapter, omega, metric));
}

double evaluate_baseline(const TaskEpisode& episode, CentroidMetric metric) {
  if (episode.queries.empty()) throw InvalidParameter("evaluate: episode has no queries");
  const std::vector<double> ones(episode.support.size(), 1.0);
  return accuracy(episode, predict_queries(episode, AdapterParams::identity(static_cast<std::size_t>(episode.feature_dim)),
                                           ones, metric));
}

}  // namespace deta
