#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "deta/cora.hpp"
#include "deta/episodes.hpp"
#include "deta/losses.hpp"
#include "deta/numerics.hpp"

namespace deta {

/// Residual map x -> x + W x + b over the frozen input features.
struct AdapterParams {
  Matrix weight;
  Vec bias;

  static AdapterParams identity(std::size_t dim);
  bool operator==(const AdapterParams&) const = default;
};

/// Two-layer MLP with a rectifier, followed by L2 normalisation.
struct ProjectionHead {
  Matrix w1;  // hidden x input
  Vec b1;
  Matrix w2;  // embed x hidden
  Vec b2;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static ProjectionHead random(std::size_t input_dim, std::size_t hidden_dim, std::size_t embed_dim,
                               std::uint64_t seed);
  std::size_t input_dim() const { return w1.cols; }
  std::size_t embed_dim() const { return w2.rows; }
  bool operator==(const ProjectionHead&) const = default;
};

struct ModelParams {
  AdapterParams adapter;
  ProjectionHead head;
  bool operator==(const ModelParams&) const = default;
};

/// Gradient buffers with the same shapes as ModelParams.
struct ModelGrad {
  Matrix adapter_weight;
  Vec adapter_bias;
  Matrix w1;
  Vec b1;
  Matrix w2;
  Vec b2;

  static ModelGrad zeros_like(const ModelParams& p);
};

/// Flattened parameter / gradient views in a fixed order:
/// adapter weight, adapter bias, w1, b1, w2, b2.
std::vector<double> flatten(const ModelParams& p);
std::vector<double> flatten(const ModelGrad& g);
void unflatten(std::span<const double> values, ModelParams& p);

Vec forward_features(const AdapterParams& adapter, std::span<const double> raw);

/// Accumulates d(loss)/d(weight, bias) for one input given d(loss)/d(output).
void forward_features_backward(std::span<const double> raw, std::span<const double> d_out, ModelGrad& grad);

/// Intermediate values kept for the backward pass through the head.
struct HeadTrace {
  Vec input;
  Vec pre_activation;
  Vec hidden;
  double out_norm = 0.0;
  Vec embedding;
};

Vec project(const ProjectionHead& head, std::span<const double> feature);
HeadTrace project_traced(const ProjectionHead& head, std::span<const double> feature);

/// Accumulates head gradients and returns d(loss)/d(feature).
Vec project_backward(const ProjectionHead& head, const HeadTrace& trace, std::span<const double> d_embedding,
                     ModelGrad& grad);

/// p <- p - lr * g. Throws DivergenceError if any gradient is non-finite;
/// `params` is left untouched in that case.
void sgd_step(std::span<double> params, std::span<const double> grads, double learning_rate);
void sgd_step(ModelParams& params, const ModelGrad& grads, double learning_rate);

/// Which parts of the denoising pipeline are active. All-off reduces the
/// adaptation to a no-op and inference to a plain centroid classifier.
struct DetaComponents {
  bool cora = true;
  bool local_loss = true;
  bool global_loss = true;
  bool accumulator = true;
  bool out_of_class_term = true;

  static DetaComponents all_off() { return {false, false, false, false, false}; }
  bool operator==(const DetaComponents&) const = default;
};

struct AdaptationConfig {
  int iterations = 40;
  double learning_rate = 0.5;
  int k_regions = 2;
  double momentum = 0.7;
  LossHyperparams hp;
  std::uint64_t seed = 0;
  int hidden_dim = 0;  // 0 means "same as the feature dimension"
  int embed_dim = 128;
  double region_jitter = 0.0;  // only used for loaded episodes
  DetaComponents components;
};

struct LossSummary {
  std::size_t iteration = 0;
  double l_local = 0.0;
  double l_global = 0.0;
  double combined = 0.0;
  bool operator==(const LossSummary&) const = default;
};

struct AdaptedState {
  ModelParams params;
  ImageWeightAccumulator accumulator;
  std::vector<LossSummary> loss_trace;

  /// Final image weights in support order.
  std::vector<double> support_weights(const TaskEpisode& episode) const;
  bool operator==(const AdaptedState&) const = default;
};

/// Optional per-iteration observer (CoRA table and accumulator after the
/// update of that iteration).
using IterationObserver =
    std::function<void(std::size_t iteration, const RegionWeightTable&, const ImageWeightAccumulator&)>;

/// Runs the test-time adaptation loop on the support set of `episode`.
/// Throws DivergenceError carrying the 1-based iteration on a non-finite loss.
AdaptedState adapt_task(const TaskEpisode& episode, const AdaptationConfig& cfg,
                        const IterationObserver& observer = {});

/// Loss and full parameter gradient of one adaptation step for fixed
/// regions, weights and accumulator values. Exposed for gradient checks.
struct StepResult {
  LossValue loss;
  ModelGrad grad;
};
StepResult adaptation_step_gradient(const ModelParams& params, const TaskEpisode& episode,
                                    const RegionDraw& regions, std::span<const double> lambda,
                                    std::span<const double> omega, const LossHyperparams& hp,
                                    const LossSwitches& switches);

std::string adapted_state_to_json(const AdaptedState& state);
AdaptedState adapted_state_from_json(const std::string& text);

}  // namespace deta
