#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deta/cora.hpp"
#include "deta/numerics.hpp"

namespace deta {

/// Embeddings of one adaptation step. Region entries are flattened
/// sample-major; `region_owner[r]` indexes the image the region came from.
struct EmbeddingBatch {
  std::vector<Vec> image_embeddings;
  std::vector<int> image_labels;
  std::vector<Vec> region_embeddings;
  std::vector<int> region_labels;
  std::vector<std::size_t> region_owner;
  int way = 0;

  std::size_t embed_dim() const { return image_embeddings.empty() ? 0 : image_embeddings.front().size(); }
};

struct LossHyperparams {
  double tau = 0.5;   // region-pair temperature
  double pi = 0.07;   // posterior temperature over prototypes
  double beta = 0.1;  // weight of the local term
};

/// Value of a loss and its gradient with respect to every input embedding.
struct LossPart {
  double value = 0.0;
  std::vector<Vec> grad_regions;
  std::vector<Vec> grad_images;
};

struct LossValue {
  double l_local = 0.0;
  double l_global = 0.0;
  double combined = 0.0;
  std::vector<Vec> grad_regions;
  std::vector<Vec> grad_images;
};

/// -log of the softmax probability of pair (i, j) among all pairs (i, v),
/// v != i, with logits lambda_i lambda_v <r_i, r_v> / tau.
double pairwise_local_term(std::size_t i, std::size_t j, const std::vector<Vec>& regions,
                           std::span<const double> lambda, double tau);

/// Mean of pairwise_local_term over ordered same-class pairs. The normaliser
/// counts unordered pairs, sum_c n_c (n_c - 1) / 2, with n_c the region count
/// of class c.
LossPart local_compactness_loss(const std::vector<Vec>& regions, std::span<const int> region_labels,
                                std::span<const double> lambda, double tau);

/// mu_c = (1 / N_c) * sum_{y_i = c} omega_i e_i. Not renormalised.
std::vector<Vec> class_prototypes(const std::vector<Vec>& images, std::span<const int> labels,
                                  std::span<const double> omega, int way);

/// softmax_c(cos(r, mu_c) / pi).
Vec region_class_posterior(std::span<const double> region, const std::vector<Vec>& prototypes, double pi);

/// -(1 / R) sum_r lambda_r log p(y_r | r), gradients for regions and images.
LossPart global_dispersion_loss(const EmbeddingBatch& batch, std::span<const double> lambda,
                                std::span<const double> omega, double pi);

struct LossSwitches {
  bool local = true;
  bool global = true;
};

/// beta * L_local + L_global. A switched-off term contributes zero value and
/// zero gradient.
LossValue combined_loss(const EmbeddingBatch& batch, std::span<const double> lambda,
                        std::span<const double> omega, const LossHyperparams& hp,
                        const LossSwitches& switches = {});

}  // namespace deta
