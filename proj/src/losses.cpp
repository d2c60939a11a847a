#include "deta/losses.hpp"

#include <cmath>

#include "deta/error.hpp"

namespace deta {

namespace {

void add_scaled(Vec& y, double a, std::span<const double> x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

std::vector<Vec> zeros_like(const std::vector<Vec>& v) {
  std::vector<Vec> out;
  out.reserve(v.size());
  for (const Vec& x : v) out.emplace_back(x.size(), 0.0);
  return out;
}

}  // namespace

double pairwise_local_term(std::size_t i, std::size_t j, const std::vector<Vec>& regions,
                           std::span<const double> lambda, double tau) {
  if (!(tau > 0.0)) throw InvalidParameter("pairwise_local_term: tau must be positive");
  if (i == j) throw InvalidParameter("pairwise_local_term: pair must use two distinct regions");
  if (i >= regions.size() || j >= regions.size() || lambda.size() != regions.size())
    throw InvalidParameter("pairwise_local_term: index out of range");
  Vec logits;
  logits.reserve(regions.size() - 1);
  double target = 0.0;
  for (std::size_t v = 0; v < regions.size(); ++v) {
    if (v == i) continue;
    const double s = lambda[i] * lambda[v] * dot(regions[i], regions[v]) / tau;
    if (v == j) target = s;
    logits.push_back(s);
  }
  return log_sum_exp(logits) - target;
}

LossPart local_compactness_loss(const std::vector<Vec>& regions, std::span<const int> region_labels,
                                std::span<const double> lambda, double tau) {
  if (!(tau > 0.0)) throw InvalidParameter("local_compactness_loss: tau must be positive");
  const std::size_t n = regions.size();
  if (region_labels.size() != n || lambda.size() != n)
    throw InvalidParameter("local_compactness_loss: size mismatch");

  LossPart out;
  out.grad_regions = zeros_like(regions);

  std::vector<std::size_t> class_count;
  for (int c : region_labels) {
    if (c < 0) throw InvalidParameter("local_compactness_loss: negative label");
    if (static_cast<std::size_t>(c) >= class_count.size()) class_count.resize(static_cast<std::size_t>(c) + 1, 0);
    ++class_count[static_cast<std::size_t>(c)];
  }
  double normaliser = 0.0;
  for (std::size_t m : class_count) normaliser += 0.5 * static_cast<double>(m) * static_cast<double>(m > 0 ? m - 1 : 0);
  if (normaliser == 0.0) return out;

  std::vector<double> gram(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) gram[a * n + b] = gram[b * n + a] = dot(regions[a], regions[b]);

  Vec logits(n);
  Vec prob(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t positives = class_count[static_cast<std::size_t>(region_labels[i])] - 1;
    if (positives == 0) continue;

    double m = -INFINITY;
    for (std::size_t v = 0; v < n; ++v) {
      if (v == i) continue;
      logits[v] = lambda[i] * lambda[v] * gram[i * n + v] / tau;
      m = std::max(m, logits[v]);
    }
    double z = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      if (v == i) continue;
      prob[v] = std::exp(logits[v] - m);
      z += prob[v];
    }
    const double lse = m + std::log(z);

    // sum_j l(i, j) = positives * lse - sum_{j in P(i)} s_ij
    double value = static_cast<double>(positives) * lse;
    for (std::size_t v = 0; v < n; ++v) {
      if (v == i) continue;
      const bool positive = region_labels[v] == region_labels[i];
      if (positive) value -= logits[v];
      const double coeff =
          (static_cast<double>(positives) * prob[v] / z - (positive ? 1.0 : 0.0)) / normaliser;
      const double scale = coeff * lambda[i] * lambda[v] / tau;
      add_scaled(out.grad_regions[i], scale, regions[v]);
      add_scaled(out.grad_regions[v], scale, regions[i]);
    }
    total += value;
  }
  out.value = total / normaliser;
  return out;
}

std::vector<Vec> class_prototypes(const std::vector<Vec>& images, std::span<const int> labels,
                                  std::span<const double> omega, int way) {
  if (labels.size() != images.size() || omega.size() != images.size())
    throw InvalidParameter("class_prototypes: size mismatch");
  if (way < 1) throw InvalidParameter("class_prototypes: way must be >= 1");
  const std::size_t dim = images.empty() ? 0 : images.front().size();
  std::vector<Vec> mu(static_cast<std::size_t>(way), Vec(dim, 0.0));
  std::vector<int> count(static_cast<std::size_t>(way), 0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= way) throw InvalidParameter("class_prototypes: label out of range");
    const auto c = static_cast<std::size_t>(labels[i]);
    add_scaled(mu[c], omega[i], images[i]);
    ++count[c];
  }
  for (std::size_t c = 0; c < mu.size(); ++c) {
    if (count[c] == 0) throw EmptyClass("class " + std::to_string(c) + " has no support image");
    for (double& x : mu[c]) x /= count[c];
  }
  return mu;
}

Vec region_class_posterior(std::span<const double> region, const std::vector<Vec>& prototypes, double pi) {
  if (!(pi > 0.0)) throw InvalidParameter("region_class_posterior: pi must be positive");
  Vec sims;
  sims.reserve(prototypes.size());
  for (const Vec& mu : prototypes) sims.push_back(cosine_similarity(region, mu));
  return softmax(sims, pi);
}

LossPart global_dispersion_loss(const EmbeddingBatch& batch, std::span<const double> lambda,
                                std::span<const double> omega, double pi) {
  if (!(pi > 0.0)) throw InvalidParameter("global_dispersion_loss: pi must be positive");
  const std::size_t n_regions = batch.region_embeddings.size();
  if (lambda.size() != n_regions || batch.region_labels.size() != n_regions)
    throw InvalidParameter("global_dispersion_loss: region size mismatch");

  LossPart out;
  out.grad_regions = zeros_like(batch.region_embeddings);
  out.grad_images = zeros_like(batch.image_embeddings);
  if (n_regions == 0) return out;

  const auto mu = class_prototypes(batch.image_embeddings, batch.image_labels, omega, batch.way);
  std::vector<Vec> grad_mu = zeros_like(mu);
  const double inv_regions = 1.0 / static_cast<double>(n_regions);

  const std::size_t way = mu.size();
  std::vector<CosineGrad> cg(way);
  Vec logits(way);
  double total = 0.0;
  for (std::size_t r = 0; r < n_regions; ++r) {
    if (lambda[r] == 0.0) continue;
    const auto y = static_cast<std::size_t>(batch.region_labels[r]);
    if (y >= way) throw InvalidParameter("global_dispersion_loss: region label out of range");
    for (std::size_t c = 0; c < way; ++c) {
      cg[c] = cosine_similarity_grad(batch.region_embeddings[r], mu[c]);
      logits[c] = cg[c].value / pi;
    }
    const double lse = log_sum_exp(logits);
    total -= lambda[r] * (logits[y] - lse);
    for (std::size_t c = 0; c < way; ++c) {
      const double p = std::exp(logits[c] - lse);
      const double d_logit = -lambda[r] * inv_regions * ((c == y ? 1.0 : 0.0) - p) / pi;
      add_scaled(out.grad_regions[r], d_logit, cg[c].d_a);
      add_scaled(grad_mu[c], d_logit, cg[c].d_b);
    }
  }
  out.value = total * inv_regions;

  std::vector<int> count(way, 0);
  for (int c : batch.image_labels) ++count[static_cast<std::size_t>(c)];
  for (std::size_t i = 0; i < batch.image_embeddings.size(); ++i) {
    const auto c = static_cast<std::size_t>(batch.image_labels[i]);
    add_scaled(out.grad_images[i], omega[i] / count[c], grad_mu[c]);
  }
  return out;
}

LossValue combined_loss(const EmbeddingBatch& batch, std::span<const double> lambda,
                        std::span<const double> omega, const LossHyperparams& hp,
                        const LossSwitches& switches) {
  if (!(hp.tau > 0.0) || !(hp.pi > 0.0) || hp.beta < 0.0)
    throw InvalidParameter("combined_loss: need tau > 0, pi > 0, beta >= 0");
  LossValue out;
  out.grad_regions = zeros_like(batch.region_embeddings);
  out.grad_images = zeros_like(batch.image_embeddings);
  if (switches.local) {
    LossPart local = local_compactness_loss(batch.region_embeddings, batch.region_labels, lambda, hp.tau);
    out.l_local = local.value;
    for (std::size_t r = 0; r < out.grad_regions.size(); ++r) add_scaled(out.grad_regions[r], hp.beta, local.grad_regions[r]);
  }
  if (switches.global) {
    LossPart global = global_dispersion_loss(batch, lambda, omega, hp.pi);
    out.l_global = global.value;
    for (std::size_t r = 0; r < out.grad_regions.size(); ++r) add_scaled(out.grad_regions[r], 1.0, global.grad_regions[r]);
    for (std::size_t i = 0; i < out.grad_images.size(); ++i) add_scaled(out.grad_images[i], 1.0, global.grad_images[i]);
  }
  out.combined = hp.beta * out.l_local + out.l_global;
  return out;
}

}  // namespace deta
