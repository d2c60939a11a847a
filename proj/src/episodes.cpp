#include "deta/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "deta/error.hpp"

namespace deta {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Streams used when deriving sub-seeds from an episode seed.
constexpr std::uint64_t kStreamFeatures = 0;
constexpr std::uint64_t kStreamLabels = 1;
constexpr std::uint64_t kStreamRegions = 2;
constexpr std::uint64_t kStreamImageNoise = 3;

Vec gaussian(std::mt19937_64& rng, std::size_t d, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(d);
  for (double& x : v) x = sigma * n(rng);
  return v;
}

void axpy(double a, std::span<const double> x, Vec& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

// First `m` entries of a seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

std::size_t round_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::round(ratio * static_cast<double>(n)));
}

std::vector<Vec> orthonormal_set(std::size_t count, std::size_t d, std::mt19937_64& rng) {
  std::vector<Vec> basis;
  while (basis.size() < count) {
    Vec v = gaussian(rng, d, 1.0);
    for (const Vec& b : basis) axpy(-dot(v, b), b, v);
    const double n = norm(v);
    if (n < 1e-8) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

std::vector<Vec> draw_regions(const Vec& centre, double distractor_fraction,
                              const std::vector<Vec>& distractors, double sigma, int k,
                              std::mt19937_64& rng) {
  const std::size_t kk = static_cast<std::size_t>(k);
  const std::size_t n_distract = distractors.empty() ? 0 : round_count(distractor_fraction, kk);
  std::vector<bool> is_distractor(kk, false);
  if (n_distract > 0) {
    auto slots = shuffled_indices(kk, rng);
    for (std::size_t s = 0; s < n_distract; ++s) is_distractor[slots[s]] = true;
  }
  std::vector<Vec> out;
  out.reserve(kk);
  for (std::size_t j = 0; j < kk; ++j) {
    Vec r = gaussian(rng, centre.size(), sigma);
    if (is_distractor[j]) {
      std::uniform_int_distribution<std::size_t> which(0, distractors.size() - 1);
      axpy(1.0, distractors[which(rng)], r);
    } else {
      axpy(1.0, centre, r);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(master ^ (stream * 0xD1B54A32D192ED03ULL)) + index);
}

std::string to_string(NoiseTag tag) {
  switch (tag) {
    case NoiseTag::clean: return "clean";
    case NoiseTag::image_noisy: return "image_noisy";
    case NoiseTag::label_noisy: return "label_noisy";
  }
  return "clean";
}

NoiseTag noise_tag_from_string(const std::string& s) {
  if (s == "clean") return NoiseTag::clean;
  if (s == "image_noisy") return NoiseTag::image_noisy;
  if (s == "label_noisy") return NoiseTag::label_noisy;
  throw InvalidParameter("unknown noise tag '" + s + "'");
}

std::vector<int> TaskEpisode::shots_per_class() const {
  std::vector<int> counts(static_cast<std::size_t>(std::max(way, 0)), 0);
  for (const auto& s : support)
    if (s.label >= 0 && s.label < way) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

bool same_data(const TaskEpisode& a, const TaskEpisode& b) {
  return a.way == b.way && a.feature_dim == b.feature_dim && a.support == b.support &&
         a.queries == b.queries;
}

void validate_episode(const TaskEpisode& ep, bool require_every_class) {
  if (ep.way < 1) throw InvalidParameter("episode: way must be >= 1");
  if (ep.feature_dim < 1) throw InvalidParameter("episode: feature_dim must be >= 1");
  const auto d = static_cast<std::size_t>(ep.feature_dim);
  auto in_range = [&](int c) { return c >= 0 && c < ep.way; };
  for (const auto& s : ep.support) {
    const std::string who = "support sample " + std::to_string(s.sample_id);
    if (!in_range(s.label) || !in_range(s.ground_truth_label))
      throw InvalidParameter(who + ": class index out of range");
    if (s.image_feature.size() != d) throw InvalidParameter(who + ": image feature dimension");
    if (s.region_features.empty()) throw InvalidParameter(who + ": needs at least one region");
    for (const auto& r : s.region_features)
      if (r.size() != d) throw InvalidParameter(who + ": region dimension");
  }
  for (const auto& q : ep.queries) {
    if (!in_range(q.ground_truth_label))
      throw InvalidParameter("query " + std::to_string(q.sample_id) + ": class index out of range");
    if (q.image_feature.size() != d)
      throw InvalidParameter("query " + std::to_string(q.sample_id) + ": dimension");
  }
  if (require_every_class) {
    const auto counts = ep.shots_per_class();
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (counts[c] == 0) throw InvalidParameter("class " + std::to_string(c) + " has no support sample");
  }
}

TaskEpisode generate_synthetic_episode(int way, int shot, int k, int d,
                                       const SyntheticNoiseConfig& cfg, std::uint64_t seed) {
  if (way < 2 || shot < 1 || k < 1 || d < 2)
    throw InvalidParameter("generate_synthetic_episode: need way >= 2, shot >= 1, k >= 1, d >= 2");
  if (cfg.nuisance_rank < 0 || cfg.nuisance_spread < 0.0)
    throw InvalidParameter("generate_synthetic_episode: invalid nuisance settings");
  if (way + 1 + cfg.nuisance_rank > d)
    throw InvalidParameter("generate_synthetic_episode: feature_dim must exceed way + nuisance_rank");
  auto unit_interval = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!unit_interval(cfg.label_noise_ratio) || !unit_interval(cfg.image_noise_ratio) ||
      !unit_interval(cfg.distractor_mix))
    throw InvalidParameter("generate_synthetic_episode: ratios must lie in [0, 1]");
  if (!(cfg.class_separation > 0.0) || cfg.class_separation > std::sqrt(2.0) + 1e-12)
    throw InvalidParameter("generate_synthetic_episode: class_separation must be in (0, sqrt 2]");
  if (cfg.instance_spread < 0.0 || cfg.view_spread < 0.0 || cfg.region_spread < 0.0 ||
      cfg.queries_per_class < 0 || cfg.num_distractors < 1)
    throw InvalidParameter("generate_synthetic_episode: invalid spread/count settings");

  const auto dim = static_cast<std::size_t>(d);
  const double coord = 1.0 / std::sqrt(static_cast<double>(d));
  std::mt19937_64 rng(derive_seed(seed, kStreamFeatures));

  // Unit class means m_c = a*b + s/sqrt(2)*o_c over an orthonormal set
  // {b, o_1..o_C}; pairwise distance is exactly `class_separation`.
  const auto basis = orthonormal_set(static_cast<std::size_t>(way + 1 + cfg.nuisance_rank), dim, rng);
  const double beta = std::min(1.0, cfg.class_separation / std::sqrt(2.0));
  const double alpha = std::sqrt(std::max(0.0, 1.0 - beta * beta));
  std::vector<Vec> means(static_cast<std::size_t>(way), Vec(dim, 0.0));
  for (int c = 0; c < way; ++c) {
    axpy(alpha, basis[0], means[c]);
    axpy(beta, basis[static_cast<std::size_t>(c) + 1], means[c]);
  }

  const double nuisance_sigma =
      cfg.nuisance_rank > 0 ? cfg.nuisance_spread / std::sqrt(static_cast<double>(cfg.nuisance_rank)) : 0.0;
  std::normal_distribution<double> unit_normal(0.0, 1.0);
  auto instance_offset = [&](Vec& v) {
    axpy(1.0, gaussian(rng, dim, cfg.instance_spread * coord), v);
    for (int r = 0; r < cfg.nuisance_rank; ++r)
      axpy(nuisance_sigma * unit_normal(rng), basis[static_cast<std::size_t>(way + 1 + r)], v);
  };

  std::vector<Vec> distractors;
  for (int m = 0; m < cfg.num_distractors; ++m) distractors.push_back(l2_normalize(gaussian(rng, dim, 1.0)));

  const std::size_t n_support = static_cast<std::size_t>(way) * static_cast<std::size_t>(shot);
  std::vector<bool> image_noisy(n_support, false);
  {
    std::mt19937_64 pick_rng(derive_seed(seed, kStreamImageNoise));
    auto order = shuffled_indices(n_support, pick_rng);
    const std::size_t m = round_count(cfg.image_noise_ratio, n_support);
    for (std::size_t i = 0; i < m; ++i) image_noisy[order[i]] = true;
  }

  TaskEpisode ep;
  ep.way = way;
  ep.feature_dim = d;
  ep.seed = seed;
  SyntheticSource src;
  src.distractor_centres = distractors;
  src.region_sigma = cfg.region_spread * coord;

  int next_id = 0;
  std::uniform_int_distribution<std::size_t> which(0, distractors.size() - 1);
  for (int c = 0; c < way; ++c) {
    for (int s = 0; s < shot; ++s) {
      const std::size_t i = ep.support.size();
      Vec centre = means[static_cast<std::size_t>(c)];
      instance_offset(centre);
      const double mix = image_noisy[i] ? cfg.distractor_mix : 0.0;

      SupportSample smp;
      smp.sample_id = next_id++;
      smp.label = c;
      smp.ground_truth_label = c;
      smp.noise_tag = image_noisy[i] ? NoiseTag::image_noisy : NoiseTag::clean;
      smp.image_feature = gaussian(rng, dim, cfg.view_spread * coord);
      axpy(1.0 - mix, centre, smp.image_feature);
      if (mix > 0.0) axpy(mix, distractors[which(rng)], smp.image_feature);
      smp.region_features = draw_regions(centre, mix, distractors, src.region_sigma, k, rng);

      ep.support.push_back(std::move(smp));
      src.instance_centres.push_back(std::move(centre));
      src.distractor_fraction.push_back(mix);
    }
  }
  for (int c = 0; c < way; ++c) {
    for (int q = 0; q < cfg.queries_per_class; ++q) {
      QuerySample qs;
      qs.sample_id = next_id++;
      qs.ground_truth_label = c;
      qs.image_feature = means[static_cast<std::size_t>(c)];
      instance_offset(qs.image_feature);
      axpy(1.0, gaussian(rng, dim, cfg.view_spread * coord), qs.image_feature);
      ep.queries.push_back(std::move(qs));
    }
  }
  ep.generator = std::move(src);

  if (cfg.label_noise_ratio > 0.0)
    ep = corrupt_labels(ep, cfg.label_noise_ratio, derive_seed(seed, kStreamLabels));
  return ep;
}

TaskEpisode corrupt_labels(const TaskEpisode& episode, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidParameter("corrupt_labels: ratio must lie in [0, 1]");
  TaskEpisode out = episode;
  const std::size_t m = round_count(ratio, out.support.size());
  if (m == 0) return out;
  if (out.way < 2) throw InvalidParameter("corrupt_labels: needs at least two classes");

  std::mt19937_64 rng(seed);
  const auto order = shuffled_indices(out.support.size(), rng);
  std::uniform_int_distribution<int> other(0, out.way - 2);
  for (std::size_t i = 0; i < m; ++i) {
    SupportSample& s = out.support[order[i]];
    const int u = other(rng);
    s.label = u < s.ground_truth_label ? u : u + 1;
    s.noise_tag = NoiseTag::label_noisy;
  }
  return out;
}

RegionDraw resample_regions(const TaskEpisode& episode, int k, double jitter, std::uint64_t seed,
                            std::uint64_t iteration) {
  if (k < 1) throw InvalidParameter("resample_regions: k must be >= 1");
  if (jitter < 0.0) throw InvalidParameter("resample_regions: jitter must be non-negative");
  std::mt19937_64 rng(derive_seed(seed, kStreamRegions, iteration));
  RegionDraw out;
  out.reserve(episode.support.size());

  if (episode.generator) {
    const SyntheticSource& g = *episode.generator;
    for (std::size_t i = 0; i < episode.support.size(); ++i)
      out.push_back(draw_regions(g.instance_centres[i], g.distractor_fraction[i], g.distractor_centres,
                                 g.region_sigma, k, rng));
    return out;
  }

  const auto kk = static_cast<std::size_t>(k);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const auto& s : episode.support) {
    const std::size_t stored = s.region_features.size();
    if (stored < kk)
      throw InvalidParameter("resample_regions: sample " + std::to_string(s.sample_id) + " stores " +
                             std::to_string(stored) + " regions, " + std::to_string(k) + " requested");
    auto order = shuffled_indices(stored, rng);
    order.resize(kk);
    std::sort(order.begin(), order.end());
    std::vector<Vec> regions;
    regions.reserve(kk);
    for (std::size_t idx : order) {
      Vec r = s.region_features[idx];
      if (jitter > 0.0)
        for (double& x : r) x += jitter * n(rng);
      regions.push_back(std::move(r));
    }
    out.push_back(std::move(regions));
  }
  return out;
}

}  // namespace deta
