#include "deta/cora.hpp"

#include <cmath>
#include <set>

#include "deta/error.hpp"

namespace deta {

std::vector<RegionIndex> index_regions(std::span<const int> sample_ids, std::span<const int> labels,
                                       const RegionDraw& regions) {
  if (sample_ids.size() != regions.size() || labels.size() != regions.size())
    throw InvalidParameter("index_regions: sample/label/region counts differ");
  std::vector<RegionIndex> index;
  for (std::size_t i = 0; i < regions.size(); ++i)
    for (std::size_t j = 0; j < regions[i].size(); ++j)
      index.push_back({sample_ids[i], static_cast<int>(j), labels[i]});
  return index;
}

std::vector<RegionSets> build_region_sets(std::span<const RegionIndex> index) {
  std::vector<RegionSets> sets(index.size());
  for (std::size_t a = 0; a < index.size(); ++a) {
    for (std::size_t b = 0; b < index.size(); ++b) {
      if (index[b].class_id != index[a].class_id)
        sets[a].out_of_class.push_back(b);
      else if (index[b].sample_id != index[a].sample_id)
        sets[a].in_class.push_back(b);
    }
  }
  return sets;
}

Relevance relevance_scores(std::span<const double> region, const std::vector<Vec>& in_set,
                           const std::vector<Vec>& out_set) {
  auto mean_cos = [&](const std::vector<Vec>& set) {
    if (set.empty()) return 0.0;
    double s = 0.0;
    for (const Vec& v : set) s += cosine_similarity(region, v);
    return s / static_cast<double>(set.size());
  };
  return {mean_cos(in_set), mean_cos(out_set)};
}

std::map<int, double> RegionWeightTable::mean_lambda_per_sample() const {
  std::map<int, double> sum;
  std::map<int, int> count;
  for (std::size_t r = 0; r < index.size(); ++r) {
    sum[index[r].sample_id] += lambda[r];
    ++count[index[r].sample_id];
  }
  for (auto& [id, s] : sum) s /= count[id];
  return sum;
}

namespace {

// Softmax of `scores` taken separately inside each class of `index`.
std::vector<double> per_class_softmax(const std::vector<RegionIndex>& index, const std::vector<double>& scores) {
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t r = 0; r < index.size(); ++r) members[index[r].class_id].push_back(r);
  std::vector<double> out(scores.size());
  for (const auto& [cls, rows] : members) {
    Vec s;
    s.reserve(rows.size());
    for (std::size_t r : rows) s.push_back(scores[r]);
    const Vec p = softmax(s, 1.0);
    for (std::size_t t = 0; t < rows.size(); ++t) out[rows[t]] = p[t];
  }
  return out;
}

RegionWeightTable table_skeleton(const RegionDraw& regions, std::span<const int> sample_ids,
                                 std::span<const int> labels) {
  RegionWeightTable t;
  t.index = index_regions(sample_ids, labels, regions);
  std::set<int> classes;
  for (const auto& ri : t.index) classes.insert(ri.class_id);
  if (classes.size() < 2) throw InvalidParameter("region weights need regions from at least two classes");
  return t;
}

}  // namespace

RegionWeightTable region_weights(const RegionDraw& regions, std::span<const int> sample_ids,
                                 std::span<const int> labels, const CoraOptions& opts) {
  RegionWeightTable t = table_skeleton(regions, sample_ids, labels);
  const std::size_t n = t.size();

  std::vector<Vec> unit;
  unit.reserve(n);
  for (const auto& per_sample : regions)
    for (const Vec& r : per_sample) unit.push_back(l2_normalize(r));

  // Cosine Gram matrix, computed once.
  std::vector<double> gram(n * n);
  for (std::size_t a = 0; a < n; ++a) {
    gram[a * n + a] = 1.0;
    for (std::size_t b = a + 1; b < n; ++b) gram[a * n + b] = gram[b * n + a] = dot(unit[a], unit[b]);
  }

  const auto sets = build_region_sets(t.index);
  t.phi.assign(n, 0.0);
  t.psi.assign(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    // An empty in-class set leaves phi at 0; the class then gets a uniform
    // phi_tilde after normalisation.
    if (!sets[a].in_class.empty()) {
      double s = 0.0;
      for (std::size_t b : sets[a].in_class) s += gram[a * n + b];
      t.phi[a] = s / static_cast<double>(sets[a].in_class.size());
    }
    if (opts.use_out_of_class) {
      double s = 0.0;
      for (std::size_t b : sets[a].out_of_class) s += gram[a * n + b];
      t.psi[a] = s / static_cast<double>(sets[a].out_of_class.size());
    }
  }

  t.phi_tilde = per_class_softmax(t.index, t.phi);
  t.psi_tilde = per_class_softmax(t.index, t.psi);
  t.lambda.resize(n);
  for (std::size_t a = 0; a < n; ++a) t.lambda[a] = t.phi_tilde[a] / t.psi_tilde[a];
  return t;
}

RegionWeightTable uniform_region_weights(const RegionDraw& regions, std::span<const int> sample_ids,
                                         std::span<const int> labels) {
  RegionWeightTable t = table_skeleton(regions, sample_ids, labels);
  t.phi.assign(t.size(), 0.0);
  t.psi.assign(t.size(), 0.0);
  t.phi_tilde = per_class_softmax(t.index, t.phi);
  t.psi_tilde = t.phi_tilde;
  t.lambda.assign(t.size(), 1.0);
  return t;
}

ImageWeightAccumulator::ImageWeightAccumulator(std::vector<int> sample_ids, double momentum)
    : sample_ids_(std::move(sample_ids)), momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidParameter("accumulator momentum must be in [0, 1)");
}

ImageWeightAccumulator ImageWeightAccumulator::restore(std::vector<int> sample_ids, double momentum,
                                                       std::size_t iteration, std::map<int, double> omega) {
  ImageWeightAccumulator acc(std::move(sample_ids), momentum);
  acc.iteration_ = iteration;
  acc.omega_ = std::move(omega);
  return acc;
}

double ImageWeightAccumulator::omega(int sample_id) const {
  auto it = omega_.find(sample_id);
  if (it == omega_.end()) throw MissingWeight("no image weight for sample " + std::to_string(sample_id));
  return it->second;
}

ImageWeightAccumulator accumulate_image_weights(const ImageWeightAccumulator& acc,
                                                const RegionWeightTable& table) {
  const auto means = table.mean_lambda_per_sample();
  ImageWeightAccumulator next = acc;
  for (int id : acc.sample_ids_) {
    auto it = means.find(id);
    if (it == means.end()) throw MissingWeight("region table has no weights for sample " + std::to_string(id));
    if (acc.iteration_ == 0)
      next.omega_[id] = it->second;
    else
      next.omega_[id] = acc.momentum_ * acc.omega_.at(id) + (1.0 - acc.momentum_) * it->second;
  }
  ++next.iteration_;
  return next;
}

void write_weight_csv_header(std::ostream& out) {
  out << "iteration,sample_id,region_slot,phi,psi,lambda,omega\n";
}

void write_weight_csv_rows(std::ostream& out, std::size_t iteration, const RegionWeightTable& table,
                           const ImageWeightAccumulator& acc) {
  const auto precision = out.precision(17);
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto& ri = table.index[r];
    const auto it = acc.omega().find(ri.sample_id);
    out << iteration << ',' << ri.sample_id << ',' << ri.region_slot << ',' << table.phi[r] << ','
        << table.psi[r] << ',' << table.lambda[r] << ',';
    if (it != acc.omega().end()) out << it->second;
    out << '\n';
  }
  out.precision(precision);
}

}  // namespace deta
