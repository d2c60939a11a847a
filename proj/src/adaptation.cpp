#include "deta/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <json.hpp>

#include "deta/error.hpp"

namespace deta {

namespace {

constexpr std::uint64_t kStreamHeadInit = 10;

void append(std::vector<double>& out, std::span<const double> v) { out.insert(out.end(), v.begin(), v.end()); }

std::size_t take(std::span<const double> src, std::size_t offset, std::span<double> dst) {
  if (offset + dst.size() > src.size()) throw InvalidParameter("unflatten: too few values");
  std::copy(src.begin() + static_cast<std::ptrdiff_t>(offset),
            src.begin() + static_cast<std::ptrdiff_t>(offset + dst.size()), dst.begin());
  return offset + dst.size();
}

void outer_add(Matrix& m, std::span<const double> left, std::span<const double> right) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double l = left[r];
    if (l == 0.0) continue;
    double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += l * right[c];
  }
}

void add_into(Vec& y, std::span<const double> x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
}

}  // namespace

AdapterParams AdapterParams::identity(std::size_t dim) { return {Matrix(dim, dim, 0.0), Vec(dim, 0.0)}; }

ProjectionHead ProjectionHead::random(std::size_t input_dim, std::size_t hidden_dim, std::size_t embed_dim,
                                      std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0 || embed_dim == 0)
    throw InvalidParameter("projection head dimensions must be positive");
  std::mt19937_64 rng(derive_seed(seed, kStreamHeadInit));
  auto fill = [&](std::span<double> v, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& x : v) x = u(rng);
  };
  ProjectionHead h{Matrix(hidden_dim, input_dim), Vec(hidden_dim), Matrix(embed_dim, hidden_dim), Vec(embed_dim)};
  fill(h.w1.data, input_dim);
  fill(h.b1, input_dim);
  fill(h.w2.data, hidden_dim);
  fill(h.b2, hidden_dim);
  return h;
}

ModelGrad ModelGrad::zeros_like(const ModelParams& p) {
  return {Matrix(p.adapter.weight.rows, p.adapter.weight.cols),
          Vec(p.adapter.bias.size(), 0.0),
          Matrix(p.head.w1.rows, p.head.w1.cols),
          Vec(p.head.b1.size(), 0.0),
          Matrix(p.head.w2.rows, p.head.w2.cols),
          Vec(p.head.b2.size(), 0.0)};
}

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  append(out, p.adapter.weight.data);
  append(out, p.adapter.bias);
  append(out, p.head.w1.data);
  append(out, p.head.b1);
  append(out, p.head.w2.data);
  append(out, p.head.b2);
  return out;
}

std::vector<double> flatten(const ModelGrad& g) {
  std::vector<double> out;
  append(out, g.adapter_weight.data);
  append(out, g.adapter_bias);
  append(out, g.w1.data);
  append(out, g.b1);
  append(out, g.w2.data);
  append(out, g.b2);
  return out;
}

void unflatten(std::span<const double> values, ModelParams& p) {
  std::size_t off = 0;
  off = take(values, off, p.adapter.weight.data);
  off = take(values, off, p.adapter.bias);
  off = take(values, off, p.head.w1.data);
  off = take(values, off, p.head.b1);
  off = take(values, off, p.head.w2.data);
  off = take(values, off, p.head.b2);
  if (off != values.size()) throw InvalidParameter("unflatten: too many values");
}

Vec forward_features(const AdapterParams& adapter, std::span<const double> raw) {
  if (raw.size() != adapter.weight.cols || adapter.weight.rows != adapter.weight.cols ||
      adapter.bias.size() != raw.size())
    throw InvalidParameter("forward_features: dimension mismatch");
  Vec out = matvec(adapter.weight, raw);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += raw[i] + adapter.bias[i];
  return out;
}

void forward_features_backward(std::span<const double> raw, std::span<const double> d_out, ModelGrad& grad) {
  outer_add(grad.adapter_weight, d_out, raw);
  add_into(grad.adapter_bias, d_out);
}

HeadTrace project_traced(const ProjectionHead& head, std::span<const double> feature) {
  if (feature.size() != head.input_dim()) throw InvalidParameter("project: dimension mismatch");
  HeadTrace t;
  t.input.assign(feature.begin(), feature.end());
  t.pre_activation = matvec(head.w1, feature);
  t.hidden.resize(t.pre_activation.size());
  for (std::size_t i = 0; i < t.hidden.size(); ++i) {
    t.pre_activation[i] += head.b1[i];
    t.hidden[i] = t.pre_activation[i] > 0.0 ? t.pre_activation[i] : 0.0;
  }
  Vec out = matvec(head.w2, t.hidden);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += head.b2[i];
  t.out_norm = norm(out);
  if (!(t.out_norm > 0.0)) throw DegenerateVector("project: head output has zero norm");
  for (double& x : out) x /= t.out_norm;
  t.embedding = std::move(out);
  return t;
}

Vec project(const ProjectionHead& head, std::span<const double> feature) {
  return project_traced(head, feature).embedding;
}

Vec project_backward(const ProjectionHead& head, const HeadTrace& trace, std::span<const double> d_embedding,
                     ModelGrad& grad) {
  // Through the normalisation: d_out = (I - e e^T) d_e / |out|.
  const double radial = dot(trace.embedding, d_embedding);
  Vec d_out(d_embedding.size());
  for (std::size_t i = 0; i < d_out.size(); ++i)
    d_out[i] = (d_embedding[i] - radial * trace.embedding[i]) / trace.out_norm;

  outer_add(grad.w2, d_out, trace.hidden);
  add_into(grad.b2, d_out);
  Vec d_hidden = matvec_transposed(head.w2, d_out);
  for (std::size_t i = 0; i < d_hidden.size(); ++i)
    if (trace.pre_activation[i] <= 0.0) d_hidden[i] = 0.0;
  outer_add(grad.w1, d_hidden, trace.input);
  add_into(grad.b1, d_hidden);
  return matvec_transposed(head.w1, d_hidden);
}

void sgd_step(std::span<double> params, std::span<const double> grads, double learning_rate) {
  if (params.size() != grads.size()) throw InvalidParameter("sgd_step: shape mismatch");
  if (!all_finite(grads)) throw DivergenceError("sgd_step: non-finite gradient", 0);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate * grads[i];
}

void sgd_step(ModelParams& params, const ModelGrad& grads, double learning_rate) {
  const std::vector<double> g = flatten(grads);
  std::vector<double> p = flatten(params);
  sgd_step(p, g, learning_rate);
  unflatten(p, params);
}

std::vector<double> AdaptedState::support_weights(const TaskEpisode& episode) const {
  std::vector<double> w;
  w.reserve(episode.support.size());
  for (const auto& s : episode.support) w.push_back(accumulator.omega(s.sample_id));
  return w;
}

StepResult adaptation_step_gradient(const ModelParams& params, const TaskEpisode& episode,
                                    const RegionDraw& regions, std::span<const double> lambda,
                                    std::span<const double> omega, const LossHyperparams& hp,
                                    const LossSwitches& switches) {
  if (regions.size() != episode.support.size()) throw InvalidParameter("adaptation step: region draw size mismatch");

  EmbeddingBatch batch;
  batch.way = episode.way;
  std::vector<HeadTrace> image_traces;
  std::vector<HeadTrace> region_traces;
  std::vector<const Vec*> region_inputs;
  for (std::size_t i = 0; i < episode.support.size(); ++i) {
    const auto& s = episode.support[i];
    image_traces.push_back(project_traced(params.head, forward_features(params.adapter, s.image_feature)));
    batch.image_embeddings.push_back(image_traces.back().embedding);
    batch.image_labels.push_back(s.label);
    for (const Vec& r : regions[i]) {
      region_traces.push_back(project_traced(params.head, forward_features(params.adapter, r)));
      batch.region_embeddings.push_back(region_traces.back().embedding);
      batch.region_labels.push_back(s.label);
      batch.region_owner.push_back(i);
      region_inputs.push_back(&r);
    }
  }

  StepResult out{combined_loss(batch, lambda, omega, hp, switches), ModelGrad::zeros_like(params)};
  auto backprop = [&](const HeadTrace& trace, const Vec& d_embedding, const Vec& raw) {
    if (std::all_of(d_embedding.begin(), d_embedding.end(), [](double x) { return x == 0.0; })) return;
    const Vec d_feature = project_backward(params.head, trace, d_embedding, out.grad);
    forward_features_backward(raw, d_feature, out.grad);
  };
  for (std::size_t i = 0; i < image_traces.size(); ++i)
    backprop(image_traces[i], out.loss.grad_images[i], episode.support[i].image_feature);
  for (std::size_t r = 0; r < region_traces.size(); ++r)
    backprop(region_traces[r], out.loss.grad_regions[r], *region_inputs[r]);
  return out;
}

AdaptedState adapt_task(const TaskEpisode& episode, const AdaptationConfig& cfg, const IterationObserver& observer) {
  if (cfg.iterations < 1) throw InvalidParameter("adapt_task: iterations must be >= 1");
  if (cfg.learning_rate < 0.0) throw InvalidParameter("adapt_task: learning_rate must be non-negative");
  if (cfg.k_regions < 1) throw InvalidParameter("adapt_task: k_regions must be >= 1");
  if (cfg.embed_dim < 1 || cfg.hidden_dim < 0) throw InvalidParameter("adapt_task: invalid head dimensions");
  validate_episode(episode);
  {
    std::set<int> labels;
    for (const auto& s : episode.support) labels.insert(s.label);
    if (labels.size() < 2) throw InvalidParameter("adapt_task: support set must span at least two classes");
  }

  const auto d = static_cast<std::size_t>(episode.feature_dim);
  const auto hidden = cfg.hidden_dim > 0 ? static_cast<std::size_t>(cfg.hidden_dim) : d;
  std::vector<int> ids;
  std::vector<int> labels;
  for (const auto& s : episode.support) {
    ids.push_back(s.sample_id);
    labels.push_back(s.label);
  }

  const DetaComponents& on = cfg.components;
  const LossSwitches switches{on.local_loss, on.global_loss};
  const bool trains = (switches.local || switches.global) && cfg.learning_rate > 0.0;

  AdaptedState state;
  state.params.adapter = AdapterParams::identity(d);
  state.params.head = ProjectionHead::random(d, hidden, static_cast<std::size_t>(cfg.embed_dim), cfg.seed);
  state.accumulator = ImageWeightAccumulator(ids, on.accumulator ? cfg.momentum : 0.0);

  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto t = static_cast<std::size_t>(it);
    const RegionDraw raw = resample_regions(episode, cfg.k_regions, cfg.region_jitter, cfg.seed, t);
    try {
      RegionDraw adapted(raw.size());
      for (std::size_t i = 0; i < raw.size(); ++i)
        for (const Vec& r : raw[i]) adapted[i].push_back(forward_features(state.params.adapter, r));

      const RegionWeightTable table = on.cora ? region_weights(adapted, ids, labels, {on.out_of_class_term})
                                              : uniform_region_weights(adapted, ids, labels);
      state.accumulator = accumulate_image_weights(state.accumulator, table);
      if (observer) observer(t, table, state.accumulator);
      const std::vector<double> omega = state.support_weights(episode);

      if (!switches.local && !switches.global) {
        state.loss_trace.push_back({t, 0.0, 0.0, 0.0});
        continue;
      }
      StepResult step = adaptation_step_gradient(state.params, episode, raw, table.lambda, omega, cfg.hp, switches);
      state.loss_trace.push_back({t, step.loss.l_local, step.loss.l_global, step.loss.combined});
      if (!std::isfinite(step.loss.combined))
        throw DivergenceError("adapt_task: non-finite loss at iteration " + std::to_string(it), t);
      if (trains) {
        try {
          sgd_step(state.params, step.grad, cfg.learning_rate);
        } catch (const DivergenceError&) {
          throw DivergenceError("adapt_task: non-finite gradient at iteration " + std::to_string(it), t);
        }
      }
    } catch (const DegenerateVector&) {
      if (!trains || it == 1) throw;
      throw DivergenceError("adapt_task: degenerate features after update at iteration " + std::to_string(it), t);
    }
  }
  return state;
}

namespace {

using nlohmann::json;

json matrix_json(const Matrix& m) { return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}}; }

Matrix matrix_from(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols) throw SchemaError("matrix data size does not match its shape");
  return m;
}

}  // namespace

std::string adapted_state_to_json(const AdaptedState& state) {
  json doc;
  doc["adapter"] = {{"weight", matrix_json(state.params.adapter.weight)}, {"bias", state.params.adapter.bias}};
  doc["head"] = {{"w1", matrix_json(state.params.head.w1)},
                 {"b1", state.params.head.b1},
                 {"w2", matrix_json(state.params.head.w2)},
                 {"b2", state.params.head.b2}};
  json omega = json::array();
  for (const auto& [id, w] : state.accumulator.omega()) omega.push_back({{"sample_id", id}, {"omega", w}});
  doc["accumulator"] = {{"momentum", state.accumulator.momentum()},
                        {"iteration", state.accumulator.iteration()},
                        {"sample_ids", state.accumulator.sample_ids()},
                        {"omega", omega}};
  json trace = json::array();
  for (const auto& l : state.loss_trace)
    trace.push_back({{"iteration", l.iteration}, {"l_local", l.l_local}, {"l_global", l.l_global}, {"combined", l.combined}});
  doc["loss_trace"] = trace;
  return doc.dump(2);
}

AdaptedState adapted_state_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("adapted state: ") + e.what());
  }
  try {
    AdaptedState s;
    s.params.adapter.weight = matrix_from(doc.at("adapter").at("weight"));
    s.params.adapter.bias = doc.at("adapter").at("bias").get<Vec>();
    const json& h = doc.at("head");
    s.params.head.w1 = matrix_from(h.at("w1"));
    s.params.head.b1 = h.at("b1").get<Vec>();
    s.params.head.w2 = matrix_from(h.at("w2"));
    s.params.head.b2 = h.at("b2").get<Vec>();
    const json& acc = doc.at("accumulator");
    std::map<int, double> omega;
    for (const auto& e : acc.at("omega")) omega[e.at("sample_id").get<int>()] = e.at("omega").get<double>();
    s.accumulator = ImageWeightAccumulator::restore(acc.at("sample_ids").get<std::vector<int>>(),
                                                    acc.at("momentum").get<double>(),
                                                    acc.at("iteration").get<std::size_t>(), std::move(omega));
    for (const auto& l : doc.at("loss_trace"))
      s.loss_trace.push_back({l.at("iteration").get<std::size_t>(), l.at("l_local").get<double>(),
                              l.at("l_global").get<double>(), l.at("combined").get<double>()});
    return s;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("adapted state: ") + e.what());
  }
}

}  // namespace deta
