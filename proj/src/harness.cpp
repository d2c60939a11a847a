#include "deta/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "deta/classifier.hpp"
#include "deta/error.hpp"

namespace deta {

namespace {

constexpr std::uint64_t kStreamEpisodes = 100;

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

// Mean omega of clean samples minus mean omega of samples carrying `noisy`.
std::optional<double> separation(const std::vector<SampleWeight>& weights, NoiseTag noisy) {
  double clean = 0.0, bad = 0.0;
  int n_clean = 0, n_bad = 0;
  for (const auto& w : weights) {
    if (w.tag == NoiseTag::clean) {
      clean += w.omega;
      ++n_clean;
    } else if (w.tag == noisy) {
      bad += w.omega;
      ++n_bad;
    }
  }
  if (n_clean == 0 || n_bad == 0) return std::nullopt;
  return clean / n_clean - bad / n_bad;
}

}  // namespace

std::string to_string(NoiseType t) {
  switch (t) {
    case NoiseType::none: return "none";
    case NoiseType::label: return "label";
    case NoiseType::image: return "image";
  }
  return "none";
}

NoiseType noise_type_from_string(const std::string& s) {
  if (s == "none") return NoiseType::none;
  if (s == "label") return NoiseType::label;
  if (s == "image") return NoiseType::image;
  throw InvalidParameter("unknown noise type '" + s + "'");
}

Ablation ablation_from_name(const std::string& name) {
  DetaComponents c;
  if (name == "full") {
  } else if (name == "no-cora") {
    c.cora = false;
  } else if (name == "no-local") {
    c.local_loss = false;
  } else if (name == "no-global") {
    c.global_loss = false;
  } else if (name == "no-ma") {
    c.accumulator = false;
  } else if (name == "no-ooc") {
    c.out_of_class_term = false;
  } else if (name == "none") {
    c = DetaComponents::all_off();
  } else {
    throw InvalidParameter("unknown ablation '" + name + "'");
  }
  return {name, c};
}

std::string ablation_mask(const DetaComponents& c) {
  std::string m;
  for (bool b : {c.cora, c.local_loss, c.global_loss, c.accumulator, c.out_of_class_term}) m += b ? '1' : '0';
  return m;
}

std::vector<const EpisodeReport*> AggregateReport::episodes_of(std::size_t cell_id) const {
  std::vector<const EpisodeReport*> out;
  for (const auto& e : episodes)
    if (e.cell_id == cell_id) out.push_back(&e);
  return out;
}

std::uint64_t episode_seed(std::uint64_t master, std::size_t index) {
  return derive_seed(master, kStreamEpisodes, index);
}

EpisodeReport run_episode(const BenchmarkConfig& cfg, double noise_ratio, const Ablation& ablation,
                          std::size_t episode_index) {
  EpisodeReport rep;
  rep.episode_index = episode_index;
  rep.seed = episode_seed(cfg.seed, episode_index);
  rep.noise_ratio = noise_ratio;
  rep.ablation = ablation.name;

  SyntheticNoiseConfig syn = cfg.synthetic;
  syn.label_noise_ratio = cfg.noise_type == NoiseType::label ? noise_ratio : 0.0;
  syn.image_noise_ratio = cfg.noise_type == NoiseType::image ? noise_ratio : 0.0;
  try {
    const TaskEpisode ep = generate_synthetic_episode(cfg.way, cfg.shot, cfg.adaptation.k_regions, cfg.dim, syn, rep.seed);
    rep.baseline_accuracy = evaluate_baseline(ep);

    AdaptationConfig ac = cfg.adaptation;
    ac.seed = rep.seed;
    ac.components = ablation.components;
    const AdaptedState state = adapt_task(ep, ac);
    rep.deta_accuracy = evaluate(ep, state);
    for (const auto& s : ep.support) rep.weights.push_back({s.sample_id, state.accumulator.omega(s.sample_id), s.noise_tag});
    if (!state.loss_trace.empty()) {
      rep.initial_loss = state.loss_trace.front().combined;
      rep.final_loss = state.loss_trace.back().combined;
    }
  } catch (const Error& e) {
    rep.failed = true;
    rep.error = e.what();
    rep.weights.clear();
  }
  return rep;
}

MeanCI mean_ci95(const std::vector<double>& xs) {
  MeanCI out;
  out.mean = mean_of(xs);
  if (xs.size() < 2) return out;
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  out.half_width = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
  return out;
}

double paired_t_test_greater(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidParameter("paired t-test needs two equal samples of size >= 2");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double m = mean_of(d);
  double ss = 0.0;
  for (double x : d) ss += (x - m) * (x - m);
  const double n = static_cast<double>(d.size());
  const double se = std::sqrt(ss / (n - 1.0) / n);
  if (se == 0.0) return m > 0.0 ? 0.0 : 1.0;
  boost::math::students_t dist(n - 1.0);
  return boost::math::cdf(boost::math::complement(dist, m / se));
}

AggregateReport run_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.episodes_per_cell < 1) throw InvalidParameter("benchmark: episodes_per_cell must be >= 1");
  if (cfg.ablations.empty()) throw InvalidParameter("benchmark: at least one ablation is required");
  std::vector<double> ratios = cfg.noise_ratios;
  if (cfg.noise_type == NoiseType::none) ratios = {0.0};
  if (ratios.empty()) throw InvalidParameter("benchmark: at least one noise ratio is required");
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw InvalidParameter("benchmark: noise ratios must lie in [0, 1]");

  const NoiseTag noisy_tag = cfg.noise_type == NoiseType::image ? NoiseTag::image_noisy : NoiseTag::label_noisy;
  const auto n_eps = static_cast<std::size_t>(cfg.episodes_per_cell);
  const std::size_t n_threads = static_cast<std::size_t>(std::max(1, cfg.threads));

  AggregateReport report;
  std::size_t cell_id = 0;
  for (double ratio : ratios) {
    for (const Ablation& ablation : cfg.ablations) {
      std::vector<EpisodeReport> results(n_eps);
      std::atomic<std::size_t> next{0};
      auto worker = [&] {
        for (std::size_t i = next++; i < n_eps; i = next++) results[i] = run_episode(cfg, ratio, ablation, i);
      };
      if (n_threads == 1) {
        worker();
      } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(n_threads, n_eps); ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
      }

      CellSummary cell;
      cell.cell_id = cell_id;
      cell.noise_type = cfg.noise_type;
      cell.noise_ratio = ratio;
      cell.ablation = ablation.name;
      cell.ablation_mask = ablation_mask(ablation.components);
      std::vector<double> base, deta, delta, sep;
      for (auto& r : results) {
        r.cell_id = cell_id;
        if (r.failed) {
          ++cell.n_failed;
          continue;
        }
        base.push_back(r.baseline_accuracy);
        deta.push_back(r.deta_accuracy);
        delta.push_back(r.deta_accuracy - r.baseline_accuracy);
        if (auto s = separation(r.weights, noisy_tag)) sep.push_back(*s);
      }
      cell.n_episodes = base.size();
      const MeanCI b = mean_ci95(base), d = mean_ci95(deta);
      cell.baseline_mean = b.mean;
      cell.baseline_ci95 = b.half_width;
      cell.deta_mean = d.mean;
      cell.deta_ci95 = d.half_width;
      cell.delta_mean = mean_of(delta);
      cell.omega_separation = mean_of(sep);
      report.cells.push_back(cell);
      for (auto& r : results) report.episodes.push_back(std::move(r));
      ++cell_id;
    }
  }
  return report;
}

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw InvalidParameter("unknown report format '" + s + "'");
}

void write_report_csv(const AggregateReport& report, std::ostream& out) {
  out << "cell_id,noise_type,noise_ratio,ablation_mask,n_episodes,baseline_mean,baseline_ci95,"
         "deta_mean,deta_ci95,delta_mean,omega_separation\n";
  const auto precision = out.precision(10);
  for (const auto& c : report.cells) {
    out << c.cell_id << ',' << to_string(c.noise_type) << ',' << c.noise_ratio << ',' << c.ablation_mask << ','
        << c.n_episodes << ',' << c.baseline_mean << ',' << c.baseline_ci95 << ',' << c.deta_mean << ','
        << c.deta_ci95 << ',' << c.delta_mean << ',' << c.omega_separation << '\n';
  }
  out.precision(precision);
}

using nlohmann::json;

std::string report_to_json(const AggregateReport& report) {
  json doc;
  doc["cells"] = json::array();
  for (const auto& c : report.cells) {
    doc["cells"].push_back({{"cell_id", c.cell_id},
                            {"noise_type", to_string(c.noise_type)},
                            {"noise_ratio", c.noise_ratio},
                            {"ablation", c.ablation},
                            {"ablation_mask", c.ablation_mask},
                            {"n_episodes", c.n_episodes},
                            {"n_failed", c.n_failed},
                            {"baseline_mean", c.baseline_mean},
                            {"baseline_ci95", c.baseline_ci95},
                            {"deta_mean", c.deta_mean},
                            {"deta_ci95", c.deta_ci95},
                            {"delta_mean", c.delta_mean},
                            {"omega_separation", c.omega_separation}});
  }
  doc["episodes"] = json::array();
  for (const auto& e : report.episodes) {
    json weights = json::array();
    for (const auto& w : e.weights) weights.push_back({{"sample_id", w.sample_id}, {"omega", w.omega}, {"tag", to_string(w.tag)}});
    doc["episodes"].push_back({{"cell_id", e.cell_id},
                               {"episode_index", e.episode_index},
                               {"seed", e.seed},
                               {"noise_ratio", e.noise_ratio},
                               {"ablation", e.ablation},
                               {"failed", e.failed},
                               {"error", e.error},
                               {"baseline_accuracy", e.baseline_accuracy},
                               {"deta_accuracy", e.deta_accuracy},
                               {"initial_loss", e.initial_loss},
                               {"final_loss", e.final_loss},
                               {"weights", weights}});
  }
  return doc.dump(2);
}

AggregateReport report_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  try {
    AggregateReport r;
    for (const auto& c : doc.at("cells")) {
      CellSummary s;
      s.cell_id = c.at("cell_id").get<std::size_t>();
      s.noise_type = noise_type_from_string(c.at("noise_type").get<std::string>());
      s.noise_ratio = c.at("noise_ratio").get<double>();
      s.ablation = c.at("ablation").get<std::string>();
      s.ablation_mask = c.at("ablation_mask").get<std::string>();
      s.n_episodes = c.at("n_episodes").get<std::size_t>();
      s.n_failed = c.at("n_failed").get<std::size_t>();
      s.baseline_mean = c.at("baseline_mean").get<double>();
      s.baseline_ci95 = c.at("baseline_ci95").get<double>();
      s.deta_mean = c.at("deta_mean").get<double>();
      s.deta_ci95 = c.at("deta_ci95").get<double>();
      s.delta_mean = c.at("delta_mean").get<double>();
      s.omega_separation = c.at("omega_separation").get<double>();
      r.cells.push_back(std::move(s));
    }
    for (const auto& e : doc.at("episodes")) {
      EpisodeReport ep;
      ep.cell_id = e.at("cell_id").get<std::size_t>();
      ep.episode_index = e.at("episode_index").get<std::size_t>();
      ep.seed = e.at("seed").get<std::uint64_t>();
      ep.noise_ratio = e.at("noise_ratio").get<double>();
      ep.ablation = e.at("ablation").get<std::string>();
      ep.failed = e.at("failed").get<bool>();
      ep.error = e.at("error").get<std::string>();
      ep.baseline_accuracy = e.at("baseline_accuracy").get<double>();
      ep.deta_accuracy = e.at("deta_accuracy").get<double>();
      ep.initial_loss = e.at("initial_loss").get<double>();
      ep.final_loss = e.at("final_loss").get<double>();
      for (const auto& w : e.at("weights"))
        ep.weights.push_back({w.at("sample_id").get<int>(), w.at("omega").get<double>(),
                              noise_tag_from_string(w.at("tag").get<std::string>())});
      r.episodes.push_back(std::move(ep));
    }
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("report: ") + e.what());
  }
}

void emit_report(const AggregateReport& report, ReportFormat format, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open report file " + path.string());
  if (format == ReportFormat::csv)
    write_report_csv(report, out);
  else
    out << report_to_json(report) << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace deta
