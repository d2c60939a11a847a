// Command-line front end: synthetic benchmark sweeps, single-episode
// adaptation, and CoRA weight traces for loaded episodes.

#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "deta/adaptation.hpp"
#include "deta/classifier.hpp"
#include "deta/episodes.hpp"
#include "deta/error.hpp"
#include "deta/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

std::vector<double> parse_ratios(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw deta::InvalidParameter("bad noise ratio '" + item + "'");
    }
  }
  return out;
}

void add_adaptation_options(CLI::App* cmd, deta::AdaptationConfig& a) {
  cmd->add_option("--iterations", a.iterations, "Adaptation iterations")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", a.learning_rate, "SGD learning rate")->check(CLI::NonNegativeNumber);
  cmd->add_option("--k-regions", a.k_regions, "Regions per support sample and iteration")->check(CLI::PositiveNumber);
  cmd->add_option("--beta", a.hp.beta, "Weight of the local compactness loss")->check(CLI::NonNegativeNumber);
  cmd->add_option("--tau", a.hp.tau, "Region-pair temperature")->check(CLI::PositiveNumber);
  cmd->add_option("--pi", a.hp.pi, "Prototype posterior temperature")->check(CLI::PositiveNumber);
  cmd->add_option("--gamma", a.momentum, "Image-weight momentum")->check(CLI::Range(0.0, 0.999999));
  cmd->add_option("--hidden", a.hidden_dim, "Projection head hidden width (0 = feature dim)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--embed-dim", a.embed_dim, "Embedding dimension")->check(CLI::PositiveNumber);
}

int run_bench(const deta::BenchmarkConfig& base, const std::string& noise_type, const std::string& ratios,
              const std::vector<std::string>& ablations, const std::string& out_path, const std::string& format,
              bool tsa_mode) {
  deta::BenchmarkConfig cfg = base;
  cfg.noise_type = deta::noise_type_from_string(noise_type);
  cfg.noise_ratios = parse_ratios(ratios);
  cfg.ablations.clear();
  for (const auto& a : ablations) cfg.ablations.push_back(deta::ablation_from_name(a));
  if (tsa_mode) cfg.adaptation.k_regions = 4;
  const auto fmt = deta::report_format_from_string(format);

  const deta::AggregateReport report = deta::run_benchmark(cfg);
  if (out_path.empty() || out_path == "-") {
    if (fmt == deta::ReportFormat::csv)
      deta::write_report_csv(report, std::cout);
    else
      std::cout << deta::report_to_json(report) << '\n';
  } else {
    deta::emit_report(report, fmt, out_path);
  }
  for (const auto& c : report.cells) {
    std::cerr << "cell " << c.cell_id << " ratio=" << c.noise_ratio << " ablation=" << c.ablation
              << " baseline=" << c.baseline_mean << " deta=" << c.deta_mean << " delta=" << c.delta_mean
              << " failed=" << c.n_failed << '\n';
    if (c.n_episodes == 0 && c.n_failed > 0) return kExitDiverged;
  }
  return kExitOk;
}

int run_adapt(const std::string& episode_path, const std::string& out_path, deta::AdaptationConfig cfg,
              double jitter) {
  const deta::TaskEpisode ep = deta::load_episode_file(episode_path);
  cfg.region_jitter = jitter;
  const deta::AdaptedState state = deta::adapt_task(ep, cfg);
  std::ofstream out(out_path);
  if (!out) throw deta::IoError("cannot write " + out_path);
  out << deta::adapted_state_to_json(state) << '\n';
  if (!ep.queries.empty())
    std::cerr << "query accuracy: baseline=" << deta::evaluate_baseline(ep) << " adapted=" << deta::evaluate(ep, state)
              << '\n';
  return kExitOk;
}

int run_weights(const std::string& episode_path, const std::string& out_path, deta::AdaptationConfig cfg,
                double jitter) {
  const deta::TaskEpisode ep = deta::load_episode_file(episode_path);
  cfg.region_jitter = jitter;
  std::ofstream out(out_path);
  if (!out) throw deta::IoError("cannot write " + out_path);
  deta::write_weight_csv_header(out);
  deta::adapt_task(ep, cfg, [&](std::size_t t, const deta::RegionWeightTable& table,
                                const deta::ImageWeightAccumulator& acc) {
    deta::write_weight_csv_rows(out, t, table, acc);
  });
  if (!out) throw deta::IoError("write failed for " + out_path);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image- and label-denoising task adaptation on pre-extracted features"};
  app.require_subcommand(1);

  deta::BenchmarkConfig bench;
  bench.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string noise_type = "label";
  std::string ratios = "0.3";
  std::vector<std::string> ablations{"full"};
  std::string bench_out = "-";
  std::string format = "csv";
  bool tsa_mode = false;
  auto* b = app.add_subcommand("bench", "Run a seeded synthetic benchmark sweep");
  b->add_option("--way", bench.way, "Classes per episode")->check(CLI::Range(2, 1000));
  b->add_option("--shot", bench.shot, "Support samples per class")->check(CLI::PositiveNumber);
  b->add_option("--dim", bench.dim, "Feature dimension")->check(CLI::Range(3, 100000));
  b->add_option("--noise-type", noise_type, "none | label | image")->check(CLI::IsMember({"none", "label", "image"}));
  b->add_option("--noise-ratios", ratios, "Comma-separated noise ratios");
  b->add_option("--episodes", bench.episodes_per_cell, "Episodes per cell")->check(CLI::PositiveNumber);
  b->add_option("--ablation", ablations, "full | no-cora | no-local | no-global | no-ma | no-ooc | none")
      ->delimiter(',')
      ->check(CLI::IsMember({"full", "no-cora", "no-local", "no-global", "no-ma", "no-ooc", "none"}));
  b->add_option("--seed", bench.seed, "Master seed");
  b->add_option("--threads", bench.threads, "Worker threads")->check(CLI::PositiveNumber);
  b->add_option("--out", bench_out, "Output path ('-' for stdout)");
  b->add_option("--format", format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
  b->add_option("--class-separation", bench.synthetic.class_separation, "Distance between class mean directions");
  b->add_option("--distractor-mix", bench.synthetic.distractor_mix, "Distractor fraction of image-noisy samples");
  b->add_option("--queries", bench.synthetic.queries_per_class, "Queries per class");
  b->add_option("--instance-spread", bench.synthetic.instance_spread, "Expected norm of per-instance offsets");
  b->add_option("--view-spread", bench.synthetic.view_spread, "Expected norm of image-view noise");
  b->add_option("--region-spread", bench.synthetic.region_spread, "Expected norm of per-region noise");
  b->add_option("--nuisance-rank", bench.synthetic.nuisance_rank, "Number of class-irrelevant high-variance directions");
  b->add_option("--nuisance-spread", bench.synthetic.nuisance_spread, "Expected norm of the nuisance component");
  b->add_flag("--tsa", tsa_mode, "Use four regions per sample");
  add_adaptation_options(b, bench.adaptation);

  deta::AdaptationConfig adapt_cfg;
  std::string adapt_episode, adapt_out = "state.json";
  double adapt_jitter = 0.0;
  auto* a = app.add_subcommand("adapt", "Adapt on one loaded episode and write the adapted state");
  a->add_option("--episode", adapt_episode, "Episode JSON file")->required();
  a->add_option("--out", adapt_out, "Output JSON path");
  a->add_option("--seed", adapt_cfg.seed, "Seed for region resampling and head init");
  a->add_option("--jitter", adapt_jitter, "Gaussian jitter added to resampled regions")->check(CLI::NonNegativeNumber);
  add_adaptation_options(a, adapt_cfg);

  deta::AdaptationConfig weights_cfg;
  std::string weights_episode, weights_out = "weights.csv";
  double weights_jitter = 0.0;
  auto* w = app.add_subcommand("weights", "Dump the per-iteration region and image weights as CSV");
  w->add_option("--episode", weights_episode, "Episode JSON file")->required();
  w->add_option("--out", weights_out, "Output CSV path");
  w->add_option("--seed", weights_cfg.seed, "Seed for region resampling and head init");
  w->add_option("--jitter", weights_jitter, "Gaussian jitter added to resampled regions")->check(CLI::NonNegativeNumber);
  add_adaptation_options(w, weights_cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*b) return run_bench(bench, noise_type, ratios, ablations, bench_out, format, tsa_mode);
    if (*a) return run_adapt(adapt_episode, adapt_out, adapt_cfg, adapt_jitter);
    if (*w) return run_weights(weights_episode, weights_out, weights_cfg, weights_jitter);
  } catch (const deta::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const deta::InvalidParameter& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const deta::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const deta::SchemaError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const deta::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
