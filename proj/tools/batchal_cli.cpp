// batchal: command-line driver for batch active metric learning.
//
//   batchal synth    --out DIR [--n --d --latent --noise --nonlinearity --triplets]
//   batchal run      --config cfg.json [--out DIR] [--seed N]
//   batchal compare  --config cfg.json [--out DIR] [--seed N]
//   batchal diagnose --config cfg.json --triplet ID [--rounds R] [--samples K] [--dropout-p P]
//   batchal serve    [--port 8787] [--data-dir DIR] [--ui-dir DIR]
//
// Exit codes: 0 success, 2 usage or config error, 1 runtime error.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "batchal/config.hpp"
#include "batchal/data.hpp"
#include "batchal/diagnostics.hpp"
#include "batchal/error.hpp"
#include "batchal/loop.hpp"
#include "batchal/rng.hpp"
#include "batchal/service.hpp"

namespace fs = std::filesystem;
using namespace batchal;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct GlobalOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path output_dir(const GlobalOptions& g, const fs::path& fallback) {
  fs::path dir = !g.out.empty() ? fs::path(g.out) : fallback;
  if (dir.empty()) dir = ".";
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_file(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  return out;
}

ExperimentConfig load_config(const GlobalOptions& g) {
  if (g.config.empty()) throw UsageError("--config is required");
  ExperimentConfig cfg = load_experiment_config(g.config);
  if (g.seed) cfg.spec.seeds = {*g.seed};
  for (const std::string& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
  return cfg;
}

int cmd_synth(const GlobalOptions& g, SyntheticSpec spec, const std::string& nonlinearity,
              std::size_t triplet_count) {
  if (spec.latent_dim > spec.d) {
    throw UsageError("--latent (" + std::to_string(spec.latent_dim) + ") must not exceed --d (" +
                     std::to_string(spec.d) + ")");
  }
  try {
    spec.nonlinearity = parse_nonlinearity(nonlinearity);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (g.seed) spec.seed = *g.seed;
  const fs::path dir = output_dir(g, {});
  const SyntheticDataset syn = generate_synthetic(spec);
  save_features(syn.features, dir / "features.csv");
  save_dissim(syn.dissim, dir / "dissim.csv");
  const auto triplets =
      triplets_from_matrix(syn.dissim, triplet_count, mix_seed(spec.seed, 1), default_min_gap(syn.dissim));
  save_triplets(triplets, dir / "triplets.jsonl");
  if (!g.quiet) {
    std::cout << "wrote " << syn.features.n() << " objects, " << triplets.size() << " triplets to "
              << dir.string() << '\n';
  }
  return 0;
}

int cmd_experiment(const GlobalOptions& g, bool compare) {
  ExperimentConfig cfg = load_config(g);
  if (compare && cfg.spec.strategies.size() < 2) {
    throw UsageError("compare needs at least two strategies in the config");
  }
  const fs::path dir = output_dir(g, cfg.output_dir);
  auto dataset = load_dataset(cfg.dataset, cfg.triplet_count, cfg.triplet_seed);

  std::ofstream log = open_file(dir / "rounds.log");
  const bool quiet = g.quiet;
  auto progress = [&](const std::string& strategy, std::uint64_t seed, const RoundRecord& r) {
    std::ostringstream line;
    line << strategy << " seed=" << seed << " round=" << r.round << " accuracy=" << std::fixed
         << std::setprecision(4) << r.accuracy << " entropy=" << std::setprecision(3) << r.batch_entropy
         << " select_ms=" << std::setprecision(1) << r.select_ms << " train_ms=" << r.train_ms;
    log << line.str() << '\n';
    if (!quiet) std::cerr << line.str() << '\n';
  };
  const ExperimentResult result = run_experiment(dataset, cfg.spec, progress);

  {
    std::ofstream out = open_file(dir / "metrics.csv");
    write_metrics_csv(result.rows, out);
  }
  {
    std::ofstream out = open_file(dir / "aggregate.csv");
    write_aggregate_csv(result.aggregate, out);
  }
  if (compare) {
    std::vector<AggregateRow> finals;
    for (const AggregateRow& a : result.aggregate) {
      if (a.round == cfg.spec.rounds) finals.push_back(a);
    }
    std::stable_sort(finals.begin(), finals.end(), [](const AggregateRow& a, const AggregateRow& b) {
      return a.mean_accuracy > b.mean_accuracy;
    });
    std::ofstream out = open_file(dir / "compare.csv");
    write_aggregate_csv(finals, out);
    if (!quiet) {
      std::cout << "final round " << cfg.spec.rounds << " (" << cfg.spec.seeds.size() << " seeds)\n";
      for (const AggregateRow& a : finals) {
        std::cout << "  " << std::left << std::setw(14) << a.strategy << std::fixed << std::setprecision(4)
                  << a.mean_accuracy << " +/- " << a.std_accuracy << '\n';
      }
    }
  } else if (!quiet) {
    std::cout << "wrote " << result.rows.size() << " rows to " << (dir / "metrics.csv").string() << '\n';
  }
  return 0;
}

int cmd_diagnose(const GlobalOptions& g, std::size_t triplet, std::size_t rounds,
                 std::optional<std::size_t> samples, std::optional<double> dropout_p) {
  ExperimentConfig cfg = load_config(g);
  const fs::path dir = output_dir(g, cfg.output_dir);
  auto dataset = load_dataset(cfg.dataset, cfg.triplet_count, cfg.triplet_seed);
  SessionConfig sc = cfg.spec.session;
  sc.seed = cfg.spec.seeds.front();
  ActiveLearningSession session = ActiveLearningSession::init(dataset, sc);
  RoundConfig rc = cfg.spec.round;
  rc.strategy = cfg.spec.strategies.front();
  for (std::size_t r = 0; r < rounds; ++r) session.run_round(rc);
  if (triplet >= session.pool().size()) {
    throw UsageError("--triplet must be below the pool size " + std::to_string(session.pool().size()));
  }

  SamplingConfig sampling{samples.value_or(rc.passes), dropout_p.value_or(rc.dropout_p),
                          session.posterior_seed(session.round() + 1)};
  const std::vector<TripletId> ids{triplet};
  const MarginSampleMatrix msm =
      sample_margins(session.params(), dataset->features.rows, session.pool(), ids, sampling);
  std::vector<double> margins(msm.samples.row(0).begin(), msm.samples.row(0).end());
  const QQData qq = qq_fit(margins);
  const auto bins = histogram(margins, qq.mean, qq.stddev);
  {
    std::ofstream out = open_file(dir / "qq.csv");
    write_qq_csv(qq, out);
  }
  {
    std::ofstream out = open_file(dir / "histogram.csv");
    write_histogram_csv(bins, out);
  }
  if (!g.quiet) {
    std::cout << "triplet " << triplet << ": K=" << margins.size() << " mean=" << qq.mean
              << " sd=" << qq.stddev << " slope=" << qq.slope << " intercept=" << qq.intercept
              << " R2=" << qq.r_squared << '\n';
  }
  return 0;
}

AnnotationService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const GlobalOptions& g, const std::string& host, int port, const std::string& data_dir,
              const std::string& ui_dir) {
  ServiceOptions opts;
  opts.host = host;
  opts.port = port;
  opts.data_dir = data_dir;
  opts.ui_dir = ui_dir;
  AnnotationService service(opts);
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  if (!g.quiet) std::cerr << "listening on http://" << host << ":" << port << '\n';
  service.run();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Batch active metric learning with joint-entropy triplet selection.\n"
      "Output directory defaults to $BATCHAL_OUT_DIR when --out is not given."};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--out", g.out, "Output directory")->envname("BATCHAL_OUT_DIR");
  app.add_option("--seed", g.seed, "Override seed (experiment seeds or synthetic seed)");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  SyntheticSpec spec;
  std::string nonlinearity = "tanh";
  std::size_t triplet_count = 6000;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--n", spec.n, "Object count")->capture_default_str();
  synth->add_option("--d", spec.d, "Feature dimension")->capture_default_str();
  synth->add_option("--latent", spec.latent_dim, "Latent dimension L (<= d)")->capture_default_str();
  synth->add_option("--noise", spec.noise, "Feature noise scale")->capture_default_str();
  synth->add_option("--nonlinearity", nonlinearity, "tanh | identity")->capture_default_str();
  synth->add_option("--triplets", triplet_count, "Ground-truth triplets to write")->capture_default_str();

  auto* run = app.add_subcommand("run", "Run an active-learning experiment");
  auto* compare = app.add_subcommand("compare", "Run and rank several strategies");

  std::size_t triplet = 0;
  std::size_t diag_rounds = 0;
  std::optional<std::size_t> samples;
  std::optional<double> dropout_p;
  auto* diagnose = app.add_subcommand("diagnose", "QQ and histogram data for one triplet's margins");
  diagnose->add_option("--triplet", triplet, "Pool triplet id")->required();
  diagnose->add_option("--rounds", diag_rounds, "Active-learning rounds to run first")->capture_default_str();
  diagnose->add_option("--samples", samples, "Dropout passes K (default: config)");
  diagnose->add_option("--dropout-p", dropout_p, "Dropout probability (default: config)");

  std::string host = "127.0.0.1";
  int port = 8787;
  std::string data_dir;
  std::string ui_dir;
  auto* serve = app.add_subcommand("serve", "HTTP annotation service");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--data-dir", data_dir, "Directory of dataset subdirectories");
  serve->add_option("--ui-dir", ui_dir, "Static UI bundle served under /ui");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(g, spec, nonlinearity, triplet_count);
    if (*run) return cmd_experiment(g, false);
    if (*compare) return cmd_experiment(g, true);
    if (*diagnose) return cmd_diagnose(g, triplet, diag_rounds, samples, dropout_p);
    if (*serve) return cmd_serve(g, host, port, data_dir, ui_dir);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == Errc::ConfigError ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
