#pragma once

// Command-line front end. `run` is callable in-process (tests) and from
// tools/cdcflow.cpp. Exit codes: 0 success, 1 configuration error, 2 any
// other failure.

#include "cdcflow/cli/config.hpp"
#include "cdcflow/cli/pipeline.hpp"
#include "cdcflow/cli/svg.hpp"
#include "cdcflow/core/error.hpp"
#include "cdcflow/core/parallel.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace cdcflow::cli {

inline void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline void require_file(const fs::path& p, const std::string& what, const std::string& hint) {
  if (!fs::exists(p)) throw ConfigError(what + " '" + p.string() + "' not found (" + hint + ")");
}

struct CommonOptions {
  std::optional<std::string> config;
  std::vector<std::string> overrides;
  std::optional<std::string> out;

  RunConfig resolve() const {
    auto sets = overrides;
    if (out) sets.push_back("out=" + json(*out).dump());
    return load_config(config, sets);
  }
};

inline void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--set", o.overrides, "Override a config field, key=value (dotted keys)")->allow_extra_args(false);
  cmd->add_option("--out", o.out, "Output directory (overrides config 'out')");
}

inline void echo_config(const RunConfig& cfg, std::ostream& log) {
  const OutputPaths paths{cfg.out};
  paths.create();
  write_json_file(to_json(cfg), paths.config().string());
  log << "resolved config written to " << paths.config().string() << '\n';
}

inline void print_warnings(const Warnings& w, std::ostream& err) {
  for (const auto& m : w) err << "warning: " << m << '\n';
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"cdcflow: geometry-aware flow matching toolkit"};
  app.require_subcommand(1);

  CommonOptions common;
  std::optional<std::string> cloud_path, gamma_path, model_path, samples_path, frontier_path;
  std::int64_t progress_every = 0;
  Index n_samples = 0;
  std::optional<std::uint64_t> sample_seed;
  bool untrained = false;
  std::string y_axis = "nll";

  auto* gen = app.add_subcommand("gen-data", "Generate (or load) the dataset; writes cloud.csv");
  auto* fit = app.add_subcommand("fit-gamma", "Estimate the Gamma field; writes gamma.bin");
  auto* trn = app.add_subcommand("train", "Train the velocity model; writes model_<epoch>.bin and loss.csv");
  auto* smp = app.add_subcommand("sample", "Sample a checkpoint; writes samples.csv and sample_stats.json");
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint; writes metrics.json and frontier.csv");
  auto* swp = app.add_subcommand("sweep", "Grid over the config's sweep lists; writes frontier.csv");
  auto* plt = app.add_subcommand("plot", "Scatter plot of samples against the data; writes plot.svg");
  auto* rep = app.add_subcommand("report", "Quality-vs-generalisation plot of a frontier CSV; writes frontier.svg");
  for (auto* c : {gen, fit, trn, smp, evl, swp, plt, rep}) add_common(c, common);
  for (auto* c : {fit, trn, evl, plt}) c->add_option("--cloud", cloud_path, "Point cloud CSV (default <out>/cloud.csv)");
  trn->add_option("--gamma", gamma_path, "Gamma store (default <out>/gamma.bin)");
  trn->add_option("--progress", progress_every, "Print the loss every N epochs (0: off)");
  swp->add_option("--progress", progress_every, "Print the loss every N epochs (0: off)");
  for (auto* c : {smp, evl}) c->add_option("--model", model_path, "Checkpoint (default: latest in <out>)");
  evl->add_flag("--untrained", untrained, "Evaluate a freshly initialised model instead of a checkpoint");
  smp->add_option("--n", n_samples, "Sample count (default from eval settings)");
  smp->add_option("--seed", sample_seed, "Sampling seed (default eval.seed)");
  plt->add_option("--samples", samples_path, "Samples CSV (default <out>/samples.csv)");
  rep->add_option("--frontier", frontier_path, "Frontier CSV (default <out>/frontier.csv)");
  rep->add_option("--y", y_axis, "Y axis: nll or memorised_pct");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    const RunConfig cfg = common.resolve();
    const OutputPaths paths{cfg.out};
    Warnings warnings;
    auto load_cloud = [&] {
      const fs::path p = cloud_path ? fs::path(*cloud_path) : paths.cloud();
      require_file(p, "point cloud", "run gen-data first or pass --cloud");
      PointCloud c = load_csv(p.string());
      c.validate();
      return c;
    };
    auto load_model = [&]() -> Checkpoint {
      std::optional<fs::path> p = model_path ? std::optional<fs::path>(*model_path) : paths.latest_model();
      if (!p) throw ConfigError("no checkpoint in '" + paths.dir.string() + "' (run train first or pass --model)");
      require_file(*p, "checkpoint", "pass --model");
      return load_checkpoint(p->string());
    };

    if (gen->parsed()) {
      echo_config(cfg, err);
      const PointCloud c = build_dataset(cfg.dataset, &warnings);
      save_csv(c, paths.cloud().string());
      out << "wrote " << paths.cloud().string() << " (" << c.size() << " points, d=" << c.dim() << ")\n";
    } else if (fit->parsed()) {
      echo_config(cfg, err);
      const PointCloud c = load_cloud();
      const auto g = fit_gamma(c.train_points(), cfg.gamma, &warnings, configured_threads());
      save_gamma(g.field, paths.gamma().string());
      out << "wrote " << paths.gamma().string() << " (N=" << g.field.n << ", d_cdc=" << g.field.rank << ")\n";
    } else if (trn->parsed()) {
      echo_config(cfg, err);
      const PointCloud c = load_cloud();
      const Matrix train_pts = c.train_points();
      std::optional<GammaField> gamma;
      if (cfg.flow.needs_gamma()) {
        const fs::path gp = gamma_path ? fs::path(*gamma_path) : paths.gamma();
        require_file(gp, "gamma store", "run fit-gamma first or pass --gamma");
        gamma = load_gamma(gp.string());
      }
      const auto source = build_source(cfg, &warnings);
      TrainHooks hooks;
      if (progress_every > 0)
        hooks.on_epoch = [&](std::int64_t e, double l) {
          if (e % progress_every == 0) err << "epoch " << e << " loss " << l << '\n';
        };
      hooks.on_checkpoint = [&](std::int64_t e, const VelocityModel& m) { save_checkpoint(m, paths.model(e).string(), e); };
      const auto result = train(train_pts, gamma ? &*gamma : nullptr, cfg.train_config(), hooks, source ? &*source : nullptr);
      write_loss(result.loss_trace, paths.loss());
      out << "trained " << cfg.epochs << " epochs, final loss " << format_double(result.loss_trace.back()) << '\n';
    } else if (smp->parsed()) {
      echo_config(cfg, err);
      const Checkpoint ck = load_model();
      const Index n = n_samples > 0 ? n_samples : EvalConfig{cfg.eval.cutoff, cfg.eval.n_samples}.resolved_samples(1);
      const std::uint64_t seed = sample_seed.value_or(cfg.eval.seed);
      const auto s = sample(ck.model, n, cfg.solver, seed);
      save_csv(s.cloud, paths.samples().string());
      write_stats(s.stats, n, seed, paths.sample_stats());
      out << "wrote " << paths.samples().string() << " (" << n << " samples, nfe " << s.stats.nfe << ")\n";
    } else if (evl->parsed()) {
      echo_config(cfg, err);
      const PointCloud c = load_cloud();
      Checkpoint ck;
      if (untrained) {
        ck.model = VelocityModel::create({c.dim(), cfg.hidden_layers, cfg.width}, cfg.seed);
        ck.epoch = 0;
      } else {
        ck = load_model();
      }
      EvalConfig ec;
      ec.cutoff = cfg.eval.cutoff;
      ec.n_samples = cfg.eval.n_samples;
      ec.seed = cfg.eval.seed;
      ec.epoch = ck.epoch;
      ec.compute_nll = cfg.eval.nll;
      ec.threads = configured_threads();
      const auto ev = evaluate(ck.model, c.train_points(), c.test_points(), manifold_for(cfg, c), cfg.solver, ec);
      write_json_file(ev.report.to_json(), paths.metrics().string());
      write_frontier({frontier_row(cfg, ev.report)}, paths.frontier());
      out << ev.report.to_json().dump() << '\n';
    } else if (swp->parsed()) {
      std::ostream* progress = progress_every > 0 ? &err : nullptr;
      const auto s = run_sweep(cfg, configured_threads(), true, progress);
      out << "wrote " << paths.frontier().string() << " (" << s.rows.size() << " rows from " << s.runs.size() << " runs)\n";
    } else if (plt->parsed()) {
      echo_config(cfg, err);
      const PointCloud c = load_cloud();
      const fs::path sp = samples_path ? fs::path(*samples_path) : paths.samples();
      require_file(sp, "samples", "run sample first or pass --samples");
      const PointCloud s = load_csv(sp.string());
      if (s.dim() != c.dim()) throw ConfigError("samples and cloud dimensions differ");
      std::vector<svg::Layer> layers{{"samples", s.points, "#1f77b4", 1.2, 0.35},
                                     {"train", c.train_points(), "#d62728", 3.5, 1.0}};
      if (!c.indices(Split::test).empty()) layers.push_back({"test", c.test_points(), "#2ca02c", 2.0, 0.8});
      write_text(svg::scatter(layers, method_label(cfg)), paths.plot());
      out << "wrote " << paths.plot().string() << '\n';
    } else if (rep->parsed()) {
      const fs::path fp = frontier_path ? fs::path(*frontier_path) : paths.frontier();
      const auto points = read_frontier(fp.string());
      paths.create();
      write_text(svg::frontier(points, y_axis), paths.report());
      out << "wrote " << paths.report().string() << '\n';
    }
    print_warnings(warnings, err);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace cdcflow::cli
