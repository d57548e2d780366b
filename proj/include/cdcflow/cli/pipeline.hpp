#pragma once

// Pipeline stages shared by the CLI subcommands and the sweep driver.

#include "cdcflow/cli/config.hpp"
#include "cdcflow/core/parallel.hpp"
#include "cdcflow/dataio.hpp"
#include "cdcflow/geometry.hpp"
#include "cdcflow/metrics.hpp"
#include "cdcflow/mlp.hpp"
#include "cdcflow/ode.hpp"
#include "cdcflow/train.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cdcflow::cli {

namespace fs = std::filesystem;

struct OutputPaths {
  fs::path dir;

  fs::path cloud() const { return dir / "cloud.csv"; }
  fs::path source() const { return dir / "source.csv"; }
  fs::path gamma() const { return dir / "gamma.bin"; }
  fs::path model(std::int64_t epoch) const { return dir / ("model_" + std::to_string(epoch) + ".bin"); }
  fs::path loss() const { return dir / "loss.csv"; }
  fs::path samples() const { return dir / "samples.csv"; }
  fs::path sample_stats() const { return dir / "sample_stats.json"; }
  fs::path metrics() const { return dir / "metrics.json"; }
  fs::path frontier() const { return dir / "frontier.csv"; }
  fs::path plot() const { return dir / "plot.svg"; }
  fs::path report() const { return dir / "frontier.svg"; }
  fs::path config() const { return dir / "config.json"; }

  void create() const { fs::create_directories(dir); }

  /// Checkpoint with the highest epoch in the directory.
  std::optional<fs::path> latest_model() const {
    std::optional<fs::path> best;
    std::int64_t best_epoch = -1;
    if (!fs::exists(dir)) return best;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("model_", 0) != 0 || e.path().extension() != ".bin") continue;
      const std::string digits = name.substr(6, name.size() - 6 - 4);
      std::int64_t epoch = 0;
      const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), epoch);
      if (res.ec != std::errc() || res.ptr != digits.data() + digits.size()) continue;
      if (epoch > best_epoch) {
        best_epoch = epoch;
        best = e.path();
      }
    }
    return best;
  }
};

inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

/// Generates the dataset, or loads it for kind == file (re-split when
/// n_train > 0).
inline PointCloud build_dataset(const DatasetSpec& spec, Warnings* warnings = nullptr) {
  if (spec.kind != DatasetKind::file) return generate(spec);
  spec.validate();
  PointCloud c = load_csv(spec.path);
  c.validate();
  if (spec.n_train > 0) c = split(std::move(c), spec.n_train, spec.seed, warnings);
  return c;
}

inline Manifold manifold_for(const RunConfig& cfg, const PointCloud& cloud) {
  if (cfg.eval.manifold == "none") return {};
  if (cfg.eval.manifold == "reference") return Manifold::cloud(cloud.points);
  switch (cfg.dataset.kind) {
    case DatasetKind::circle:
    case DatasetKind::two_circles: return Manifold::circles(cfg.dataset.radii);
    case DatasetKind::torus: return Manifold::torus(cfg.dataset.dim);
    default: return {};
  }
}

inline std::string method_label(const RunConfig& cfg) {
  std::string s(to_string(cfg.flow.kind));
  if (cfg.flow.kind == FlowKind::fm) {
    s += " sigma_min=" + format_double(cfg.flow.sigma_min);
  } else {
    s += " gamma=" + format_double(cfg.gamma.gamma_scale) + " d_cdc=" + std::to_string(cfg.gamma.d_cdc);
  }
  if (cfg.flow.pairing == Pairing::ot_minibatch) s += " ot";
  s += " n=" + std::to_string(cfg.dataset.n_train);
  return s;
}

struct FrontierRow {
  std::string method;
  std::int64_t epoch = 0;
  std::optional<double> quality;
  std::optional<double> nll;
  double memorised_pct = 0.0;
  std::string kind;
  double gamma_scale = 0.0;
  Index d_cdc = 0;
  double sigma_min = 0.0;
  Index n_train = 0;
  std::optional<double> dtm_mean;
  std::optional<double> dtm_median;
  std::optional<double> coverage;
  std::int64_t nfe = 0;
};

inline FrontierRow frontier_row(const RunConfig& cfg, const MetricsReport& r) {
  FrontierRow row;
  row.method = method_label(cfg);
  row.epoch = r.epoch;
  row.quality = r.dtm_mean ? r.dtm_mean : r.coverage;
  row.nll = r.nll_mean;
  row.memorised_pct = r.memorised_pct;
  row.kind = std::string(to_string(cfg.flow.kind));
  row.gamma_scale = cfg.gamma.gamma_scale;
  row.d_cdc = cfg.gamma.d_cdc;
  row.sigma_min = cfg.flow.sigma_min;
  row.n_train = cfg.dataset.n_train;
  row.dtm_mean = r.dtm_mean;
  row.dtm_median = r.dtm_median;
  row.coverage = r.coverage;
  row.nfe = r.nfe;
  return row;
}

inline constexpr const char* kFrontierHeader =
    "method,epoch,quality,nll,memorised_pct,kind,gamma_scale,d_cdc,sigma_min,n_train,dtm_mean,dtm_median,coverage,nfe";

inline void write_frontier(const std::vector<FrontierRow>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  out << kFrontierHeader << '\n';
  for (const auto& r : rows) {
    out << r.method << ',' << r.epoch << ',' << opt(r.quality) << ',' << opt(r.nll) << ',' << format_double(r.memorised_pct)
        << ',' << r.kind << ',' << format_double(r.gamma_scale) << ',' << r.d_cdc << ',' << format_double(r.sigma_min) << ','
        << r.n_train << ',' << opt(r.dtm_mean) << ',' << opt(r.dtm_median) << ',' << opt(r.coverage) << ',' << r.nfe << '\n';
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

/// Minimal frontier reader for plotting: needs method, epoch, quality, nll,
/// memorised_pct columns (any order, extra columns ignored).
struct FrontierPoint {
  std::string method;
  std::int64_t epoch = 0;
  std::optional<double> quality, nll;
  double memorised_pct = 0.0;
};

inline std::vector<FrontierPoint> parse_frontier(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  auto split_line = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!l.empty() && l.back() == ',') f.emplace_back();
    for (auto& c : f)
      if (!c.empty() && c.back() == '\r') c.pop_back();
    return f;
  };
  if (!std::getline(in, line) || line.empty()) throw ConfigError("frontier CSV '" + source + "' is empty");
  ++line_no;
  const auto header = split_line(line);
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("frontier CSV '" + source + "' lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cm = col("method"), ce = col("epoch"), cq = col("quality"), cn = col("nll"), cp = col("memorised_pct");
  auto number = [&](const std::string& cell) -> std::optional<double> {
    if (cell.empty()) return std::nullopt;
    double x = 0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), x);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
      throw ConfigError("frontier CSV '" + source + "' line " + std::to_string(line_no) + ": bad number '" + cell + "'");
    return x;
  };
  std::vector<FrontierPoint> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_line(line);
    if (f.size() != header.size())
      throw ConfigError("frontier CSV '" + source + "' line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields");
    FrontierPoint p;
    p.method = f[cm];
    const auto e = number(f[ce]);
    const auto m = number(f[cp]);
    if (!e || !m) throw ConfigError("frontier CSV '" + source + "' line " + std::to_string(line_no) + ": missing epoch or memorised_pct");
    p.epoch = static_cast<std::int64_t>(*e);
    p.memorised_pct = *m;
    p.quality = number(f[cq]);
    p.nll = number(f[cn]);
    out.push_back(std::move(p));
  }
  if (out.empty()) throw ConfigError("frontier CSV '" + source + "' has no rows");
  return out;
}

inline std::vector<FrontierPoint> read_frontier(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open frontier CSV '" + path + "'");
  return parse_frontier(in, path);
}

inline void write_loss(const std::vector<double>& loss, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < loss.size(); ++e) out << (e + 1) << ',' << format_double(loss[e]) << '\n';
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline void write_stats(const TrajectoryStats& s, Index n, std::uint64_t seed, const fs::path& path) {
  json j;
  j["n"] = n;
  j["seed"] = seed;
  j["nfe"] = s.nfe;
  j["accepted"] = s.accepted;
  j["rejected"] = s.rejected;
  j["final_time"] = s.final_time;
  write_json_file(j, path.string());
}

inline std::optional<SourceSet> build_source(const RunConfig& cfg, Warnings* warnings) {
  if (!cfg.flow.needs_source()) return std::nullopt;
  const PointCloud src = build_dataset(*cfg.source, warnings);
  SourceSet s;
  s.points = src.train_points();
  s.gamma = fit_gamma(s.points, cfg.gamma, warnings).field;
  return s;
}

struct RunOutcome {
  PointCloud cloud;
  std::optional<GammaField> gamma;
  std::vector<double> loss;
  std::vector<MetricsReport> reports;
  std::vector<FrontierRow> rows;
};

struct RunOptions {
  /// Epochs at which to evaluate (empty: final epoch only).
  std::vector<std::int64_t> eval_epochs;
  bool write_artifacts = true;
  /// Progress lines to this stream every `progress_every` epochs.
  std::ostream* progress = nullptr;
  std::int64_t progress_every = 1000;
  Warnings* warnings = nullptr;
};

/// Data -> Gamma -> train -> evaluate at the requested epochs.
inline RunOutcome run_pipeline(RunConfig cfg, const RunOptions& opt = {}) {
  std::vector<std::int64_t> eval_epochs = opt.eval_epochs;
  if (eval_epochs.empty()) eval_epochs.push_back(cfg.epochs);
  std::sort(eval_epochs.begin(), eval_epochs.end());
  eval_epochs.erase(std::unique(eval_epochs.begin(), eval_epochs.end()), eval_epochs.end());
  cfg.epochs = std::max(cfg.epochs, eval_epochs.back());
  cfg.validate();

  const OutputPaths paths{cfg.out};
  if (opt.write_artifacts) {
    paths.create();
    write_json_file(to_json(cfg), paths.config().string());
  }

  RunOutcome out;
  out.cloud = build_dataset(cfg.dataset, opt.warnings);
  const Matrix train_pts = out.cloud.train_points();
  const Matrix test = out.cloud.test_points();
  if (opt.write_artifacts) save_csv(out.cloud, paths.cloud().string());
  if (cfg.flow.needs_gamma()) {
    out.gamma = fit_gamma(train_pts, cfg.gamma, opt.warnings).field;
    if (opt.write_artifacts) save_gamma(*out.gamma, paths.gamma().string());
  }
  const auto source = build_source(cfg, opt.warnings);
  const Manifold manifold = manifold_for(cfg, out.cloud);

  TrainHooks hooks;
  const std::string label = method_label(cfg);
  if (opt.progress) {
    hooks.on_epoch = [&](std::int64_t epoch, double loss) {
      if (epoch % opt.progress_every == 0) *opt.progress << "[" << label << "] epoch " << epoch << " loss " << loss << '\n';
    };
  }
  std::size_t next = 0;
  hooks.on_checkpoint = [&](std::int64_t epoch, const VelocityModel& model) {
    if (cfg.checkpoint_every > 0 && opt.write_artifacts && epoch % cfg.checkpoint_every == 0)
      save_checkpoint(model, paths.model(epoch).string(), epoch);
    while (next < eval_epochs.size() && eval_epochs[next] == epoch) {
      EvalConfig ec;
      ec.cutoff = cfg.eval.cutoff;
      ec.n_samples = cfg.eval.n_samples;
      ec.seed = cfg.eval.seed;
      ec.epoch = epoch;
      ec.compute_nll = cfg.eval.nll;
      auto ev = evaluate(model, train_pts, test, manifold, cfg.solver, ec);
      if (opt.write_artifacts) {
        save_checkpoint(model, paths.model(epoch).string(), epoch);
        if (epoch == eval_epochs.back()) {
          save_points_csv(ev.samples, paths.samples().string());
          write_json_file(ev.report.to_json(), paths.metrics().string());
        }
      }
      out.rows.push_back(frontier_row(cfg, ev.report));
      out.reports.push_back(ev.report);
      ++next;
    }
  };

  // Fire the hook at every evaluation epoch, not only at checkpoint_every.
  TrainConfig tc = cfg.train_config();
  TrainHooks wrapped = hooks;
  wrapped.on_checkpoint = [&](std::int64_t epoch, const VelocityModel& model) {
    const bool periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
    const bool wanted = std::binary_search(eval_epochs.begin(), eval_epochs.end(), epoch);
    if (periodic || wanted) hooks.on_checkpoint(epoch, model);
  };
  tc.checkpoint_every = 1;
  auto result = train(train_pts, out.gamma ? &*out.gamma : nullptr, tc, wrapped, source ? &*source : nullptr);
  out.loss = std::move(result.loss_trace);
  if (opt.write_artifacts) {
    write_loss(out.loss, paths.loss());
    write_frontier(out.rows, paths.frontier());
  }
  return out;
}

/// Expands the sweep grid (n_train, kind, d_cdc, gamma_scale, sigma_min; outer
/// to inner). Epochs are evaluation points within each run.
inline std::vector<RunConfig> expand_sweep(const RunConfig& base) {
  std::vector<RunConfig> runs{base};
  auto axis = [&runs](const auto& values, auto apply) {
    if (values.empty()) return;
    std::vector<RunConfig> next;
    for (const auto& r : runs)
      for (const auto& v : values) {
        RunConfig c = r;
        apply(c, v);
        next.push_back(std::move(c));
      }
    runs = std::move(next);
  };
  axis(base.sweep.n_train, [](RunConfig& c, Index n) { c.dataset.n_train = n; });
  axis(base.sweep.kind, [](RunConfig& c, const std::string& k) { c.flow.kind = flow_kind_from_string(k); });
  axis(base.sweep.d_cdc, [](RunConfig& c, Index d) { c.gamma.d_cdc = d; });
  axis(base.sweep.gamma_scale, [](RunConfig& c, double g) { c.gamma.gamma_scale = g; });
  axis(base.sweep.sigma_min, [](RunConfig& c, double s) { c.flow.sigma_min = s; });
  for (std::size_t i = 0; i < runs.size(); ++i) {
    runs[i].out = (fs::path(base.out) / "runs" / std::to_string(i)).string();
    runs[i].sweep = SweepGrid{};
  }
  return runs;
}

struct SweepOutcome {
  std::vector<RunConfig> runs;
  std::vector<FrontierRow> rows;
};

/// Runs the grid with up to `threads` concurrent runs (each single-threaded,
/// isolated output directory) and writes the combined frontier.csv.
inline SweepOutcome run_sweep(const RunConfig& base, unsigned threads, bool write_artifacts = true,
                              std::ostream* progress = nullptr) {
  SweepOutcome out;
  out.runs = expand_sweep(base);
  std::vector<std::vector<FrontierRow>> rows(out.runs.size());
  std::vector<std::exception_ptr> failures(out.runs.size());
  parallel_for(out.runs.size(), threads, [&](std::size_t i) {
    try {
      RunOptions opt;
      opt.eval_epochs = base.sweep.epochs;
      opt.write_artifacts = write_artifacts;
      opt.progress = threads == 1 ? progress : nullptr;
      rows[i] = run_pipeline(out.runs[i], opt).rows;
    } catch (...) {
      failures[i] = std::current_exception();
    }
  });
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
  for (auto& r : rows) out.rows.insert(out.rows.end(), r.begin(), r.end());
  if (write_artifacts) {
    const OutputPaths paths{base.out};
    paths.create();
    write_json_file(to_json(base), paths.config().string());
    write_frontier(out.rows, paths.frontier());
  }
  return out;
}

}  // namespace cdcflow::cli
