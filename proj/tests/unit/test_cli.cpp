#include "cdcflow/cli/app.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cdcflow;
using namespace cdcflow::cli;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cdcflow_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Invocation {
  int code;
  std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "cdcflow");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small, fast circle configuration.
std::vector<std::string> tiny(const fs::path& dir) {
  return {"--out", dir.string(), "--set", "model.hidden_layers=2", "--set", "model.width=16",
          "--set", "train.epochs=20", "--set", "train.batch_size=8", "--set", "eval.n_samples=200"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c = resolve_config(json::object());
  EXPECT_EQ(to_json(from_json(to_json(c))).dump(), to_json(c).dump());
  EXPECT_EQ(c.epochs, 1000);
  EXPECT_EQ(c.batch_size, 256);
  EXPECT_FALSE(c.source.has_value());
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
  EXPECT_THROW(resolve_config(json{{"bogus", 1}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"gamma", {{"kk", 3}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"train", {{"epochs", "many"}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"flow", {{"kind", "wiggle"}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"flow", {{"kind", "two_sided"}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json::object(), {"gamma.k"}), ConfigError);
}

TEST(Config, Overrides) {
  const RunConfig c = resolve_config(json{{"gamma", {{"k", 5}}}}, {"gamma.d_cdc=2", "flow.kind=cdc", "dataset.radii=[1,2]",
                                                                   "dataset.kind=\"two_circles\""});
  EXPECT_EQ(c.gamma.k, 5);
  EXPECT_EQ(c.gamma.d_cdc, 2);
  EXPECT_EQ(c.flow.kind, FlowKind::cdc);
  EXPECT_EQ(c.dataset.radii, (std::vector<double>{1, 2}));
  EXPECT_EQ(c.dataset.kind, DatasetKind::two_circles);
  const RunConfig s = resolve_config(json::object(), {"source={\"kind\":\"gaussian\",\"dim\":2}", "flow.kind=two_sided"});
  ASSERT_TRUE(s.source);
  EXPECT_EQ(s.source->kind, DatasetKind::gaussian);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"nonsense"}).code, 1);
  EXPECT_EQ(invoke({"train", "--bogus"}).code, 1);
  const auto dir = scratch("codes");
  EXPECT_EQ(invoke({"gen-data", "--out", dir.string(), "--set", "train.epochs=0"}).code, 1);
  EXPECT_EQ(invoke({"gen-data", "--config", (dir / "missing.json").string()}).code, 1);
  // Missing prerequisite artifacts are configuration errors.
  const auto r = invoke({"train", "--out", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("gen-data"), std::string::npos);
  // A corrupt cloud file is a data error.
  std::ofstream(dir / "cloud.csv") << "x0,x1,split\n1,2\n";
  EXPECT_EQ(invoke({"fit-gamma", "--out", dir.string()}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, StagedPipelineOnCircle) {
  const auto dir = scratch("staged");
  const auto common = cat(tiny(dir), {"--set", "flow.kind=\"cdc\"", "--set", "gamma.k=3", "--set", "gamma.k_bw=8",
                                      "--set", "gamma.d_cdc=1", "--set", "gamma.gamma_scale=0.3"});
  auto r = invoke(cat({"gen-data"}, common));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  const json echoed = read_json_file((dir / "config.json").string());
  EXPECT_EQ(echoed["gamma"]["gamma_scale"].get<double>(), 0.3);
  EXPECT_EQ(echoed["flow"]["kind"], "cdc");
  const PointCloud cloud = load_csv((dir / "cloud.csv").string());
  EXPECT_EQ(cloud.indices(Split::train).size(), 8u);

  r = invoke(cat({"fit-gamma"}, common));
  ASSERT_EQ(r.code, 0) << r.err;
  // k_bw = 8 exceeds N - 1 = 7.
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  const GammaField g = load_gamma((dir / "gamma.bin").string());
  EXPECT_EQ(g.n, 8);
  EXPECT_EQ(g.rank, 1);

  r = invoke(cat({"train", "--progress", "10"}, common));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "model_20.bin"));
  EXPECT_NE(r.err.find("epoch 10"), std::string::npos);

  r = invoke(cat({"sample", "--n", "50", "--seed", "4"}, common));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_csv((dir / "samples.csv").string()).size(), 50);
  const std::string first = slurp(dir / "samples.csv");
  ASSERT_EQ(invoke(cat({"sample", "--n", "50", "--seed", "4"}, common)).code, 0);
  EXPECT_EQ(slurp(dir / "samples.csv"), first);

  r = invoke(cat({"eval"}, common));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = MetricsReport::from_json(read_json_file((dir / "metrics.json").string()));
  EXPECT_EQ(m.epoch, 20);
  EXPECT_EQ(m.n_samples, 200);
  EXPECT_TRUE(m.dtm_median.has_value());

  r = invoke(cat({"plot"}, common));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(dir / "plot.svg").find("<svg"), std::string::npos);
}

TEST(Cli, EvalUntrained) {
  const auto dir = scratch("untrained");
  ASSERT_EQ(invoke(cat({"gen-data"}, tiny(dir))).code, 0);
  const auto r = invoke(cat({"eval", "--untrained"}, tiny(dir)));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = MetricsReport::from_json(read_json_file((dir / "metrics.json").string()));
  EXPECT_EQ(m.epoch, 0);
  EXPECT_LT(m.memorised_pct, 10.0);
}

TEST(Cli, SweepZeroGammaMatchesFm) {
  const auto dir = scratch("sweep");
  auto r = invoke(cat({"sweep"}, cat(tiny(dir), {"--set", "flow.kind=\"cdc\"", "--set", "sweep.gamma_scale=[0.0,0.3]",
                                                "--set", "sweep.epochs=[10,20]", "--set", "eval.nll=false"})));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cdc = read_frontier((dir / "frontier.csv").string());
  ASSERT_EQ(cdc.size(), 4u);
  const auto fm_dir = scratch("sweep_fm");
  r = invoke(cat({"sweep"}, cat(tiny(fm_dir), {"--set", "flow.kind=\"fm\"", "--set", "sweep.epochs=[10,20]",
                                              "--set", "eval.nll=false"})));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto fm = read_frontier((fm_dir / "frontier.csv").string());
  ASSERT_EQ(fm.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(cdc[i].epoch, fm[i].epoch);
    EXPECT_EQ(cdc[i].memorised_pct, fm[i].memorised_pct);
    EXPECT_EQ(cdc[i].quality, fm[i].quality);
  }
  // gamma = 0.3 differs from the FM rows.
  EXPECT_NE(cdc[3].quality, fm[1].quality);
}

TEST(Cli, ReportPolylines) {
  const auto dir = scratch("report");
  {
    std::ofstream f(dir / "frontier.csv");
    f << kFrontierHeader << '\n';
    f << "fm,100,0.10,1.5,80,fm,0,1,0,8,0.10,0.05,,10\n";
    f << "fm,200,0.05,1.2,90,fm,0,1,0,8,0.05,0.02,,10\n";
    f << "cdc gamma=0.3,200,0.06,0.9,20,cdc,0.3,1,0,8,0.06,0.03,,10\n";
    f << "cdc gamma=0.3,100,0.12,1.1,10,cdc,0.3,1,0,8,0.12,0.06,,10\n";
  }
  ASSERT_EQ(invoke({"report", "--out", dir.string()}).code, 0);
  const std::string svg1 = slurp(dir / "frontier.svg");
  std::size_t lines = 0;
  for (auto p = svg1.find("<polyline"); p != std::string::npos; p = svg1.find("<polyline", p + 1)) ++lines;
  EXPECT_EQ(lines, 2u);
  EXPECT_NE(svg1.find(">fm</text>"), std::string::npos);
  EXPECT_NE(svg1.find(">cdc gamma=0.3</text>"), std::string::npos);
  ASSERT_EQ(invoke({"report", "--out", dir.string()}).code, 0);
  EXPECT_EQ(slurp(dir / "frontier.svg"), svg1);
  ASSERT_EQ(invoke({"report", "--out", dir.string(), "--y", "memorised_pct"}).code, 0);
  EXPECT_EQ(invoke({"report", "--out", dir.string(), "--y", "loss"}).code, 1);

  std::ofstream(dir / "empty.csv") << "";
  EXPECT_EQ(invoke({"report", "--out", dir.string(), "--frontier", (dir / "empty.csv").string()}).code, 1);
  std::ofstream(dir / "bad.csv") << kFrontierHeader << "\nfm,abc\n";
  EXPECT_EQ(invoke({"report", "--out", dir.string(), "--frontier", (dir / "bad.csv").string()}).code, 1);
}

TEST(Cli, FrontierRoundTrip) {
  const auto dir = scratch("frontier_rt");
  RunConfig c = resolve_config(json::object());
  MetricsReport r;
  r.epoch = 7;
  r.memorised_pct = 1.0 / 3.0;
  r.dtm_mean = 0.1;
  r.nll_mean = -2.5;
  write_frontier({frontier_row(c, r)}, dir / "f.csv");
  const auto pts = read_frontier((dir / "f.csv").string());
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].memorised_pct, 1.0 / 3.0);
  EXPECT_EQ(*pts[0].nll, -2.5);
  EXPECT_EQ(*pts[0].quality, 0.1);
}
