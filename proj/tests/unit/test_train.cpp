#include "cdcflow/dataio.hpp"
#include "cdcflow/geometry.hpp"
#include "cdcflow/train.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cdcflow;

namespace {

Matrix circle8() {
  DatasetSpec s;
  s.n_train = 8;
  return generate(s).points;
}

TrainConfig small_config(FlowKind kind, std::int64_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.hidden_layers = 2;
  c.width = 32;
  c.seed = 3;
  c.flow.kind = kind;
  return c;
}

}  // namespace

TEST(Train, FmLossDecreasesAndStaysFinite) {
  const auto r = train(circle8(), nullptr, small_config(FlowKind::fm, 200));
  ASSERT_EQ(r.loss_trace.size(), 200u);
  for (double l : r.loss_trace) EXPECT_TRUE(std::isfinite(l));
  auto mean = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t i = a; i < b; ++i) s += r.loss_trace[i];
    return s / static_cast<double>(b - a);
  };
  EXPECT_LT(mean(180, 200), mean(0, 20));
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
}

TEST(Train, ZeroGammaCdcMatchesFmBitForBit) {
  const Matrix x = circle8();
  GammaConfig g;
  g.k = 3;
  g.k_bw = 8;
  g.gamma_scale = 0.0;
  const auto field = fit_gamma(x, g).field;
  const auto fm = train(x, nullptr, small_config(FlowKind::fm, 20));
  const auto cdc = train(x, &field, small_config(FlowKind::cdc, 20));
  EXPECT_EQ(fm.loss_trace, cdc.loss_trace);
  EXPECT_TRUE(fm.model == cdc.model);
}

TEST(Train, SeedDeterminism) {
  const Matrix x = circle8();
  const auto a = train(x, nullptr, small_config(FlowKind::fm, 15));
  const auto b = train(x, nullptr, small_config(FlowKind::fm, 15));
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_EQ(a.model.parameters(), b.model.parameters());
}

TEST(Train, CheckpointHookFiresOnSchedule) {
  auto cfg = small_config(FlowKind::fm, 10);
  cfg.checkpoint_every = 4;
  std::vector<std::int64_t> seen;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](std::int64_t e, const VelocityModel&) { seen.push_back(e); };
  train(circle8(), nullptr, cfg, hooks);
  EXPECT_EQ(seen, (std::vector<std::int64_t>{4, 8, 10}));
}

TEST(Train, AllKindsRun) {
  const Matrix x = circle8();
  GammaConfig g;
  g.k = 3;
  g.k_bw = 8;
  g.gamma_scale = 0.3;
  const auto field = fit_gamma(x, g).field;
  SourceSet src{x, field};
  for (auto kind : {FlowKind::cdc, FlowKind::two_sided, FlowKind::augmented}) {
    auto cfg = small_config(kind, 3);
    cfg.flow.pairing = Pairing::ot_minibatch;
    const auto r = train(x, &field, cfg, {}, &src);
    EXPECT_EQ(r.loss_trace.size(), 3u);
  }
}

TEST(Train, MissingGammaIsConfigError) {
  EXPECT_THROW(train(circle8(), nullptr, small_config(FlowKind::cdc, 1)), ConfigError);
  auto bad = small_config(FlowKind::fm, 1);
  bad.learning_rate = 0;
  EXPECT_THROW(train(circle8(), nullptr, bad), ConfigError);
}

TEST(Train, DivergenceAbortsNamingEpoch) {
  auto cfg = small_config(FlowKind::fm, 50);
  cfg.learning_rate = 1e300;
  try {
    train(circle8(), nullptr, cfg);
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}
