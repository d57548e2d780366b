#pragma once

// Simulation-free training of the velocity field: sample (t, x_t, target
// velocity) from the conditional path of the chosen flow kind, regress the
// MLP onto it with Adam.

#include "cdcflow/core/error.hpp"
#include "cdcflow/core/random.hpp"
#include "cdcflow/core/types.hpp"
#include "cdcflow/flowpath.hpp"
#include "cdcflow/geometry.hpp"
#include "cdcflow/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

namespace cdcflow {

struct TrainConfig {
  std::int64_t epochs = 1000;
  Index batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  /// Checkpoint hook period in epochs; 0 disables it.
  std::int64_t checkpoint_every = 0;
  FlowConfig flow;
  Index hidden_layers = 4;
  Index width = 512;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    flow.validate();
  }
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(VelocityModel& model, const ParamVector& grad) {
    if (m_.size() == 0) {
      m_ = ParamVector::Zero(grad.size());
      v_ = ParamVector::Zero(grad.size());
    }
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    Index o = 0;
    auto update = [&](double* data, Index n) {
      Eigen::Map<Vector> p(data, n);
      p.array() -= lr_ * (m_.segment(o, n).array() / c1) / ((v_.segment(o, n).array() / c2).sqrt() + eps_);
      o += n;
    };
    for (auto& layer : model.layers()) {
      update(layer.weight.data(), layer.weight.size());
      update(layer.bias.data(), layer.bias.size());
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  ParamVector m_, v_;
};

/// Source side of a two-sided flow: points x0 and their Gamma field.
struct SourceSet {
  Matrix points;
  GammaField gamma;
};

/// One regression minibatch.
struct TrainingBatch {
  Matrix x_t;     // d x B
  Vector t;       // B
  Matrix target;  // d x B
};

/// Draws the regression batch for the given target columns. All randomness
/// comes from `rng`, in a fixed order (times, noise, then kind-specific draws)
/// so that flow kinds which coincide mathematically also coincide bitwise.
inline TrainingBatch make_batch(const FlowConfig& flow, const Matrix& targets, const std::vector<Index>& cols,
                                const GammaField* gamma, const SourceSet* source, Engine& rng) {
  const Index d = targets.rows(), batch = static_cast<Index>(cols.size());
  TrainingBatch out{Matrix(d, batch), Vector(batch), Matrix(d, batch)};
  for (Index b = 0; b < batch; ++b) out.t(b) = uniform01(rng);
  Matrix noise = standard_normal(rng, d, batch);
  Matrix aux;
  if (flow.kind == FlowKind::augmented) aux = standard_normal(rng, d, batch);
  std::vector<Index> source_idx;
  if (flow.kind == FlowKind::two_sided) {
    std::uniform_int_distribution<Index> pick(0, source->points.cols() - 1);
    for (Index b = 0; b < batch; ++b) source_idx.push_back(pick(rng));
  }

  Matrix x1(d, batch);
  for (Index b = 0; b < batch; ++b) x1.col(b) = targets.col(cols[static_cast<std::size_t>(b)]);

  if (flow.pairing == Pairing::ot_minibatch) {
    if (flow.kind == FlowKind::two_sided) {
      Matrix x0(d, batch);
      for (Index b = 0; b < batch; ++b) x0.col(b) = source->points.col(source_idx[static_cast<std::size_t>(b)]);
      const auto perm = pair_minibatch(x0, x1);
      std::vector<Index> paired(source_idx.size());
      for (std::size_t i = 0; i < perm.size(); ++i) paired[static_cast<std::size_t>(perm[i])] = source_idx[i];
      source_idx = std::move(paired);
    } else {
      const auto perm = pair_minibatch(noise, x1);
      Matrix paired(d, batch);
      for (Index i = 0; i < batch; ++i) paired.col(perm[static_cast<std::size_t>(i)]) = noise.col(i);
      noise = std::move(paired);
    }
  }

  for (Index b = 0; b < batch; ++b) {
    PathInputs in;
    in.x1 = x1.col(b);
    in.noise = noise.col(b);
    if (flow.needs_gamma()) in.gamma1 = LocalGamma::from_field(*gamma, cols[static_cast<std::size_t>(b)]);
    if (flow.kind == FlowKind::augmented) in.aux_noise = aux.col(b);
    if (flow.kind == FlowKind::two_sided) {
      const Index s = source_idx[static_cast<std::size_t>(b)];
      in.x0 = source->points.col(s);
      in.gamma0 = LocalGamma::from_field(source->gamma, s);
    }
    const auto sample = sample_path_point(flow, in, out.t(b));
    out.x_t.col(b) = sample.x_t;
    out.target.col(b) = sample.velocity;
  }
  return out;
}

struct TrainHooks {
  /// Called after every epoch with the epoch number (1-based) and mean loss.
  std::function<void(std::int64_t, double)> on_epoch;
  /// Called every checkpoint_every epochs and after the final epoch.
  std::function<void(std::int64_t, const VelocityModel&)> on_checkpoint;
};

struct TrainResult {
  VelocityModel model;
  /// Mean regression loss per epoch.
  std::vector<double> loss_trace;
};

/// Each epoch visits every training point once in a seeded random order,
/// in minibatches of at most batch_size; every visit draws a fresh (t, noise).
/// Deterministic in cfg.seed.
inline TrainResult train(const Matrix& targets, const GammaField* gamma, const TrainConfig& cfg, const TrainHooks& hooks = {},
                         const SourceSet* source = nullptr) {
  cfg.validate();
  const Index n = targets.cols(), d = targets.rows();
  if (n < 1) throw ConfigError("training set is empty");
  if (!targets.allFinite()) throw ConfigError("training points must be finite");
  if (cfg.flow.needs_gamma()) {
    if (!gamma) throw ConfigError("flow kind '" + std::string(to_string(cfg.flow.kind)) + "' needs a gamma field");
    if (gamma->n != n || gamma->dim != d) throw ConfigError("gamma field does not match the training set");
  }
  if (cfg.flow.needs_source()) {
    if (!source) throw ConfigError("flow kind 'two_sided' needs a source set");
    if (source->points.rows() != d || source->points.cols() < 1 || source->gamma.n != source->points.cols())
      throw ConfigError("source set does not match the training set");
  }

  TrainResult result;
  result.model = VelocityModel::create({d, cfg.hidden_layers, cfg.width}, cfg.seed);
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.epochs));
  Adam adam(cfg.learning_rate);
  ParamVector grad;
  std::vector<Index> order(static_cast<std::size_t>(n));

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    auto shuffle_rng = make_stream(cfg.seed, {stream_tag::epoch, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double total = 0.0;
    std::uint64_t step = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++step) {
      const Index stop = std::min(n, start + cfg.batch_size);
      const std::vector<Index> cols(order.begin() + start, order.begin() + stop);
      auto rng = make_stream(cfg.seed, {stream_tag::batch, static_cast<std::uint64_t>(epoch), step});
      const auto batch = make_batch(cfg.flow, targets, cols, gamma, source, rng);
      const double loss = result.model.loss_and_gradient(batch.x_t, batch.t, batch.target, &grad);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
      adam.step(result.model, grad);
      total += loss * static_cast<double>(stop - start);
    }
    const double epoch_loss = total / static_cast<double>(n);
    result.loss_trace.push_back(epoch_loss);
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_loss);
    const bool periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
    if (hooks.on_checkpoint && (periodic || epoch == cfg.epochs)) hooks.on_checkpoint(epoch, result.model);
  }
  if (!result.model.parameters_finite()) throw NumericalError("training produced non-finite parameters");
  return result;
}

}  // namespace cdcflow
