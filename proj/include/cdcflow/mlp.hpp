#pragma once

// MLP velocity field u(x, t): R^d x R -> R^d. The input is [x; t], hidden
// layers use Swish z * sigmoid(z), the output layer is linear. Batches are
// d x B matrices (one sample per column).

#include "cdcflow/core/blob.hpp"
#include "cdcflow/core/error.hpp"
#include "cdcflow/core/random.hpp"
#include "cdcflow/core/types.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace cdcflow {

struct MlpArchitecture {
  Index dim = 2;
  Index hidden_layers = 4;
  Index width = 512;

  void validate() const {
    if (dim < 1) throw ConfigError("model dimension must be >= 1");
    if (hidden_layers < 0) throw ConfigError("hidden_layers must be >= 0");
    if (hidden_layers > 0 && width < 1) throw ConfigError("hidden width must be >= 1");
  }

  /// Layer sizes from input (d+1) to output (d).
  std::vector<Index> sizes() const {
    std::vector<Index> s{dim + 1};
    for (Index l = 0; l < hidden_layers; ++l) s.push_back(width);
    s.push_back(dim);
    return s;
  }

  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

struct Layer {
  Matrix weight;  // out x in
  Vector bias;
};

/// Flat parameter vector in layer order: W_0 (column-major), b_0, W_1, b_1, ...
using ParamVector = Vector;

namespace detail {

inline Eigen::ArrayXXd sigmoid(const Matrix& z) { return (1.0 + (-z.array()).exp()).inverse(); }

}  // namespace detail

class VelocityModel {
 public:
  VelocityModel() = default;

  /// Kaiming-uniform hidden weights with gain sqrt(2), PyTorch-style bias
  /// bounds 1/sqrt(fan_in), and a zero output layer so the initial field is 0.
  static VelocityModel create(const MlpArchitecture& arch, std::uint64_t seed, bool zero_output = true) {
    arch.validate();
    VelocityModel m;
    m.arch_ = arch;
    m.seed_ = seed;
    auto rng = make_stream(seed, {stream_tag::init});
    const auto sizes = arch.sizes();
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const Index in = sizes[l], out = sizes[l + 1];
      Layer layer{Matrix(out, in), Vector(out)};
      const bool last = l + 2 == sizes.size();
      if (last && zero_output) {
        layer.weight.setZero();
        layer.bias.setZero();
      } else {
        const double bound = std::sqrt(2.0) * std::sqrt(3.0 / static_cast<double>(in));
        const double bias_bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> w(-bound, bound), b(-bias_bound, bias_bound);
        for (Index j = 0; j < in; ++j)
          for (Index i = 0; i < out; ++i) layer.weight(i, j) = w(rng);
        for (Index i = 0; i < out; ++i) layer.bias(i) = b(rng);
      }
      m.layers_.push_back(std::move(layer));
    }
    return m;
  }

  const MlpArchitecture& architecture() const { return arch_; }
  Index dim() const { return arch_.dim; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  ParamVector parameters() const {
    ParamVector p(parameter_count());
    Index o = 0;
    for (const auto& l : layers_) {
      p.segment(o, l.weight.size()) = l.weight.reshaped();
      o += l.weight.size();
      p.segment(o, l.bias.size()) = l.bias;
      o += l.bias.size();
    }
    return p;
  }

  void set_parameters(const ParamVector& p) {
    if (p.size() != parameter_count()) throw ConfigError("parameter vector has the wrong length");
    Index o = 0;
    for (auto& l : layers_) {
      l.weight.reshaped() = p.segment(o, l.weight.size());
      o += l.weight.size();
      l.bias = p.segment(o, l.bias.size());
      o += l.bias.size();
    }
  }

  bool parameters_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  /// Velocity for a batch: x is d x B, t holds B times.
  Matrix forward(const Matrix& x, const Vector& t) const {
    check_input(x, t);
    Matrix h = input(x, t);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = layers_[l].weight * h;
      z.colwise() += layers_[l].bias;
      if (l + 1 < layers_.size()) h = (z.array() * detail::sigmoid(z)).matrix();
      else h = std::move(z);
    }
    return h;
  }

  Matrix forward(const Matrix& x, double t) const { return forward(x, Vector::Constant(x.cols(), t)); }

  Vector forward(const Vector& x, double t) const { return forward(Matrix(x), Vector::Constant(1, t)).col(0); }

  /// Jacobian-vector product d u / d x . dx for a batch of tangents dx (d x B).
  Matrix jvp(const Matrix& x, const Vector& t, const Matrix& dx) const {
    check_input(x, t);
    if (dx.rows() != x.rows() || dx.cols() != x.cols()) throw ConfigError("tangent shape does not match input");
    Matrix h = input(x, t);
    Matrix dh = Matrix::Zero(h.rows(), h.cols());
    dh.topRows(dim()) = dx;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = layers_[l].weight * h;
      z.colwise() += layers_[l].bias;
      Matrix dz = layers_[l].weight * dh;
      if (l + 1 < layers_.size()) {
        const auto s = detail::sigmoid(z);
        dh = (dz.array() * (s + z.array() * s * (1.0 - s))).matrix();
        h = (z.array() * s).matrix();
      } else {
        dh = std::move(dz);
      }
    }
    return dh;
  }

  struct VelocityDivergence {
    Matrix velocity;   // d x B
    Vector divergence; // B
  };

  /// Velocity and exact divergence (trace of the input Jacobian), via d
  /// forward-mode passes sharing one primal pass.
  VelocityDivergence velocity_divergence(const Matrix& x, const Vector& t) const {
    check_input(x, t);
    const Index d = dim(), batch = x.cols();
    Matrix h = input(x, t);
    // Tangents stacked horizontally: block k holds the derivative along e_k.
    Matrix dh = Matrix::Zero(h.rows(), d * batch);
    for (Index k = 0; k < d; ++k) dh.block(k, k * batch, 1, batch).setOnes();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = layers_[l].weight * h;
      z.colwise() += layers_[l].bias;
      Matrix dz = layers_[l].weight * dh;
      if (l + 1 < layers_.size()) {
        const Eigen::ArrayXXd s = detail::sigmoid(z);
        const Eigen::ArrayXXd slope = s + z.array() * s * (1.0 - s);
        for (Index k = 0; k < d; ++k) dz.middleCols(k * batch, batch).array() *= slope;
        dh = std::move(dz);
        h = (z.array() * s).matrix();
      } else {
        dh = std::move(dz);
        h = std::move(z);
      }
    }
    VelocityDivergence out{std::move(h), Vector::Zero(batch)};
    for (Index k = 0; k < d; ++k) out.divergence += dh.block(k, k * batch, 1, batch).transpose();
    return out;
  }

  VelocityDivergence velocity_divergence(const Matrix& x, double t) const {
    return velocity_divergence(x, Vector::Constant(x.cols(), t));
  }

  /// Field interface used by the ODE solvers.
  Matrix velocity(const Matrix& x, double t) const { return forward(x, t); }

  /// Mean squared regression loss over the batch and its parameter gradient.
  double loss_and_gradient(const Matrix& x, const Vector& t, const Matrix& target, ParamVector* gradient) const {
    check_input(x, t);
    if (target.rows() != dim() || target.cols() != x.cols()) throw ConfigError("target shape does not match batch");
    const Index batch = x.cols();
    if (batch == 0) throw ConfigError("empty batch");

    std::vector<Matrix> acts{input(x, t)};   // inputs to each layer
    std::vector<Eigen::ArrayXXd> sig;      // sigmoid(z) per hidden layer
    std::vector<Matrix> pre;                 // z per hidden layer
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = layers_[l].weight * acts.back();
      z.colwise() += layers_[l].bias;
      if (l + 1 < layers_.size()) {
        sig.push_back(detail::sigmoid(z));
        acts.push_back((z.array() * sig.back()).matrix());
        pre.push_back(std::move(z));
      } else {
        acts.push_back(std::move(z));
      }
    }
    const Matrix residual = acts.back() - target;
    const double loss = residual.squaredNorm() / static_cast<double>(batch);
    if (!gradient) return loss;

    gradient->resize(parameter_count());
    std::vector<Index> offsets;
    Index o = 0;
    for (const auto& l : layers_) {
      offsets.push_back(o);
      o += l.weight.size() + l.bias.size();
    }
    Matrix delta = (2.0 / static_cast<double>(batch)) * residual;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& layer = layers_[l];
      const Index wo = offsets[l];
      gradient->segment(wo, layer.weight.size()).reshaped(layer.weight.rows(), layer.weight.cols()).noalias() =
          delta * acts[l].transpose();
      gradient->segment(wo + layer.weight.size(), layer.bias.size()) = delta.rowwise().sum();
      if (l == 0) break;
      Matrix back = layer.weight.transpose() * delta;
      const auto& s = sig[l - 1];
      const auto& z = pre[l - 1];
      delta = (back.array() * (s + z.array() * s * (1.0 - s))).matrix();
    }
    return loss;
  }

  friend bool operator==(const VelocityModel& a, const VelocityModel& b) {
    return a.arch_ == b.arch_ && a.parameters() == b.parameters();
  }

 private:
  void check_input(const Matrix& x, const Vector& t) const {
    if (layers_.empty()) throw ConfigError("model is not initialised");
    if (x.rows() != dim()) throw ConfigError("input dimension " + std::to_string(x.rows()) + " does not match model dimension " +
                                             std::to_string(dim()));
    if (t.size() != x.cols()) throw ConfigError("time vector length does not match batch size");
  }

  Matrix input(const Matrix& x, const Vector& t) const {
    Matrix h(dim() + 1, x.cols());
    h.topRows(dim()) = x;
    h.row(dim()) = t.transpose();
    return h;
  }

  MlpArchitecture arch_;
  std::uint64_t seed_ = 0;
  std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const VelocityModel& model, const std::string& path, std::int64_t epoch) {
  blob::Container c;
  const auto& a = model.architecture();
  c.header = {{"format", "cdcflow.model"},
              {"version", kCheckpointVersion},
              {"architecture", {{"type", "mlp"}, {"activation", "swish"}, {"hidden_layers", a.hidden_layers}, {"width", a.width}}},
              {"d", a.dim},
              {"seed", model.seed()},
              {"epoch", epoch}};
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& layer = model.layers()[l];
    c.blocks.push_back({"W" + std::to_string(l), std::vector<double>(layer.weight.data(), layer.weight.data() + layer.weight.size())});
    c.blocks.push_back({"b" + std::to_string(l), std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size())});
  }
  blob::write_file(c, path);
}

struct Checkpoint {
  VelocityModel model;
  std::int64_t epoch = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  const auto c = blob::read_file(path);
  blob::expect_format(c, "cdcflow.model", kCheckpointVersion);
  MlpArchitecture arch;
  std::uint64_t seed = 0;
  Checkpoint out;
  try {
    arch.dim = c.header.at("d").get<Index>();
    arch.hidden_layers = c.header.at("architecture").at("hidden_layers").get<Index>();
    arch.width = c.header.at("architecture").at("width").get<Index>();
    if (c.header.at("architecture").at("activation") != "swish") throw FormatError("unsupported activation");
    seed = c.header.at("seed").get<std::uint64_t>();
    out.epoch = c.header.at("epoch").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
  out.model = VelocityModel::create(arch, seed);
  for (std::size_t l = 0; l < out.model.layers().size(); ++l) {
    auto& layer = out.model.layers()[l];
    const auto& w = c.block("W" + std::to_string(l));
    const auto& b = c.block("b" + std::to_string(l));
    if (static_cast<Index>(w.values.size()) != layer.weight.size() || static_cast<Index>(b.values.size()) != layer.bias.size())
      throw FormatError("header/blob size mismatch in layer " + std::to_string(l));
    layer.weight = Eigen::Map<const Matrix>(w.values.data(), layer.weight.rows(), layer.weight.cols());
    layer.bias = Eigen::Map<const Vector>(b.values.data(), layer.bias.size());
  }
  return out;
}

}  // namespace cdcflow
