// Copyright 2026 The motion_prior Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mprior/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "mprior/error.hpp"

namespace mprior {
namespace {

std::uint64_t next_version() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

void apply_activation(Activation a, const Eigen::MatrixXd& pre, Eigen::MatrixXd& post) {
  switch (a) {
    case Activation::kTanh:
      post = pre.array().tanh();
      break;
    case Activation::kRelu:
      post = pre.cwiseMax(0.0);
      break;
    case Activation::kElu:
      post = pre.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
      break;
    case Activation::kIdentity:
      post = pre;
      break;
  }
}

// First derivative, expressed through (pre, post).
Eigen::MatrixXd activation_grad(Activation a, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post) {
  switch (a) {
    case Activation::kTanh:
      return (1.0 - post.array().square()).matrix();
    case Activation::kRelu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::kElu:
      return pre.binaryExpr(post, [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
    case Activation::kIdentity:
      return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
  }
  return {};
}

Eigen::MatrixXd activation_second(Activation a, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post) {
  switch (a) {
    case Activation::kTanh:
      return (-2.0 * post.array() * (1.0 - post.array().square())).matrix();
    case Activation::kElu:
      return pre.binaryExpr(post, [](double x, double y) { return x > 0.0 ? 0.0 : y + 1.0; });
    case Activation::kRelu:
    case Activation::kIdentity:
      return Eigen::MatrixXd::Zero(pre.rows(), pre.cols());
  }
  return {};
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kElu:
      return "elu";
    case Activation::kIdentity:
      return "identity";
  }
  return "identity";
}

Activation activation_from_string(std::string_view s) {
  for (Activation a : {Activation::kTanh, Activation::kRelu, Activation::kElu, Activation::kIdentity}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError(fmt::format("unknown activation '{}'", s));
}

Mlp::Mlp(std::vector<int> widths, Activation hidden, Activation output)
    : widths_(std::move(widths)), hidden_(hidden), output_(output) {
  if (widths_.size() < 2) throw ShapeError("Mlp needs at least an input and an output width");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    if (widths_[l] <= 0 || widths_[l + 1] <= 0) throw ShapeError("Mlp widths must be positive");
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(widths_[l] + 1) * widths_[l + 1];
  }
  params_ = Eigen::VectorXd::Zero(total);
  bump_version();
}

Eigen::Index Mlp::bias_offset(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return offsets_[l] + static_cast<Eigen::Index>(widths_[l]) * widths_[l + 1];
}

void Mlp::bump_version() { version_ = next_version(); }

Eigen::VectorXd& Mlp::mutable_params() {
  bump_version();
  return params_;
}

void Mlp::set_params(const Eigen::VectorXd& p) {
  if (p.size() != params_.size())
    throw ShapeError(fmt::format("Mlp::set_params: expected {} values, got {}", params_.size(), p.size()));
  params_ = p;
  bump_version();
}

void Mlp::init(std::mt19937_64& rng, double output_scale) {
  for (int l = 0; l < num_layers(); ++l) {
    const int in = widths_[static_cast<std::size_t>(l)];
    const int out = widths_[static_cast<std::size_t>(l) + 1];
    double bound = std::sqrt(6.0 / (in + out));
    if (l + 1 == num_layers()) bound *= output_scale;
    std::uniform_real_distribution<double> u(-bound, bound);
    const Eigen::Index w0 = weight_offset(l);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(in) * out; ++i) params_[w0 + i] = u(rng);
    params_.segment(bias_offset(l), out).setZero();
  }
  bump_version();
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + weight_offset(layer), widths_[l + 1], widths_[l]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int layer) const {
  return {params_.data() + bias_offset(layer), widths_[static_cast<std::size_t>(layer) + 1]};
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input) const {
  if (input.rows() != input_dim())
    throw ShapeError(fmt::format("Mlp::forward: expected {} input rows, got {}", input_dim(), input.rows()));
  Eigen::MatrixXd h = input;
  Eigen::MatrixXd pre;
  for (int l = 0; l < num_layers(); ++l) {
    pre.noalias() = weight(l) * h;
    pre.colwise() += bias(l);
    apply_activation(layer_activation(l), pre, h);
  }
  return h;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Tape& tape) const {
  if (input.rows() != input_dim())
    throw ShapeError(fmt::format("Mlp::forward: expected {} input rows, got {}", input_dim(), input.rows()));
  const auto n = static_cast<std::size_t>(num_layers());
  tape.owner = this;
  tape.version = version_;
  tape.inputs.resize(n);
  tape.pre.resize(n);
  tape.post.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    tape.inputs[l] = l == 0 ? input : tape.post[l - 1];
    tape.pre[l].noalias() = weight(static_cast<int>(l)) * tape.inputs[l];
    tape.pre[l].colwise() += bias(static_cast<int>(l));
    apply_activation(layer_activation(static_cast<int>(l)), tape.pre[l], tape.post[l]);
  }
  return tape.post.back();
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& output_grad, Eigen::VectorXd& grad) const {
  if (tape.owner != this) throw UsageError("Mlp::backward: tape was recorded by a different network");
  if (tape.version != version_) throw UsageError("Mlp::backward: stale tape (parameters changed since forward)");
  if (grad.size() != params_.size()) throw ShapeError("Mlp::backward: gradient buffer has the wrong size");
  const auto& last = tape.post.back();
  if (output_grad.rows() != last.rows() || output_grad.cols() != last.cols())
    throw ShapeError("Mlp::backward: output gradient shape mismatch");

  Eigen::MatrixXd g = output_grad;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const Activation a = layer_activation(l);
    Eigen::MatrixXd d_pre =
        a == Activation::kIdentity ? g : g.cwiseProduct(activation_grad(a, tape.pre[li], tape.post[li]));
    const int in = widths_[li];
    const int out = widths_[li + 1];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + weight_offset(l), out, in);
    gw.noalias() += d_pre * tape.inputs[li].transpose();
    grad.segment(bias_offset(l), out) += d_pre.rowwise().sum();
    g.noalias() = weight(l).transpose() * d_pre;
  }
  return g;
}

double Mlp::input_gradient_penalty(const Eigen::MatrixXd& input, Eigen::VectorXd* grad, double weight_scale) const {
  if (output_dim() != 1) throw ShapeError("input_gradient_penalty needs a scalar-output network");
  Tape tape;
  forward(input, tape);
  const int L = num_layers();
  const auto B = static_cast<double>(input.cols());
  const auto idx = [](int l) { return static_cast<std::size_t>(l); };

  // Backward pass for dD/dx: g[l] = dD/d(pre_l), c[l] = dD/d(post_l).
  std::vector<Eigen::MatrixXd> sp(idx(L)), g(idx(L)), c(idx(L));
  for (int l = 0; l < L; ++l) sp[idx(l)] = activation_grad(layer_activation(l), tape.pre[idx(l)], tape.post[idx(l)]);
  c[idx(L - 1)] = Eigen::MatrixXd::Ones(1, input.cols());
  for (int l = L - 1; l >= 0; --l) {
    g[idx(l)] = sp[idx(l)].cwiseProduct(c[idx(l)]);
    if (l > 0) c[idx(l - 1)].noalias() = weight(l).transpose() * g[idx(l)];
  }
  const Eigen::MatrixXd u = weight(0).transpose() * g[0];
  const double penalty = u.squaredNorm() / B;
  if (grad == nullptr) return penalty;
  if (grad->size() != params_.size()) throw ShapeError("input_gradient_penalty: gradient buffer has the wrong size");

  // Reverse through the backward pass, collecting adjoints of the pre-activations.
  std::vector<Eigen::MatrixXd> a_bar(idx(L));
  Eigen::MatrixXd c_bar = (2.0 * weight_scale / B) * u;  // adjoint of c[l-1], starting with u = c[-1]
  for (int l = 0; l < L; ++l) {
    const int in = widths_[idx(l)];
    const int out = widths_[idx(l) + 1];
    Eigen::Map<Eigen::MatrixXd> gw(grad->data() + weight_offset(l), out, in);
    gw.noalias() += g[idx(l)] * c_bar.transpose();
    const Eigen::MatrixXd g_bar = weight(l) * c_bar;
    const Eigen::MatrixXd s2 = activation_second(layer_activation(l), tape.pre[idx(l)], tape.post[idx(l)]);
    a_bar[idx(l)] = s2.cwiseProduct(c[idx(l)]).cwiseProduct(g_bar);
    if (l + 1 < L) c_bar = sp[idx(l)].cwiseProduct(g_bar);
  }

  // Reverse through the forward pass with the injected pre-activation adjoints.
  Eigen::MatrixXd A = a_bar[idx(L - 1)];
  for (int l = L - 1; l >= 0; --l) {
    const int in = widths_[idx(l)];
    const int out = widths_[idx(l) + 1];
    Eigen::Map<Eigen::MatrixXd> gw(grad->data() + weight_offset(l), out, in);
    gw.noalias() += A * tape.inputs[idx(l)].transpose();
    grad->segment(bias_offset(l), out) += A.rowwise().sum();
    if (l > 0) A = a_bar[idx(l - 1)] + sp[idx(l - 1)].cwiseProduct(weight(l).transpose() * A);
  }
  return penalty;
}

double clamp_log_std(double log_std) { return std::clamp(log_std, kLogStdMin, kLogStdMax); }

Eigen::VectorXd DiagGaussian::std() const { return log_std.unaryExpr([](double s) { return std::exp(clamp_log_std(s)); }); }

double gaussian_logprob(const DiagGaussian& dist, const Eigen::VectorXd& x) {
  if (x.size() != dist.mean.size() || dist.log_std.size() != dist.mean.size())
    throw ShapeError("gaussian_logprob: dimension mismatch");
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  double lp = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double ls = clamp_log_std(dist.log_std[i]);
    const double z = (x[i] - dist.mean[i]) * std::exp(-ls);
    lp += -0.5 * z * z - ls - kHalfLog2Pi;
  }
  return lp;
}

double gaussian_entropy(const DiagGaussian& dist) {
  constexpr double kHalfLog2PiE = 1.41893853320467274178;
  double h = 0.0;
  for (Eigen::Index i = 0; i < dist.log_std.size(); ++i) h += clamp_log_std(dist.log_std[i]) + kHalfLog2PiE;
  return h;
}

Eigen::VectorXd standard_normal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd eps(n);
  for (Eigen::Index i = 0; i < n; ++i) eps[i] = normal(rng);
  return eps;
}

Eigen::VectorXd gaussian_sample(const DiagGaussian& dist, std::mt19937_64& rng) {
  return dist.mean + dist.std().cwiseProduct(standard_normal(dist.mean.size(), rng));
}

Eigen::VectorXd gaussian_sample(const DiagGaussian& dist, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gaussian_sample(dist, rng);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& mom, const AdamConfig& cfg,
               long t) {
  if (params.size() != grads.size() || static_cast<Eigen::Index>(params.size()) != mom.m.size())
    throw ShapeError("adam_step: shape mismatch");
  if (t < 1) throw UsageError("adam_step: t must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    mom.m[k] = cfg.beta1 * mom.m[k] + (1.0 - cfg.beta1) * grads[i];
    mom.v[k] = cfg.beta2 * mom.v[k] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = mom.m[k] / c1;
    const double v_hat = mom.v[k] / c2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

int AdamOptimizer::add_block(std::string name, Eigen::Index size) {
  names_.push_back(std::move(name));
  moments_.emplace_back(size);
  return static_cast<int>(moments_.size()) - 1;
}

void AdamOptimizer::step(std::span<const Block> blocks) {
  if (blocks.size() != moments_.size())
    throw ShapeError(fmt::format("AdamOptimizer::step: {} blocks registered, {} given", moments_.size(), blocks.size()));
  ++t_;
  for (std::size_t i = 0; i < blocks.size(); ++i) adam_step(blocks[i].params, blocks[i].grads, moments_[i], cfg_, t_);
}

double clip_global_norm(std::span<Eigen::VectorXd*> grads, double max_norm) {
  double sq = 0.0;
  for (const auto* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto* g : grads) *g *= scale;
  }
  return norm;
}

}  // namespace mprior
