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

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace mprior {

enum class Activation { kTanh, kRelu, kElu, kIdentity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

class Mlp;

// Intermediates recorded by Mlp::forward for a later backward pass. A tape is
// bound to the exact parameter version it was recorded with.
struct Tape {
  const Mlp* owner = nullptr;
  std::uint64_t version = 0;
  std::vector<Eigen::MatrixXd> inputs;  // per layer, in x batch
  std::vector<Eigen::MatrixXd> pre;     // per layer, out x batch
  std::vector<Eigen::MatrixXd> post;    // per layer, out x batch
};

// Multilayer perceptron over column batches (one sample per column).
// Parameters live in one flat vector: for each layer, W (out x in,
// column-major) followed by b (out).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> widths, Activation hidden = Activation::kTanh, Activation output = Activation::kIdentity);

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  int num_layers() const { return static_cast<int>(widths_.size()) - 1; }
  const std::vector<int>& widths() const { return widths_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  Eigen::Index num_params() const { return params_.size(); }

  const Eigen::VectorXd& params() const { return params_; }
  // Mutable access invalidates every tape recorded so far.
  Eigen::VectorXd& mutable_params();
  void set_params(const Eigen::VectorXd& p);
  std::uint64_t version() const { return version_; }

  // Glorot-uniform weights, zero biases; the last layer is scaled by output_scale.
  void init(std::mt19937_64& rng, double output_scale = 1.0);

  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Tape& tape) const;

  // Accumulates d(loss)/d(params) into `grad` and returns d(loss)/d(input).
  // Throws UsageError if the tape is stale or belongs to another network.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& output_grad, Eigen::VectorXd& grad) const;

  // Mean over the batch of the squared input-gradient norm of a scalar-output
  // network, ||dD/dx||^2. When `grad` is non-null, accumulates
  // `weight` times the parameter gradient of that penalty (second-order pass).
  double input_gradient_penalty(const Eigen::MatrixXd& input, Eigen::VectorXd* grad, double weight = 1.0) const;

 private:
  Eigen::Index weight_offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }
  Eigen::Index bias_offset(int layer) const;
  Activation layer_activation(int layer) const { return layer + 1 == num_layers() ? output_ : hidden_; }
  void bump_version();

  std::vector<int> widths_;
  Activation hidden_ = Activation::kTanh;
  Activation output_ = Activation::kIdentity;
  std::vector<Eigen::Index> offsets_;
  Eigen::VectorXd params_;
  std::uint64_t version_ = 0;
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

double clamp_log_std(double log_std);

// Diagonal Gaussian with clamped log standard deviation.
struct DiagGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_std;

  Eigen::VectorXd std() const;
};

double gaussian_logprob(const DiagGaussian& dist, const Eigen::VectorXd& x);
double gaussian_entropy(const DiagGaussian& dist);
// mean + std * eps with eps ~ N(0, I) drawn from `rng`.
Eigen::VectorXd gaussian_sample(const DiagGaussian& dist, std::mt19937_64& rng);
Eigen::VectorXd gaussian_sample(const DiagGaussian& dist, std::uint64_t seed);
Eigen::VectorXd standard_normal(Eigen::Index n, std::mt19937_64& rng);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Eigen::VectorXd m;
  Eigen::VectorXd v;

  explicit AdamMoments(Eigen::Index n = 0) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

// Bias-corrected Adam update at step t >= 1.
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& moments, const AdamConfig& cfg,
               long t);

// Adam over several named parameter blocks sharing one step counter.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  int add_block(std::string name, Eigen::Index size);

  struct Block {
    std::span<double> params;
    std::span<const double> grads;
  };
  // One step over every registered block, in registration order.
  void step(std::span<const Block> blocks);

  long t() const { return t_; }
  void set_t(long t) { t_ = t; }
  AdamConfig& config() { return cfg_; }
  const AdamConfig& config() const { return cfg_; }
  std::size_t num_blocks() const { return moments_.size(); }
  const std::string& block_name(std::size_t i) const { return names_[i]; }
  AdamMoments& moments(std::size_t i) { return moments_[i]; }
  const AdamMoments& moments(std::size_t i) const { return moments_[i]; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::string> names_;
  std::vector<AdamMoments> moments_;
};

// Scales `grads` in place so their joint L2 norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(std::span<Eigen::VectorXd*> grads, double max_norm);

}  // namespace mprior
