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

#include <benchmark/benchmark.h>

#include <random>

#include "mprior/nn.hpp"

namespace {

mprior::Mlp policy_shaped() {
  mprior::Mlp net({144, 256, 256, 4});
  std::mt19937_64 rng(1);
  net.init(rng);
  return net;
}

void BM_MlpForward(benchmark::State& state) {
  const mprior::Mlp net = policy_shaped();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(net.input_dim(), state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForward)->Arg(1)->Arg(16)->Arg(256);

void BM_MlpForwardBackward(benchmark::State& state) {
  const mprior::Mlp net = policy_shaped();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(net.input_dim(), state.range(0));
  const Eigen::MatrixXd dy = Eigen::MatrixXd::Ones(net.output_dim(), state.range(0));
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
  mprior::Tape tape;
  for (auto _ : state) {
    net.forward(x, tape);
    benchmark::DoNotOptimize(net.backward(tape, dy, grad));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForwardBackward)->Arg(16)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
