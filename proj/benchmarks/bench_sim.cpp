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

#include "mprior/robot.hpp"
#include "mprior/sim.hpp"

namespace {

mprior::RobotState standing(const mprior::RobotGeometry& g) {
  mprior::RefPose p;
  p.root_z = mprior::standing_height(g);
  p.joints = mprior::standing_joints();
  p.update_feet(g);
  std::mt19937_64 rng(0);
  return mprior::reset_from_reference(p, mprior::RefVelocity{}, 0.0, g, rng);
}

void BM_ControlStep(benchmark::State& state) {
  const mprior::RobotGeometry g;
  const mprior::PlanarSim sim(g, mprior::SimConfig{});
  const mprior::RobotState start = standing(g);
  mprior::RobotState s = start;
  int n = 0;
  for (auto _ : state) {
    s = sim.step(s, mprior::standing_joints());
    if (++n % 500 == 0) s = start;
    benchmark::DoNotOptimize(s);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ControlStep);

void BM_ControlStepWithLog(benchmark::State& state) {
  const mprior::RobotGeometry g;
  const mprior::PlanarSim sim(g, mprior::SimConfig{});
  const mprior::RobotState s = standing(g);
  for (auto _ : state) {
    mprior::ContactLog log;
    benchmark::DoNotOptimize(sim.step(s, mprior::standing_joints(), &log));
  }
}
BENCHMARK(BM_ControlStepWithLog);

}  // namespace

BENCHMARK_MAIN();
