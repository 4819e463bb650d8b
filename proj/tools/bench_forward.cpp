// Splits one training step into feature building, forward, and backward time.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <vector>

#include "gns/runtime.hpp"
#include "gns/model.hpp"

int main(int argc, char** argv) {
  gns::tune_allocator();
  using namespace gns;
  using clk = std::chrono::steady_clock;
  const int n = argc > 1 ? std::atoi(argv[1]) : 16;
  const int batch = argc > 2 ? std::atoi(argv[2]) : 4;
  const int reps = 10;
  const auto topo = graph::build_topology(n, n);
  const model::GnsConfig cfg;
  auto p = model::init_params(cfg, 0);
  std::vector<double> u(n * n * batch, 0.1);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::sin(0.37 * i);
  const auto norm = model::Normalizer::identity(1);
  const model::BatchedGraph g(topo, batch);
  auto ms = [](auto a, auto b) { return std::chrono::duration<double, std::milli>(b - a).count(); };
  double tf = 0, tfwd = 0, tfwd_tape = 0, tbw = 0;
  for (int r = 0; r < reps; ++r) {
    auto t0 = clk::now();
    const auto f = model::batch_features(u, batch, topo, {2 * std::numbers::pi, 1}, norm);
    auto t1 = clk::now();
    model::forward_normalized(p, f.nodes, f.edges, g.index());
    auto t2 = clk::now();
    ad::Tape tape;
    ad::Tape::Recording rec(tape);
    const auto y = model::forward_normalized(p, f.nodes, f.edges, g.index());
    const auto loss = ad::sum(y);
    auto t3 = clk::now();
    tape.backward(loss);
    auto t4 = clk::now();
    tf += ms(t0, t1); tfwd += ms(t1, t2); tfwd_tape += ms(t2, t3); tbw += ms(t3, t4);
  }
  std::printf("per batch of %d: features %.2f ms, forward %.2f ms, taped forward %.2f ms, backward %.2f ms\n",
              batch, tf / reps, tfwd / reps, tfwd_tape / reps, tbw / reps);
}
