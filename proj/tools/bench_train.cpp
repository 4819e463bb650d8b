// Times training steps and rollout inference at a given grid size.
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "gns/runtime.hpp"
#include "gns/datagen.hpp"
#include "gns/training.hpp"

int main(int argc, char** argv) {
  gns::tune_allocator();
  using namespace gns;
  const int n = argc > 1 ? std::atoi(argv[1]) : 16;
  const int batch = argc > 2 ? std::atoi(argv[2]) : 4;
  auto spec = datagen::default_case(datagen::PdeCase::burgers_scalar);
  spec.grid = {n, n};
  spec.solver.nt = argc > 3 ? std::atoi(argv[3]) : 21;
  auto t0 = std::chrono::steady_clock::now();
  const auto ds = datagen::generate_dataset(spec, 2, 0, 1);
  auto t1 = std::chrono::steady_clock::now();
  std::printf("datagen %.3f s per trajectory (nt=21)\n", std::chrono::duration<double>(t1 - t0).count() / 2);
  training::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = batch;
  const std::vector<int> ids{0, 1};
  t0 = std::chrono::steady_clock::now();
  training::train(ds, ids, cfg, model::GnsConfig{});
  t1 = std::chrono::steady_clock::now();
  std::printf("train %.2f ms per sample (batch %d)\n",
              std::chrono::duration<double>(t1 - t0).count() * 1000 / (2.0 * (spec.solver.nt - 1)), batch);
}
