// Runs LR, LR-MRF and LR-SPMRF on a seeded synthetic block scene and prints
// the test accuracy of each.
#include <cstdio>
#include <cstdlib>

#include "ugm/ugm.hpp"

int main(int argc, char** argv) {
  const std::size_t size = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 64;
  const double sigma = argc > 2 ? std::strtod(argv[2], nullptr) : 0.6;
  const std::size_t trials = argc > 3 ? std::strtoul(argv[3], nullptr, 10) : 3;

  const ugm::Scene scene = ugm::synth_scene(ugm::random_block_scene(size, 8, 4, 10, sigma, 7), 8);
  const ugm::Dataset ds{scene.cube, scene.labels, std::nullopt};

  for (auto smoother : {ugm::Smoother::none, ugm::Smoother::mrf_grid, ugm::Smoother::mrf_superpixel}) {
    ugm::ExperimentConfig cfg;
    cfg.smoother = smoother;
    cfg.n_train = 30;
    cfg.n_trials = trials;
    cfg.lambda = 1.0;
    cfg.threads = trials;
    const auto run = ugm::run_trials(ds, cfg);
    const auto& s = run.summary;
    std::printf("%-10s OA %6.2f +- %5.2f  best %6.2f  (%zu/%zu trials, %.1f ms/trial)\n", s.method.c_str(), s.oa.mean,
                s.oa.sd, s.oa.best, s.completed, s.trials, s.mean_wall_ms);
  }
  return 0;
}
