// Minimal end-to-end run: generate a small planted-face dataset, train the
// default two-tier model briefly and print train metrics.

#include <iostream>

#include "kavan/kavan.hpp"

int main() {
  using namespace kavan;

  SyntheticConfig syn;
  syn.seed = 3;
  auto data = generate_synthetic(8, syn);

  RunConfig cfg;
  cfg.model.feature_dim = 16;
  cfg.model.hidden_dim = 16;
  cfg.optimizer.steps = 50;
  cfg.optimizer.batch_size = 8;

  auto result = run_experiment(cfg, data, default_taxonomy(), [](const StepLog& l) {
    if (l.step % 10 == 0) std::cout << "step " << l.step << "  loss " << l.total << "\n";
  });
  std::cout << report_to_json(result.report)["average"].dump(2) << "\n";
}
