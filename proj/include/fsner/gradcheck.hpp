#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fsner {

// Central-difference checks of every training objective on small random
// batches: hidden states of context tokens and label representatives pass
// through randomly initialized projection heads into each loss.
struct GradcheckOptions {
  std::uint64_t seed = 7;
  std::size_t batches = 20;
  double tolerance = 1e-4;
  double step = 1e-6;
  std::size_t hidden_dim = 16;
  std::size_t embedding_dim = 8;
};

struct GradcheckCase {
  std::string name;
  std::size_t batches = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace fsner
