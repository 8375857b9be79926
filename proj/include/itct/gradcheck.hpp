#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace itct {

struct GradCheckCase {
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double threshold = 1e-3;
  bool passed() const;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t seeds = 1;  // checks seeds seed, seed+1, ..., seed+seeds-1
  double epsilon = 1e-5;
  double threshold = 1e-3;
  // Adds a deliberate error to one analytic gradient coordinate of every case.
  bool inject_fault = false;
};

// Finite-difference checks, in double precision, of affine, softmax, the GRU
// cell (w.r.t. parameters and inputs), a 15-step GRU sequence, the
// cross-entropy and marginal-entropy nodes, and the full co-training loss in
// base, global-entropy and adversarial form on toy-sized models.
GradCheckReport run_gradcheck(const GradCheckOptions& options);

}  // namespace itct
