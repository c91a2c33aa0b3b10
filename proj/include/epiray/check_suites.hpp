#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace epiray {

/// One named residual check: pass iff value < threshold (or == expected for
/// exact checks, encoded as value 0/1 against threshold 0.5).
struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;
  bool pass = true;

  void add(const std::string& name, double value, double threshold);
  void add_flag(const std::string& name, bool ok);
};

// `inject_fault` applies a small documented perturbation inside the suite so a
// healthy build must report a failure; it exists to prove the suite has teeth.
SuiteReport run_geometry_suite(std::uint64_t seed, bool inject_fault = false);
SuiteReport run_encoding_suite(std::uint64_t seed, bool inject_fault = false);
SuiteReport run_attention_suite(std::uint64_t seed, bool inject_fault = false);
SuiteReport run_diffusion_suite(std::uint64_t seed, bool inject_fault = false);
SuiteReport run_oracle_suite(std::uint64_t seed, bool inject_fault = false);

/// Finite-difference verification of the attention-block backward pass and the
/// end-to-end training gradient. `small_size` raises the instance sizes.
/// `corrupt` perturbs one analytic gradient so the check must fail.
SuiteReport run_gradcheck(std::uint64_t seed, bool small_size, bool corrupt = false);

}  // namespace epiray
