#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sage/io.hpp"
#include "sage/kernels.hpp"
#include "sage/theory.hpp"

namespace sage {

struct SuiteOptions {
  int instances = 0;  // 0: the suite's default count
  std::uint64_t seed = 7;
  kernels::Exec exec = kernels::Exec::parallel;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  Json report;       // every assertion with its intermediate quantities
  std::string text;  // human-readable summary (the toy suite includes the trace)
};

// toy, expansion, offtarget, preservation, identities, all.
const std::vector<std::string>& suite_names();
bool is_suite_name(const std::string& name);

// Runs one verifier battery. "all" runs every battery and passes iff each does.
SuiteResult run_suite(const std::string& name, const SuiteOptions& opts = {});

Json instance_to_json(const TheoryInstance& inst);

}  // namespace sage
