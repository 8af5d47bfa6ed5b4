#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfb/gradcheck.hpp"

namespace mfb {

enum class GradScope { primitive, fusion, attention, model };

GradScope parse_grad_scope(const std::string& s);
const char* to_string(GradScope s);

struct GradCheckEntry {
  std::string op;
  std::size_t points = 0;
  GradCheckResult result;
};

// Finite-difference suite for every differentiable op in the scope, one
// entry per op.
std::vector<GradCheckEntry> run_gradcheck_suite(GradScope scope, std::uint64_t seed);

}  // namespace mfb
