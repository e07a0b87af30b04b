#pragma once

#include <string>
#include <vector>

#include "jekyll/core/types.hpp"

namespace jekyll {

struct Violation {
  std::string record;  // patient id, or "manifest" for header-level rules
  std::string rule;
  std::string message;
};

// Empty result iff every manifest invariant holds.
std::vector<Violation> validate_manifest(const DatasetManifest& manifest);
std::string describe(const std::vector<Violation>& violations);

// Throws ValidationError when two partitions share a patient.
void assert_disjoint(const Partition& a, const Partition& b);

}  // namespace jekyll
