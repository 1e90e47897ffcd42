#pragma once

#include <stdexcept>
#include <string>

namespace cylwalk {

// Malformed inputs: bad geometry parameters, segments that do not chain,
// window depths out of range, and similar caller mistakes.
struct ArgumentError : std::invalid_argument {
    explicit ArgumentError(const std::string& what) : std::invalid_argument(what) {}
};

// Structurally impossible states detected at runtime (a path that does not
// decompose into level segments, a solve asked on an empty slab, ...).
struct StructuralError : std::runtime_error {
    explicit StructuralError(const std::string& what) : std::runtime_error(what) {}
};

// Work would exceed a configured state/size budget (enumeration blow-up).
struct BudgetError : std::runtime_error {
    explicit BudgetError(const std::string& what) : std::runtime_error(what) {}
};

// Every particle of a weighted ensemble died in the same step.
struct ExtinctionError : std::runtime_error {
    explicit ExtinctionError(const std::string& what) : std::runtime_error(what) {}
};

}
