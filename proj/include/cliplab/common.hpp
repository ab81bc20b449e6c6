#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace cliplab {

// Training-precision real. 64-bit by default so gradient checks have
// headroom; define CLIPLAB_REAL32 for a 32-bit build.
#ifdef CLIPLAB_REAL32
using real = float;
#else
using real = double;
#endif

// Raised when a non-finite value reaches a loss or a gradient.
struct NonFiniteError : std::runtime_error {
    explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

inline bool is_finite(real v) { return std::isfinite(v); }

}  // namespace cliplab
