#pragma once

#include <cstdint>
#include <vector>

#include "cliplab/graph.hpp"

namespace cliplab {

using Parameters = std::vector<Tensor>;

struct OptimizerConfig {
    real lr = real(1e-3);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);

    void validate() const;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t t = 0;

    static AdamState init(const Parameters& theta);
};

// theta <- theta - lr * g. The whole update is validated before any
// coordinate is written, so a failure leaves theta untouched.
void sgd_step(Parameters& theta, const GradVector& g, const OptimizerConfig& config);

// Standard Adam with bias correction. Gradients are expected to have been
// clipped already; this function applies them as-is. On error neither
// theta nor state is modified.
void adam_step(Parameters& theta, AdamState& state, const GradVector& g,
               const OptimizerConfig& config);

}  // namespace cliplab
