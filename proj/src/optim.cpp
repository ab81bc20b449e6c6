#include "cliplab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cliplab {

void OptimizerConfig::validate() const {
    if (!(lr > real(0)) || !std::isfinite(lr))
        throw std::invalid_argument("OptimizerConfig: learning rate must be positive");
    if (!(beta1 >= real(0) && beta1 < real(1)) || !(beta2 >= real(0) && beta2 < real(1)))
        throw std::invalid_argument("OptimizerConfig: betas must lie in [0, 1)");
    if (!(eps > real(0))) throw std::invalid_argument("OptimizerConfig: eps must be positive");
}

AdamState AdamState::init(const Parameters& theta) {
    AdamState s;
    s.m.reserve(theta.size());
    s.v.reserve(theta.size());
    for (const Tensor& t : theta) {
        s.m.push_back(Tensor::zeros(t.shape()));
        s.v.push_back(Tensor::zeros(t.shape()));
    }
    return s;
}

namespace {

void check_grad_matches(const Parameters& theta, const GradVector& g, const char* who) {
    if (g.grads.size() != theta.size())
        throw std::invalid_argument(std::string(who) + ": gradient/parameter count mismatch");
    for (std::size_t p = 0; p < theta.size(); ++p)
        if (!g.grads[p].same_shape(theta[p]))
            throw std::invalid_argument(std::string(who) + ": gradient shape mismatch");
}

}  // namespace

void sgd_step(Parameters& theta, const GradVector& g, const OptimizerConfig& config) {
    config.validate();
    check_grad_matches(theta, g, "sgd_step");
    if (!g.all_finite()) throw NonFiniteError("sgd_step: non-finite gradient");
    for (std::size_t p = 0; p < theta.size(); ++p)
        for (std::size_t i = 0; i < theta[p].size(); ++i)
            if (!std::isfinite(theta[p][i] - config.lr * g.grads[p][i]))
                throw NonFiniteError("sgd_step: non-finite update");
    for (std::size_t p = 0; p < theta.size(); ++p) {
        real* th = theta[p].data();
        const real* gr = g.grads[p].data();
        for (std::size_t i = 0, n = theta[p].size(); i < n; ++i) th[i] -= config.lr * gr[i];
    }
}

void adam_step(Parameters& theta, AdamState& state, const GradVector& g,
               const OptimizerConfig& config) {
    config.validate();
    check_grad_matches(theta, g, "adam_step");
    if (state.m.size() != theta.size() || state.v.size() != theta.size())
        throw std::invalid_argument("adam_step: state does not match parameters");
    if (!g.all_finite()) throw NonFiniteError("adam_step: non-finite gradient");

    const std::int64_t t = state.t + 1;
    const real bc1 = real(1) - std::pow(config.beta1, static_cast<real>(t));
    const real bc2 = real(1) - std::pow(config.beta2, static_cast<real>(t));

    // Stage everything, validate, then commit, so an error cannot leave a
    // half-updated optimizer behind.
    AdamState next = state;
    Parameters staged = theta;
    for (std::size_t p = 0; p < theta.size(); ++p) {
        real* m = next.m[p].data();
        real* v = next.v[p].data();
        real* th = staged[p].data();
        const real* gr = g.grads[p].data();
        for (std::size_t i = 0, n = theta[p].size(); i < n; ++i) {
            m[i] = config.beta1 * m[i] + (real(1) - config.beta1) * gr[i];
            v[i] = config.beta2 * v[i] + (real(1) - config.beta2) * gr[i] * gr[i];
            const real m_hat = m[i] / bc1;
            const real v_hat = v[i] / bc2;
            th[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
            if (!std::isfinite(th[i]) || !std::isfinite(m[i]) || !std::isfinite(v[i]))
                throw NonFiniteError("adam_step: non-finite update");
        }
    }
    next.t = t;
    state = std::move(next);
    theta = std::move(staged);
}

}  // namespace cliplab
