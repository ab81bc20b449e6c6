#include "cliplab/grad_check.hpp"

#include <cmath>
#include <sstream>

#include "cliplab/common.hpp"

namespace cliplab {

std::vector<Tensor> finite_diff_grad(const LossFn& f, const std::vector<Tensor>& theta, real h) {
    std::vector<Tensor> grads;
    grads.reserve(theta.size());
    std::vector<Tensor> work = theta;
    for (std::size_t p = 0; p < theta.size(); ++p) {
        Tensor g = Tensor::zeros(theta[p].shape());
        for (std::size_t i = 0; i < theta[p].size(); ++i) {
            const real orig = work[p][i];
            work[p][i] = orig + h;
            const real up = f(work);
            work[p][i] = orig - h;
            const real down = f(work);
            work[p][i] = orig;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                std::ostringstream msg;
                msg << "finite_diff_grad: non-finite probe at parameter " << p << " coordinate "
                    << i;
                throw NonFiniteError(msg.str());
            }
            g[i] = (up - down) / (2 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

real max_rel_error(const std::vector<Tensor>& analytic, const std::vector<Tensor>& reference,
                   real floor_value) {
    if (analytic.size() != reference.size())
        throw std::invalid_argument("max_rel_error: parameter count mismatch");
    real max_abs_diff = 0;
    real max_abs_ref = 0;
    for (std::size_t p = 0; p < analytic.size(); ++p) {
        if (!analytic[p].same_shape(reference[p]))
            throw std::invalid_argument("max_rel_error: shape mismatch");
        for (std::size_t i = 0; i < analytic[p].size(); ++i) {
            max_abs_diff = std::max(max_abs_diff, std::fabs(analytic[p][i] - reference[p][i]));
            max_abs_ref = std::max(max_abs_ref, std::fabs(reference[p][i]));
        }
    }
    return max_abs_diff / std::max(max_abs_ref, floor_value);
}

}  // namespace cliplab
