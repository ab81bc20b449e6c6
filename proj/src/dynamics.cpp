#include "cliplab/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cliplab {

namespace {

real diff_norm(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
               const char* what) {
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(what) + ": tensor count mismatch");
    real acc = 0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        if (!a[p].same_shape(b[p]))
            throw std::invalid_argument(std::string(what) + ": shape mismatch");
        for (std::size_t i = 0; i < a[p].size(); ++i) {
            const real d = a[p][i] - b[p][i];
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

}  // namespace

real step_size(const Parameters& now, const Parameters& prev) {
    return diff_norm(now, prev, "step_size");
}

std::optional<real> local_smoothness(const Parameters& theta_now, const Parameters& theta_next,
                                     const GradVector& grad_now, const GradVector& grad_next) {
    const real denom = diff_norm(theta_next, theta_now, "local_smoothness");
    if (denom == real(0)) return std::nullopt;
    return diff_norm(grad_next.grads, grad_now.grads, "local_smoothness") / denom;
}

real pearson_r(const std::vector<real>& xs, const std::vector<real>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("pearson_r: length mismatch");
    if (xs.size() < 2) throw std::invalid_argument("pearson_r: need at least two samples");
    const real n = static_cast<real>(xs.size());
    real mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    real sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const real dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == real(0) || syy == real(0))
        throw std::invalid_argument("pearson_r: zero variance");
    const real r = sxy / std::sqrt(sxx * syy);
    return std::min(real(1), std::max(real(-1), r));
}

std::string csv_real(real v) {
    char buf[64];
    if (v == std::floor(v) && std::fabs(v) < real(1e15)) {
        std::snprintf(buf, sizeof buf, "%.0f", static_cast<double>(v));
        return buf;
    }
    // Shortest representation that parses back to the same bits.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, static_cast<double>(v));
        if (static_cast<real>(std::strtod(buf, nullptr)) == v) return buf;
    }
    return buf;
}

DynamicsRecorder::DynamicsRecorder(std::size_t every) : every_(every) {
    if (every_ == 0) throw std::invalid_argument("DynamicsRecorder: cadence must be positive");
}

void DynamicsRecorder::add(DynamicsRecord rec) {
    const bool finite = is_finite(rec.loss) && is_finite(rec.grad_norm) &&
                        is_finite(rec.clip_threshold) && is_finite(rec.step_size) &&
                        (!rec.smoothness || is_finite(*rec.smoothness));
    if (!finite) throw std::invalid_argument("DynamicsRecorder: non-finite record");
    if (!records_.empty() && rec.iteration <= records_.back().iteration)
        throw std::invalid_argument("DynamicsRecorder: iterations must increase");
    records_.push_back(std::move(rec));
}

std::string DynamicsRecorder::to_csv() const {
    std::ostringstream out;
    out << "iter,loss,grad_norm,clip_threshold,fired,step_size,smoothness\n";
    for (const DynamicsRecord& r : records_) {
        out << r.iteration << ',' << csv_real(r.loss) << ',' << csv_real(r.grad_norm) << ','
            << csv_real(r.clip_threshold) << ',' << (r.fired ? 1 : 0) << ','
            << csv_real(r.step_size) << ',';
        if (r.smoothness) out << csv_real(*r.smoothness);
        out << '\n';
    }
    return out.str();
}

void DynamicsRecorder::write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("DynamicsRecorder: cannot open " + path);
    f << to_csv();
}

}  // namespace cliplab
