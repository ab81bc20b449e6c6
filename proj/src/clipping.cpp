#include "cliplab/clipping.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cliplab {

GradNormHistory::GradNormHistory(std::optional<std::size_t> window) : window_(window) {
    if (window_ && *window_ == 0)
        throw std::invalid_argument("GradNormHistory: window must be positive");
}

void GradNormHistory::validate(real norm) {
    if (!std::isfinite(norm)) throw NonFiniteError("GradNormHistory: non-finite norm rejected");
    if (norm < real(0)) throw std::invalid_argument("GradNormHistory: negative norm");
}

GradNormHistory GradNormHistory::from_values(const std::vector<real>& values,
                                             std::optional<std::size_t> window) {
    GradNormHistory h(window);
    std::size_t first = 0;
    if (window && values.size() > *window) first = values.size() - *window;
    for (std::size_t i = first; i < values.size(); ++i) {
        validate(values[i]);
        h.arrival_.push_back(values[i]);
    }
    h.sorted_.assign(h.arrival_.begin(), h.arrival_.end());
    std::sort(h.sorted_.begin(), h.sorted_.end());
    return h;
}

void GradNormHistory::append(real norm) {
    validate(norm);
    sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), norm), norm);
    arrival_.push_back(norm);
    if (window_ && arrival_.size() > *window_) {
        const real oldest = arrival_.front();
        arrival_.pop_front();
        sorted_.erase(std::lower_bound(sorted_.begin(), sorted_.end(), oldest));
    }
}

real GradNormHistory::percentile(real p) const {
    if (empty()) throw std::invalid_argument("percentile: empty history");
    if (!(p >= real(0) && p <= real(100)))
        throw std::invalid_argument("percentile: p must lie in [0, 100]");
    const std::size_t n = sorted_.size();
    if (n == 1) return sorted_[0];
    const real rank = p / real(100) * static_cast<real>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= n) return sorted_[n - 1];
    const real frac = rank - static_cast<real>(lo);
    return sorted_[lo] + frac * (sorted_[lo + 1] - sorted_[lo]);
}

real GradNormHistory::mean() const {
    if (empty()) throw std::invalid_argument("mean: empty history");
    real acc = 0;
    for (real v : arrival_) acc += v;
    return acc / static_cast<real>(arrival_.size());
}

std::pair<GradVector, ClipReport> clip_by_norm(const GradVector& g, real threshold) {
    if (!(threshold > real(0)) || !std::isfinite(threshold))
        throw std::invalid_argument("clip_by_norm: threshold must be positive and finite");
    if (!g.all_finite()) throw NonFiniteError("clip_by_norm: non-finite gradient");

    ClipReport report;
    report.threshold = threshold;
    report.pre_clip_norm = g.norm;
    if (g.norm <= threshold) {
        report.scale = 1;
        report.fired = false;
        return {g, report};
    }
    report.fired = true;
    real scale = threshold / g.norm;
    GradVector out = g.scaled(scale);
    // Rounding in the rescale can land a hair above the threshold; nudge
    // the scale down until the realized norm respects the bound.
    while (out.norm > threshold) {
        scale = std::nextafter(scale, real(0));
        out = g.scaled(scale);
    }
    report.scale = scale;
    return {std::move(out), report};
}

std::pair<GradVector, ClipReport> autoclip_step(GradNormHistory& history, const GradVector& g,
                                                const ClipConfig& config) {
    if (config.mode != ClipMode::autoclip)
        throw std::invalid_argument("autoclip_step: config mode is not autoclip");
    if (!(config.p >= real(0) && config.p <= real(100)))
        throw std::invalid_argument("autoclip_step: p must lie in [0, 100]");
    if (!std::isfinite(g.norm) || !g.all_finite())
        throw NonFiniteError("autoclip_step: non-finite gradient; history left untouched");

    history.append(g.norm);
    const real threshold = history.percentile(config.p);
    if (threshold <= real(0)) {
        // Only reachable when every recorded norm at the percentile is zero;
        // nothing sensible to scale against, pass the gradient through.
        ClipReport report;
        report.threshold = threshold;
        report.pre_clip_norm = g.norm;
        return {g, report};
    }
    return clip_by_norm(g, threshold);
}

std::pair<real, real> suggest_static_threshold(const GradNormHistory& history) {
    const real m = history.mean();
    return {5 * m, 10 * m};
}

const char* clip_mode_name(ClipMode mode) {
    switch (mode) {
        case ClipMode::autoclip: return "autoclip";
        case ClipMode::static_threshold: return "static";
        case ClipMode::none: return "none";
    }
    throw std::logic_error("clip_mode_name: unknown mode");
}

ClipMode clip_mode_from_name(const std::string& name) {
    if (name == "autoclip") return ClipMode::autoclip;
    if (name == "static") return ClipMode::static_threshold;
    if (name == "none") return ClipMode::none;
    throw std::invalid_argument("unknown clip mode: " + name);
}

}  // namespace cliplab
