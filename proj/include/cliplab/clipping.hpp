#pragma once

#include <deque>
#include <optional>
#include <utility>
#include <vector>

#include "cliplab/graph.hpp"

namespace cliplab {

// Rolling record of gradient norms. Keeps an arrival-order buffer (for
// window eviction and checkpointing) plus a sorted copy for percentile
// queries. With a window set, only the most recent entries are retained.
class GradNormHistory {
  public:
    GradNormHistory() = default;
    explicit GradNormHistory(std::optional<std::size_t> window);

    static GradNormHistory from_values(const std::vector<real>& values,
                                       std::optional<std::size_t> window = std::nullopt);

    void append(real norm);

    real percentile(real p) const;
    real mean() const;

    std::size_t size() const { return arrival_.size(); }
    bool empty() const { return arrival_.empty(); }
    std::optional<std::size_t> window() const { return window_; }

    // Arrival order, oldest first. Round-trips through from_values.
    std::vector<real> to_values() const { return {arrival_.begin(), arrival_.end()}; }

  private:
    static void validate(real norm);

    std::deque<real> arrival_;
    std::vector<real> sorted_;
    std::optional<std::size_t> window_;
};

enum class ClipMode { autoclip, static_threshold, none };

struct ClipConfig {
    real p = 10;
    std::optional<std::size_t> window;
    ClipMode mode = ClipMode::autoclip;
    real static_value = 0;  // threshold when mode == static_threshold
};

struct ClipReport {
    real threshold = 0;
    real scale = 1;  // h_c, in (0, 1]
    bool fired = false;
    real pre_clip_norm = 0;
};

// Scales the gradient to norm at most threshold, preserving direction.
// An unclipped gradient is returned unchanged, bit for bit.
std::pair<GradVector, ClipReport> clip_by_norm(const GradVector& g, real threshold);

// One adaptive-clipping update: record the incoming norm, take the p-th
// percentile of the history as the threshold, clip against it. The record
// happens first, so the very first step sees a single-entry history and
// never fires.
std::pair<GradVector, ClipReport> autoclip_step(GradNormHistory& history, const GradVector& g,
                                                const ClipConfig& config);

// Rule-of-thumb static threshold range: 5x to 10x the mean recorded norm.
std::pair<real, real> suggest_static_threshold(const GradNormHistory& history);

const char* clip_mode_name(ClipMode mode);
ClipMode clip_mode_from_name(const std::string& name);

}  // namespace cliplab
