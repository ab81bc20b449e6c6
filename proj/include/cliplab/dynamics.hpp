#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cliplab/optim.hpp"

namespace cliplab {

// One instrumentation sample. Smoothness is absent when the parameters did
// not move between the probed iterates.
struct DynamicsRecord {
    std::size_t iteration = 0;
    real loss = 0;
    real grad_norm = 0;
    real clip_threshold = 0;
    bool fired = false;
    real step_size = 0;
    std::optional<real> smoothness;
};

// L2 norm of the parameter update, taken over all tensors.
real step_size(const Parameters& now, const Parameters& prev);

// Secant estimate of the local gradient Lipschitz constant between two
// consecutive iterates: ||g_next - g_now|| / ||theta_next - theta_now||.
// Both gradients must come from the same minibatch. Returns nullopt when
// the denominator is zero.
std::optional<real> local_smoothness(const Parameters& theta_now, const Parameters& theta_next,
                                     const GradVector& grad_now, const GradVector& grad_next);

// Pearson product-moment correlation; throws on mismatched or short inputs
// and on zero variance.
real pearson_r(const std::vector<real>& xs, const std::vector<real>& ys);

// Shortest-exact decimal form of a value for CSV cells: round-trips to the
// same bits when parsed back.
std::string csv_real(real v);

// Collects DynamicsRecords at a fixed cadence and renders the dynamics CSV:
//   iter,loss,grad_norm,clip_threshold,fired,step_size,smoothness
// Recording is read-only with respect to training state; a run records the
// same trajectory whether or not a recorder is attached.
class DynamicsRecorder {
  public:
    explicit DynamicsRecorder(std::size_t every = 20);

    std::size_t cadence() const { return every_; }
    bool due(std::size_t iteration) const { return iteration % every_ == 0; }

    // Validates finiteness and strictly increasing iterations.
    void add(DynamicsRecord rec);

    const std::vector<DynamicsRecord>& records() const { return records_; }

    std::string to_csv() const;
    void write_csv(const std::string& path) const;

  private:
    std::size_t every_;
    std::vector<DynamicsRecord> records_;
};

}  // namespace cliplab
