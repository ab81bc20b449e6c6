#pragma once

#include <functional>

#include "cliplab/graph.hpp"
#include "cliplab/signal.hpp"

namespace cliplab {

// Truncated phase-sensitive spectrum approximation. The estimate carries
// the mixture phase (masks only reshape magnitude), so the target is the
// source magnitude projected onto that phase and truncated to [0, |X|].
// Mean absolute deviation over all time-frequency points.
Value loss_mi(Graph& g, Value est_mag, const Spectrogram& mixture, const Spectrogram& source);

// The truncated PSA target alone; exposed for eval-side reuse and tests.
Tensor psa_target(const Spectrogram& mixture, const Spectrogram& source);

// Weighted deep-clustering loss between the embedding affinity VV^T and
// the assignment affinity YY^T. Computed through the D x D / C x C Gram
// matrices only; the N x N affinities are never formed.
Value loss_dc(Graph& g, Value v, const Tensor& y, const Tensor& w);

// Whitened k-means embedding loss: D - tr((V^T V)^-1 V^T Y (Y^T Y)^-1 Y^T V).
Value loss_wkm(Graph& g, Value v, const Tensor& y);

// Convex blend of the magnitude and embedding objectives.
Value loss_chimera(Value mi, Value wkm, real alpha);

// Negative signal-to-noise ratio in dB with a relative floor on the
// residual so a perfect reconstruction stays finite.
Value loss_snr(Graph& g, Value est, const Tensor& ref);

// Best assignment of two estimates to two references: evaluates the pair
// loss for both orderings, returns the smaller total. The losing branch
// stays on the tape but receives no gradient.
Value pit2(const std::function<Value(std::size_t est, std::size_t ref)>& pair_loss);

Value pit_snr(Graph& g, const std::vector<Value>& est, const std::vector<Tensor>& ref);
Value pit_mi(Graph& g, const std::vector<Value>& est_mags, const Spectrogram& mixture,
             const std::vector<Spectrogram>& sources);

// Helpers for assembling loss inputs.
Tensor uniform_tf_weights(std::size_t n);
Tensor magnitude_tf_weights(const Tensor& mixture_mag);
// One-hot N x C matrix assigning each TF point to its loudest source.
Tensor dominant_source_assignment(const std::vector<Spectrogram>& sources);

}  // namespace cliplab
