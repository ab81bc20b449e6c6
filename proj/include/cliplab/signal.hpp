#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "cliplab/graph.hpp"
#include "cliplab/rng.hpp"

namespace cliplab {

struct Waveform {
    std::vector<real> samples;
    real sample_rate = 8000;

    std::size_t size() const { return samples.size(); }
};

struct STFTConfig {
    std::size_t window_length = 256;  // 32 ms at 8 kHz
    std::size_t hop = 64;             // 8 ms
    bool normalize_window = false;    // divide each analysis window by its length

    void validate() const;
    std::size_t bins() const { return window_length / 2 + 1; }
};

// Frames x bins complex matrix, stored as separate real and imaginary parts.
struct Spectrogram {
    Tensor re;
    Tensor im;

    std::size_t frames() const { return re.dim(0); }
    std::size_t bins() const { return re.dim(1); }
    Tensor magnitude() const;
    Tensor phase() const;
    // cos/sin of the phase with the zero-magnitude convention (1, 0);
    // used to rebuild complex values from estimated magnitudes.
    std::pair<Tensor, Tensor> unit_phase() const;
};

// Precomputed sqrt-Hann window and DFT bases. The transform is a plain
// matrix product against these, which also makes the inverse usable as a
// differentiable graph operation.
class StftPlan {
  public:
    explicit StftPlan(const STFTConfig& cfg);

    const STFTConfig& config() const { return cfg_; }
    std::size_t bins() const { return cfg_.bins(); }
    std::size_t num_frames(std::size_t samples) const;
    std::size_t output_length(std::size_t frames) const;
    const Tensor& window() const { return window_; }
    real overlap_sum() const { return cola_; }

    Spectrogram forward(const Waveform& w) const;
    Waveform inverse(const Spectrogram& s, real sample_rate) const;

    // Same computation as inverse(), but recorded on the tape so gradients
    // flow back into re and im. Bit-identical to the plain path.
    Value inverse_graph(Graph& g, Value re, Value im) const;

  private:
    Tensor frame_signal(const Waveform& w) const;

    STFTConfig cfg_;
    Tensor window_;    // sqrt of the periodic Hann window
    Tensor fwd_cos_;   // window_length x bins
    Tensor fwd_sin_;
    Tensor inv_cos_;   // bins x window_length, synthesis window folded in
    Tensor inv_sin_;
    real cola_ = 0;    // sum of squared windows across overlapping hops
};

Spectrogram stft(const Waveform& w, const STFTConfig& cfg);
Waveform istft(const Spectrogram& s, const STFTConfig& cfg, real sample_rate = 8000);

// Synthetic two-source material: each source is a harmonic tone with a
// random fundamental drawn from its own band, amplitude-modulated at a
// random rate. Bands must not overlap, otherwise the sources would not be
// separable even in principle.
struct SourceSpec {
    real f0_min = 100;
    real f0_max = 150;
    std::size_t harmonics = 4;
    real am_rate_min = 1;
    real am_rate_max = 6;
};

struct MixtureConfig {
    real duration = 0.75;  // seconds
    real sample_rate = 8000;
    SourceSpec source1{100, 150, 4, 1, 6};
    SourceSpec source2{220, 330, 4, 1, 6};
    std::optional<real> noise_snr_db;  // additive white noise, absent = clean
    real gain_spread_db = 0;           // per-mixture loudness jitter, +/- this many dB

    void validate() const;
};

struct Mixture {
    Waveform mixture;
    std::array<Waveform, 2> sources;
    Waveform noise;  // all-zero when noise is disabled
};

Mixture synth_mixture(std::uint64_t seed, const MixtureConfig& cfg);

// Scale-invariant source-to-distortion ratio in dB, capped at +/-120.
real si_sdr(const Waveform& est, const Waveform& ref);
real si_sdr(const std::vector<real>& est, const std::vector<real>& ref);

// Debug output; 16-bit PCM mono RIFF.
void write_wav(const std::string& path, const Waveform& w);

}  // namespace cliplab
