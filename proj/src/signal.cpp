#include "cliplab/signal.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace cliplab {

void STFTConfig::validate() const {
    if (window_length < 2 || window_length % 2 != 0)
        throw std::invalid_argument("STFTConfig: window length must be even and >= 2");
    if (hop == 0 || hop > window_length)
        throw std::invalid_argument("STFTConfig: hop must lie in (0, window_length]");
    if (window_length % hop != 0)
        throw std::invalid_argument("STFTConfig: hop must divide the window length");
}

Tensor Spectrogram::magnitude() const {
    Tensor mag(re.shape());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(re[i], im[i]);
    return mag;
}

Tensor Spectrogram::phase() const {
    Tensor ph(re.shape());
    for (std::size_t i = 0; i < ph.size(); ++i) ph[i] = std::atan2(im[i], re[i]);
    return ph;
}

std::pair<Tensor, Tensor> Spectrogram::unit_phase() const {
    Tensor c(re.shape()), s(re.shape());
    for (std::size_t i = 0; i < c.size(); ++i) {
        const real mag = std::hypot(re[i], im[i]);
        if (mag == real(0)) {
            c[i] = 1;
            s[i] = 0;
        } else {
            c[i] = re[i] / mag;
            s[i] = im[i] / mag;
        }
    }
    return {std::move(c), std::move(s)};
}

StftPlan::StftPlan(const STFTConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t w = cfg_.window_length;
    const std::size_t k = cfg_.bins();
    const real two_pi = 2 * std::numbers::pi_v<real>;

    window_ = Tensor(Shape{w});
    for (std::size_t n = 0; n < w; ++n) {
        const real hann = real(0.5) * (real(1) - std::cos(two_pi * static_cast<real>(n) /
                                                          static_cast<real>(w)));
        window_[n] = std::sqrt(hann);
    }

    fwd_cos_ = Tensor(Shape{w, k});
    fwd_sin_ = Tensor(Shape{w, k});
    inv_cos_ = Tensor(Shape{k, w});
    inv_sin_ = Tensor(Shape{k, w});
    for (std::size_t b = 0; b < k; ++b) {
        // Bin 0 and the Nyquist bin have no mirrored twin; every other bin
        // appears twice in the full spectrum of a real signal.
        const real dup = (b == 0 || b == w / 2) ? real(1) : real(2);
        for (std::size_t n = 0; n < w; ++n) {
            const real angle = two_pi * static_cast<real>(b) * static_cast<real>(n) /
                               static_cast<real>(w);
            fwd_cos_.at(n, b) = std::cos(angle);
            fwd_sin_.at(n, b) = -std::sin(angle);
            inv_cos_.at(b, n) = dup * std::cos(angle) * window_[n] / static_cast<real>(w);
            inv_sin_.at(b, n) = -dup * std::sin(angle) * window_[n] / static_cast<real>(w);
        }
    }

    // Overlap sum of the analysis*synthesis window (plain Hann) at a fully
    // covered sample; constant across the interior for hop-divisible windows.
    cola_ = 0;
    for (std::size_t m = 0; m < w / cfg_.hop; ++m) {
        const real wn = window_[m * cfg_.hop];
        cola_ += wn * wn;
    }
}

std::size_t StftPlan::num_frames(std::size_t samples) const {
    if (samples < cfg_.window_length) return 0;
    return (samples - cfg_.window_length) / cfg_.hop + 1;
}

std::size_t StftPlan::output_length(std::size_t frames) const {
    return (frames - 1) * cfg_.hop + cfg_.window_length;
}

Tensor StftPlan::frame_signal(const Waveform& wv) const {
    const std::size_t w = cfg_.window_length;
    const std::size_t t = num_frames(wv.size());
    if (t == 0) throw std::invalid_argument("stft: waveform shorter than one window");
    const real norm = cfg_.normalize_window ? real(1) / static_cast<real>(w) : real(1);
    Tensor frames(Shape{t, w});
    for (std::size_t f = 0; f < t; ++f) {
        const real* src = wv.samples.data() + f * cfg_.hop;
        real* dst = frames.data() + f * w;
        for (std::size_t n = 0; n < w; ++n) dst[n] = src[n] * window_[n] * norm;
    }
    return frames;
}

Spectrogram StftPlan::forward(const Waveform& wv) const {
    for (real v : wv.samples)
        if (!std::isfinite(v)) throw NonFiniteError("stft: non-finite sample");
    Tensor frames = frame_signal(wv);
    const std::size_t t = frames.dim(0), w = cfg_.window_length, k = cfg_.bins();
    Spectrogram s;
    s.re = Tensor::zeros(Shape{t, k});
    s.im = Tensor::zeros(Shape{t, k});
    kernels::mm_acc_nn(frames.data(), fwd_cos_.data(), s.re.data(), t, w, k);
    kernels::mm_acc_nn(frames.data(), fwd_sin_.data(), s.im.data(), t, w, k);
    return s;
}

Waveform StftPlan::inverse(const Spectrogram& s, real sample_rate) const {
    const std::size_t k = cfg_.bins(), w = cfg_.window_length;
    if (s.re.rank() != 2 || !s.re.same_shape(s.im) || s.re.dim(1) != k)
        throw std::invalid_argument("istft: spectrogram shape does not match the plan");
    const std::size_t t = s.frames();
    // Two separate accumulations joined by a final add, mirroring the graph
    // path operation for operation so both give identical bits.
    Tensor synth = Tensor::zeros(Shape{t, w});
    Tensor part_im = Tensor::zeros(Shape{t, w});
    kernels::mm_acc_nn(s.re.data(), inv_cos_.data(), synth.data(), t, k, w);
    kernels::mm_acc_nn(s.im.data(), inv_sin_.data(), part_im.data(), t, k, w);
    for (std::size_t i = 0; i < synth.size(); ++i) synth[i] += part_im[i];

    Waveform out;
    out.sample_rate = sample_rate;
    out.samples.assign(output_length(t), real(0));
    for (std::size_t f = 0; f < t; ++f) {
        real* dst = out.samples.data() + f * cfg_.hop;
        const real* src = synth.data() + f * w;
        for (std::size_t n = 0; n < w; ++n) dst[n] += src[n];
    }
    const real inv_cola = real(1) / cola_;
    for (real& v : out.samples) v *= inv_cola;
    return out;
}

Value StftPlan::inverse_graph(Graph& g, Value re, Value im) const {
    const std::size_t k = cfg_.bins();
    if (re.tensor().rank() != 2 || !re.tensor().same_shape(im.tensor()) ||
        re.tensor().dim(1) != k)
        throw std::invalid_argument("istft: spectrogram shape does not match the plan");
    Value synth = add(matmul(re, g.constant(inv_cos_)), matmul(im, g.constant(inv_sin_)));
    return scale(overlap_add(synth, cfg_.hop), real(1) / cola_);
}

Spectrogram stft(const Waveform& w, const STFTConfig& cfg) {
    return StftPlan(cfg).forward(w);
}

Waveform istft(const Spectrogram& s, const STFTConfig& cfg, real sample_rate) {
    return StftPlan(cfg).inverse(s, sample_rate);
}

void MixtureConfig::validate() const {
    if (!(duration > real(0)) || !(sample_rate > real(0)))
        throw std::invalid_argument("MixtureConfig: duration and sample rate must be positive");
    for (const SourceSpec* s : {&source1, &source2}) {
        if (!(s->f0_min > real(0)) || s->f0_min > s->f0_max)
            throw std::invalid_argument("MixtureConfig: bad fundamental range");
        if (s->harmonics == 0) throw std::invalid_argument("MixtureConfig: harmonics must be >= 1");
        if (s->am_rate_min > s->am_rate_max)
            throw std::invalid_argument("MixtureConfig: bad AM rate range");
    }
    const bool disjoint =
        source1.f0_max < source2.f0_min || source2.f0_max < source1.f0_min;
    if (!disjoint)
        throw std::invalid_argument(
            "MixtureConfig: fundamental ranges overlap; sources would be inseparable");
    if (gain_spread_db < real(0))
        throw std::invalid_argument("MixtureConfig: gain spread must be non-negative");
}

namespace {

std::vector<real> synth_source(Rng& rng, const SourceSpec& spec, std::size_t n, real sr) {
    const real two_pi = 2 * std::numbers::pi_v<real>;
    const real f0 = rng.uniform(spec.f0_min, spec.f0_max);
    const real am_rate = rng.uniform(spec.am_rate_min, spec.am_rate_max);
    const real am_phase = rng.uniform(0, two_pi);
    std::vector<real> phases(spec.harmonics);
    for (real& p : phases) p = rng.uniform(0, two_pi);

    std::vector<real> out(n, real(0));
    for (std::size_t i = 0; i < n; ++i) {
        const real t = static_cast<real>(i) / sr;
        real v = 0;
        for (std::size_t h = 0; h < spec.harmonics; ++h)
            v += std::sin(two_pi * f0 * static_cast<real>(h + 1) * t + phases[h]) /
                 static_cast<real>(h + 1);
        const real am = real(1) + real(0.5) * std::sin(two_pi * am_rate * t + am_phase);
        out[i] = v * am;
    }
    // Fix the loudness so mixtures are comparable before the gain jitter.
    real power = 0;
    for (real v : out) power += v * v;
    const real rms = std::sqrt(power / static_cast<real>(n));
    const real target_rms = real(0.1);
    if (rms > real(0))
        for (real& v : out) v *= target_rms / rms;
    return out;
}

}  // namespace

Mixture synth_mixture(std::uint64_t seed, const MixtureConfig& cfg) {
    cfg.validate();
    const std::size_t n = static_cast<std::size_t>(std::llround(cfg.duration * cfg.sample_rate));
    if (n == 0) throw std::invalid_argument("synth_mixture: zero-length output");

    Rng rng(seed);
    std::vector<real> s1 = synth_source(rng, cfg.source1, n, cfg.sample_rate);
    std::vector<real> s2 = synth_source(rng, cfg.source2, n, cfg.sample_rate);

    if (cfg.gain_spread_db > real(0)) {
        const real gain_db = rng.uniform(-cfg.gain_spread_db, cfg.gain_spread_db);
        const real gain = std::pow(real(10), gain_db / real(20));
        for (real& v : s1) v *= gain;
        for (real& v : s2) v *= gain;
    }

    std::vector<real> noise(n, real(0));
    if (cfg.noise_snr_db) {
        real sig_power = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const real v = s1[i] + s2[i];
            sig_power += v * v;
        }
        real noise_power = 0;
        for (real& v : noise) {
            v = rng.normal();
            noise_power += v * v;
        }
        const real want = sig_power * std::pow(real(10), -*cfg.noise_snr_db / real(10));
        if (noise_power > real(0)) {
            const real k = std::sqrt(want / noise_power);
            for (real& v : noise) v *= k;
        }
    }

    Mixture m;
    m.sources[0] = Waveform{std::move(s1), cfg.sample_rate};
    m.sources[1] = Waveform{std::move(s2), cfg.sample_rate};
    m.noise = Waveform{std::move(noise), cfg.sample_rate};
    m.mixture.sample_rate = cfg.sample_rate;
    m.mixture.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        m.mixture.samples[i] =
            m.sources[0].samples[i] + m.sources[1].samples[i] + m.noise.samples[i];
    return m;
}

real si_sdr(const std::vector<real>& est, const std::vector<real>& ref) {
    if (est.size() != ref.size() || est.empty())
        throw std::invalid_argument("si_sdr: length mismatch or empty input");
    real dot = 0, ref_energy = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        dot += est[i] * ref[i];
        ref_energy += ref[i] * ref[i];
    }
    if (ref_energy == real(0)) throw std::invalid_argument("si_sdr: zero reference");
    const real alpha = dot / ref_energy;
    real target_energy = 0, residual_energy = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const real target = alpha * ref[i];
        const real resid = target - est[i];
        target_energy += target * target;
        residual_energy += resid * resid;
    }
    const real cap = 120;
    if (target_energy == real(0)) return -cap;
    if (residual_energy == real(0)) return cap;
    const real db = 10 * std::log10(target_energy / residual_energy);
    return std::min(std::max(db, -cap), cap);
}

real si_sdr(const Waveform& est, const Waveform& ref) { return si_sdr(est.samples, ref.samples); }

void write_wav(const std::string& path, const Waveform& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_wav: cannot open " + path);
    const std::uint32_t sr = static_cast<std::uint32_t>(w.sample_rate);
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.size() * 2);
    const std::uint32_t byte_rate = sr * 2;
    const std::uint32_t riff_size = 36 + data_bytes;
    const std::uint16_t block_align = 2, bits = 16, pcm = 1, channels = 1;

    auto put32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
    out.write("RIFF", 4);
    put32(riff_size);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put32(16);
    put16(pcm);
    put16(channels);
    put32(sr);
    put32(byte_rate);
    put16(block_align);
    put16(bits);
    out.write("data", 4);
    put32(data_bytes);
    for (real v : w.samples) {
        const real clamped = std::min(std::max(v, real(-1)), real(1));
        const std::int16_t q = static_cast<std::int16_t>(std::lround(clamped * 32767));
        out.write(reinterpret_cast<const char*>(&q), 2);
    }
    if (!out) throw std::runtime_error("write_wav: write failed for " + path);
}

}  // namespace cliplab
