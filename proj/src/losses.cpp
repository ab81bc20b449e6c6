#include "cliplab/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace cliplab {

Tensor psa_target(const Spectrogram& mixture, const Spectrogram& source) {
    if (!mixture.re.same_shape(source.re))
        throw std::invalid_argument("psa_target: mixture/source shape mismatch");
    Tensor target(mixture.re.shape());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const real mag_x = std::hypot(mixture.re[i], mixture.im[i]);
        const real mag_s = std::hypot(source.re[i], source.im[i]);
        real cos_d = 1;
        if (mag_x > real(0) && mag_s > real(0)) {
            const real cross = mixture.re[i] * source.re[i] + mixture.im[i] * source.im[i];
            cos_d = cross / (mag_x * mag_s);
        }
        target[i] = std::min(std::max(mag_s * cos_d, real(0)), mag_x);
    }
    return target;
}

Value loss_mi(Graph& g, Value est_mag, const Spectrogram& mixture, const Spectrogram& source) {
    if (!est_mag.tensor().same_shape(mixture.re))
        throw std::invalid_argument("loss_mi: estimate/spectrogram shape mismatch");
    const real n = static_cast<real>(est_mag.tensor().size());
    Value diff = sub(est_mag, g.constant(psa_target(mixture, source)));
    return scale(l1_norm(diff), real(1) / n);
}

namespace {

void check_assignment(const Tensor& y, std::size_t n) {
    if (y.rank() != 2 || y.dim(0) != n)
        throw std::invalid_argument("assignment matrix has the wrong shape");
    for (std::size_t i = 0; i < n; ++i) {
        real row_sum = 0;
        for (std::size_t c = 0; c < y.dim(1); ++c) {
            const real e = y.at(i, c);
            if (e != real(0) && e != real(1))
                throw std::invalid_argument("assignment matrix entries must be 0 or 1");
            row_sum += e;
        }
        if (row_sum != real(1))
            throw std::invalid_argument("assignment matrix rows must be one-hot");
    }
}

}  // namespace

Value loss_dc(Graph& g, Value v, const Tensor& y, const Tensor& w) {
    const Tensor& tv = v.tensor();
    if (tv.rank() != 2) throw std::invalid_argument("loss_dc: embeddings must be N x D");
    const std::size_t n = tv.dim(0);
    check_assignment(y, n);
    if (w.size() != n) throw std::invalid_argument("loss_dc: weight length mismatch");
    real w_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (w[i] < real(0)) throw std::invalid_argument("loss_dc: negative TF weight");
        w_sum += w[i];
    }
    if (std::fabs(w_sum - real(1)) > real(1e-9))
        throw std::invalid_argument("loss_dc: TF weights must sum to 1");

    Tensor sqrt_w(Shape{n});
    for (std::size_t i = 0; i < n; ++i) sqrt_w[i] = std::sqrt(w[i]);
    const std::size_t c = y.dim(1);
    Tensor yw(Shape{n, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) yw.at(i, j) = sqrt_w[i] * y.at(i, j);

    // || Yw^T Yw ||_F^2 involves no graph values; fold it in as a constant.
    Tensor yty = Tensor::zeros(Shape{c, c});
    kernels::mm_acc_tn(yw.data(), yw.data(), yty.data(), n, c, c);
    real yty_f2 = 0;
    for (real e : yty.raw()) yty_f2 += e * e;

    Value vw = scale_rows(v, sqrt_w);
    Value vtv = matmul(transpose(vw), vw);
    Value vty = matmul(transpose(vw), g.constant(yw));
    Value cross = scale(sum_squares(vty), 2);
    return add_scalar(sub(sum_squares(vtv), cross), yty_f2);
}

Value loss_wkm(Graph& g, Value v, const Tensor& y) {
    const Tensor& tv = v.tensor();
    if (tv.rank() != 2) throw std::invalid_argument("loss_wkm: embeddings must be N x D");
    const std::size_t n = tv.dim(0), d = tv.dim(1);
    check_assignment(y, n);

    Tensor yty = Tensor::zeros(Shape{y.dim(1), y.dim(1)});
    kernels::mm_acc_tn(y.data(), y.data(), yty.data(), n, y.dim(1), y.dim(1));
    Tensor yty_inv = kernels::mat_inverse(yty);

    Value vt = transpose(v);
    Value vty = matmul(vt, g.constant(y));
    Value gram_inv = inverse(matmul(vt, v));
    Value projected = matmul(matmul(gram_inv, vty), matmul(g.constant(yty_inv), transpose(vty)));
    return add_scalar(neg(trace(projected)), static_cast<real>(d));
}

Value loss_chimera(Value mi, Value wkm, real alpha) {
    if (!(alpha >= real(0) && alpha <= real(1)))
        throw std::invalid_argument("loss_chimera: alpha must lie in [0, 1]");
    return add(scale(mi, alpha), scale(wkm, real(1) - alpha));
}

Value loss_snr(Graph& g, Value est, const Tensor& ref) {
    if (!est.tensor().same_shape(ref))
        throw std::invalid_argument("loss_snr: estimate/reference shape mismatch");
    real ref_energy = 0;
    for (real v : ref.raw()) ref_energy += v * v;
    if (ref_energy == real(0)) throw std::invalid_argument("loss_snr: zero reference");

    const real eps = real(1e-8) * ref_energy;
    const real ln10 = std::log(real(10));
    Value resid = sum_squares(sub(est, g.constant(ref)));
    Value db = scale(log(add_scalar(resid, eps)), 10 / ln10);
    return add_scalar(db, -10 * std::log10(ref_energy));
}

Value pit2(const std::function<Value(std::size_t est, std::size_t ref)>& pair_loss) {
    Value straight = add(pair_loss(0, 0), pair_loss(1, 1));
    Value swapped = add(pair_loss(0, 1), pair_loss(1, 0));
    return straight.scalar() <= swapped.scalar() ? straight : swapped;
}

Value pit_snr(Graph& g, const std::vector<Value>& est, const std::vector<Tensor>& ref) {
    if (est.size() != 2 || ref.size() != 2)
        throw std::invalid_argument("pit_snr: exactly two estimates and two references");
    return pit2([&](std::size_t e, std::size_t r) { return loss_snr(g, est[e], ref[r]); });
}

Value pit_mi(Graph& g, const std::vector<Value>& est_mags, const Spectrogram& mixture,
             const std::vector<Spectrogram>& sources) {
    if (est_mags.size() != 2 || sources.size() != 2)
        throw std::invalid_argument("pit_mi: exactly two estimates and two sources");
    return pit2(
        [&](std::size_t e, std::size_t r) { return loss_mi(g, est_mags[e], mixture, sources[r]); });
}

Tensor uniform_tf_weights(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_tf_weights: empty");
    return Tensor::full(Shape{n}, real(1) / static_cast<real>(n));
}

Tensor magnitude_tf_weights(const Tensor& mixture_mag) {
    real total = 0;
    for (real v : mixture_mag.raw()) {
        if (v < real(0)) throw std::invalid_argument("magnitude_tf_weights: negative magnitude");
        total += v;
    }
    if (total == real(0))
        throw std::invalid_argument("magnitude_tf_weights: all-zero magnitudes");
    Tensor w(Shape{mixture_mag.size()});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = mixture_mag[i] / total;
    return w;
}

Tensor dominant_source_assignment(const std::vector<Spectrogram>& sources) {
    if (sources.empty()) throw std::invalid_argument("dominant_source_assignment: no sources");
    const std::size_t n = sources[0].re.size();
    for (const Spectrogram& s : sources)
        if (s.re.size() != n)
            throw std::invalid_argument("dominant_source_assignment: shape mismatch");
    Tensor y = Tensor::zeros(Shape{n, sources.size()});
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        real best_mag = -1;
        for (std::size_t c = 0; c < sources.size(); ++c) {
            const real mag = std::hypot(sources[c].re[i], sources[c].im[i]);
            if (mag > best_mag) {
                best_mag = mag;
                best = c;
            }
        }
        y.at(i, best) = 1;
    }
    return y;
}

}  // namespace cliplab
