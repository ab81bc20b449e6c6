#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cliplab/grad_check.hpp"
#include "cliplab/losses.hpp"
#include "cliplab/model.hpp"
#include "cliplab/rng.hpp"
#include "cliplab/signal.hpp"

using namespace cliplab;

namespace {

Spectrogram random_spectrogram(Rng& rng, std::size_t frames, std::size_t bins, real span = 2) {
    Spectrogram s;
    s.re = Tensor(Shape{frames, bins});
    s.im = Tensor(Shape{frames, bins});
    for (real& v : s.re.raw()) v = rng.uniform(-span, span);
    for (real& v : s.im.raw()) v = rng.uniform(-span, span);
    return s;
}

Spectrogram crop_frames(const Spectrogram& s, std::size_t t0, std::size_t t1) {
    const std::size_t k = s.bins();
    Spectrogram out;
    out.re = Tensor(Shape{t1 - t0, k});
    out.im = Tensor(Shape{t1 - t0, k});
    for (std::size_t t = t0; t < t1; ++t)
        for (std::size_t j = 0; j < k; ++j) {
            out.re.at(t - t0, j) = s.re.at(t, j);
            out.im.at(t - t0, j) = s.im.at(t, j);
        }
    return out;
}

using LossBuilder = std::function<Value(Graph&, const std::vector<Value>&)>;

real fd_error(const LossBuilder& build, const std::vector<Tensor>& theta) {
    Graph g;
    std::vector<Value> ps = g.params(theta);
    GradVector analytic = g.backward(build(g, ps));
    std::vector<Tensor> fd = finite_diff_grad(
        [&](const std::vector<Tensor>& th) {
            Graph g2;
            std::vector<Value> p2 = g2.params(th);
            return build(g2, p2).scalar();
        },
        theta);
    return max_rel_error(analytic.grads, fd);
}

}  // namespace

TEST_CASE("init_params is bit-identical under the same seed") {
    SeparatorConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 8;
    cfg.bins = 12;
    Parameters a = Separator::init_params(cfg, 2024);
    Parameters b = Separator::init_params(cfg, 2024);
    REQUIRE(a.size() == b.size());
    for (std::size_t p = 0; p < a.size(); ++p) {
        REQUIRE(a[p].same_shape(b[p]));
        for (std::size_t i = 0; i < a[p].size(); ++i) CHECK(a[p][i] == b[p][i]);
    }
}

TEST_CASE("init_params differs across seeds") {
    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 8;
    cfg.bins = 12;
    Parameters a = Separator::init_params(cfg, 1);
    Parameters b = Separator::init_params(cfg, 2);
    bool any_diff = false;
    for (std::size_t p = 0; p < a.size(); ++p)
        for (std::size_t i = 0; i < a[p].size(); ++i)
            if (a[p][i] != b[p][i]) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("parameter count matches the closed-form architecture arithmetic") {
    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 16;
    cfg.bins = 129;
    cfg.mask_head = true;
    cfg.embedding_head = false;
    cfg.sources = 2;
    Separator sep(cfg);
    // Each cell matrix maps [input, hidden, 1] to hidden units; the mask
    // head maps [hidden, 1] to one sigmoid per source and bin.
    const std::size_t gate = (129 + 16 + 1) * 16;
    const std::size_t cand = (129 + 16 + 1) * 16;
    const std::size_t mask = (16 + 1) * (2 * 129);
    CHECK(sep.param_count() == gate + cand + mask);
    CHECK(sep.param_count() == 9058u);
    CHECK(sep.param_names().size() == sep.param_shapes().size());
}

TEST_CASE("bidirectional layers double the feature width downstream") {
    SeparatorConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 6;
    cfg.bins = 10;
    cfg.bidirectional = true;
    cfg.mask_head = true;
    cfg.embedding_head = true;
    cfg.embedding_dim = 4;
    Separator sep(cfg);
    std::vector<Shape> shapes = sep.param_shapes();
    REQUIRE(shapes.size() == 10);
    // Layer 0 sees the input bins, layer 1 sees both directions of layer 0.
    CHECK(shapes[0] == Shape{10 + 6 + 1, 6});
    CHECK(shapes[4] == Shape{12 + 6 + 1, 6});
    CHECK(shapes[8] == Shape{12 + 1, 2 * 10});
    CHECK(shapes[9] == Shape{12 + 1, 10 * 4});
}

TEST_CASE("gate bias row starts open, candidate bias row starts neutral") {
    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 5;
    cfg.bins = 7;
    Parameters p = Separator::init_params(cfg, 3);
    const Tensor& gate = p[0];
    const Tensor& cand = p[1];
    for (std::size_t c = 0; c < 5; ++c) {
        CHECK(gate.at(gate.rows() - 1, c) == real(1));
        CHECK(cand.at(cand.rows() - 1, c) == real(0));
    }
}

TEST_CASE("init weights respect the fan-in bound") {
    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.bins = 20;
    Parameters p = Separator::init_params(cfg, 99);
    Separator sep(cfg);
    std::vector<Shape> shapes = sep.param_shapes();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const real bound = real(1) / std::sqrt(static_cast<real>(shapes[i][0] - 1));
        for (std::size_t r = 0; r + 1 < p[i].rows(); ++r)
            for (std::size_t c = 0; c < p[i].cols(); ++c)
                CHECK(std::fabs(p[i].at(r, c)) <= bound);
    }
}

TEST_CASE("forward output shapes match the config") {
    SeparatorConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 6;
    cfg.bins = 9;
    cfg.mask_head = true;
    cfg.embedding_head = true;
    cfg.embedding_dim = 4;
    cfg.sources = 2;
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 11);

    const std::size_t t = 5, batch = 3;
    Rng rng(12);
    Tensor x(Shape{t * batch, cfg.bins});
    for (real& v : x.raw()) v = rng.uniform(-2, 2);

    Graph g;
    Separator::Forward out = sep.forward(g, g.params(theta), g.constant(x), batch);
    REQUIRE(out.masks.size() == 2);
    for (const Value& m : out.masks) CHECK(m.shape() == Shape{t * batch, cfg.bins});
    REQUIRE(out.embeddings.has_value());
    CHECK(out.embeddings->shape() == Shape{t * batch * cfg.bins, cfg.embedding_dim});
}

TEST_CASE("mask entries lie strictly inside the unit interval") {
    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 5;
    cfg.bins = 8;
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 21);
    Rng rng(22);
    Tensor x(Shape{6, cfg.bins});
    for (real& v : x.raw()) v = rng.uniform(-4, 4);
    Graph g;
    Separator::Forward out = sep.forward(g, g.params(theta), g.constant(x), 1);
    for (const Value& m : out.masks)
        for (real v : m.tensor().raw()) {
            CHECK(v > real(0));
            CHECK(v < real(1));
        }
}

TEST_CASE("embedding rows are unit norm") {
    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 5;
    cfg.bins = 8;
    cfg.mask_head = false;
    cfg.embedding_head = true;
    cfg.embedding_dim = 4;
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 31);
    Rng rng(32);
    Tensor x(Shape{6, cfg.bins});
    for (real& v : x.raw()) v = rng.uniform(-4, 4);
    Graph g;
    Separator::Forward out = sep.forward(g, g.params(theta), g.constant(x), 1);
    const Tensor& v = out.embeddings->tensor();
    for (std::size_t r = 0; r < v.rows(); ++r) {
        real norm2 = 0;
        for (std::size_t c = 0; c < v.cols(); ++c) norm2 += v.at(r, c) * v.at(r, c);
        CHECK(std::fabs(std::sqrt(norm2) - real(1)) <= real(1e-6));
    }
}

TEST_CASE("forward is deterministic given params and input") {
    SeparatorConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 7;
    cfg.bins = 10;
    cfg.bidirectional = true;
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 44);
    Rng rng(45);
    Tensor x(Shape{8, cfg.bins});
    for (real& v : x.raw()) v = rng.uniform(-2, 2);

    Graph g1, g2;
    Separator::Forward a = sep.forward(g1, g1.params(theta), g1.constant(x), 2);
    Separator::Forward b = sep.forward(g2, g2.params(theta), g2.constant(x), 2);
    for (std::size_t s = 0; s < a.masks.size(); ++s) {
        const Tensor& ta = a.masks[s].tensor();
        const Tensor& tb = b.masks[s].tensor();
        for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i] == tb[i]);
    }
}

TEST_CASE("forward rejects malformed inputs") {
    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.bins = 6;
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 5);
    Tensor x = Tensor::zeros(Shape{6, 6});
    Graph g;
    std::vector<Value> ps = g.params(theta);
    CHECK_THROWS_AS(sep.forward(g, ps, g.constant(x), 4), std::invalid_argument);
    CHECK_THROWS_AS(sep.forward(g, {ps[0]}, g.constant(x), 1), std::invalid_argument);
    CHECK_THROWS_AS(sep.forward(g, ps, g.constant(Tensor::zeros(Shape{6, 5})), 1),
                    std::invalid_argument);
}

TEST_CASE("sequence row indexing walks the time-major stack") {
    std::vector<std::size_t> rows = Separator::sequence_rows(3, 2, 1);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == 1);
    CHECK(rows[1] == 3);
    CHECK(rows[2] == 5);

    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.bins = 3;
    Separator sep(cfg);
    std::vector<std::size_t> tf = sep.sequence_tf_rows(2, 2, 1);
    REQUIRE(tf.size() == 6);
    // Sequence 1 owns rows 1 and 3 of the stack; each row spans bins
    // consecutive TF points.
    CHECK(tf[0] == 3);
    CHECK(tf[2] == 5);
    CHECK(tf[3] == 9);
    CHECK_THROWS_AS(Separator::sequence_rows(3, 2, 2), std::invalid_argument);
}

TEST_CASE("log magnitude floors silence and rejects negative input") {
    Tensor mag = Tensor::matrix(1, 3, {0, real(0.99), 9});
    Tensor lm = log_magnitude(mag, real(0.01));
    CHECK(lm[0] == doctest::Approx(std::log(0.01)).epsilon(1e-12));
    CHECK(lm[1] == doctest::Approx(std::log(1.0)).epsilon(1e-12));
    CHECK(lm[2] == doctest::Approx(std::log(9.01)).epsilon(1e-12));
    Tensor bad = Tensor::matrix(1, 1, {-1});
    CHECK_THROWS_AS(log_magnitude(bad), std::invalid_argument);
    CHECK_THROWS_AS(log_magnitude(mag, 0), std::invalid_argument);
}

TEST_CASE("magnitude loss gradient through the full model matches finite differences") {
    Rng rng(1001);
    Spectrogram mix = random_spectrogram(rng, 8, 6);
    Spectrogram s1 = random_spectrogram(rng, 8, 6);
    Spectrogram s2 = random_spectrogram(rng, 8, 6);

    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.bins = 6;
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 1002);
    Tensor logm = log_magnitude(mix.magnitude());
    Tensor mix_mag = mix.magnitude();

    LossBuilder build = [&](Graph& g, const std::vector<Value>& ps) {
        Separator::Forward out = sep.forward(g, ps, g.constant(logm), 1);
        Value mag = g.constant(mix_mag);
        std::vector<Value> est = {mul(out.masks[0], mag), mul(out.masks[1], mag)};
        return pit_mi(g, est, mix, {s1, s2});
    };
    CHECK(fd_error(build, theta) <= real(1e-3));
}

TEST_CASE("clustering loss gradient through the full model matches finite differences") {
    Rng rng(1101);
    Spectrogram mix = random_spectrogram(rng, 8, 6);
    Spectrogram s1 = random_spectrogram(rng, 8, 6);
    Spectrogram s2 = random_spectrogram(rng, 8, 6);
    Tensor y = dominant_source_assignment({s1, s2});
    Tensor w = magnitude_tf_weights(mix.magnitude());

    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.bins = 6;
    cfg.mask_head = false;
    cfg.embedding_head = true;
    cfg.embedding_dim = 8;
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 1102);
    Tensor logm = log_magnitude(mix.magnitude());

    LossBuilder build = [&](Graph& g, const std::vector<Value>& ps) {
        Separator::Forward out = sep.forward(g, ps, g.constant(logm), 1);
        return loss_dc(g, *out.embeddings, y, w);
    };
    CHECK(fd_error(build, theta) <= real(1e-3));
}

TEST_CASE("whitened k-means gradient through the full model matches finite differences") {
    Rng rng(1201);
    Spectrogram mix = random_spectrogram(rng, 8, 6);
    Spectrogram s1 = random_spectrogram(rng, 8, 6);
    Spectrogram s2 = random_spectrogram(rng, 8, 6);
    Tensor y = dominant_source_assignment({s1, s2});

    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.bins = 6;
    cfg.mask_head = false;
    cfg.embedding_head = true;
    cfg.embedding_dim = 8;
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 1202);
    Tensor logm = log_magnitude(mix.magnitude());

    LossBuilder build = [&](Graph& g, const std::vector<Value>& ps) {
        Separator::Forward out = sep.forward(g, ps, g.constant(logm), 1);
        return loss_wkm(g, *out.embeddings, y);
    };
    CHECK(fd_error(build, theta) <= real(1e-3));
}

TEST_CASE("blended loss gradient through the full model matches finite differences") {
    Rng rng(1301);
    Spectrogram mix = random_spectrogram(rng, 8, 6);
    Spectrogram s1 = random_spectrogram(rng, 8, 6);
    Spectrogram s2 = random_spectrogram(rng, 8, 6);
    Tensor y = dominant_source_assignment({s1, s2});

    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.bins = 6;
    cfg.mask_head = true;
    cfg.embedding_head = true;
    cfg.embedding_dim = 8;
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 1302);
    Tensor logm = log_magnitude(mix.magnitude());
    Tensor mix_mag = mix.magnitude();

    LossBuilder build = [&](Graph& g, const std::vector<Value>& ps) {
        Separator::Forward out = sep.forward(g, ps, g.constant(logm), 1);
        Value mag = g.constant(mix_mag);
        std::vector<Value> est = {mul(out.masks[0], mag), mul(out.masks[1], mag)};
        Value mi = pit_mi(g, est, mix, {s1, s2});
        Value wkm = loss_wkm(g, *out.embeddings, y);
        return loss_chimera(mi, wkm, real(0.75));
    };
    CHECK(fd_error(build, theta) <= real(1e-3));
}

TEST_CASE("time-domain loss gradient through masking and synthesis matches finite differences") {
    MixtureConfig mcfg;
    mcfg.duration = real(0.3);
    Mixture m = synth_mixture(1401, mcfg);
    StftPlan plan{STFTConfig{}};
    Spectrogram mix = crop_frames(plan.forward(m.mixture), 2, 10);
    Spectrogram s1 = crop_frames(plan.forward(m.sources[0]), 2, 10);
    Spectrogram s2 = crop_frames(plan.forward(m.sources[1]), 2, 10);
    Tensor ref1 = Tensor::vector(plan.inverse(s1, mcfg.sample_rate).samples);
    Tensor ref2 = Tensor::vector(plan.inverse(s2, mcfg.sample_rate).samples);
    auto [ph_cos, ph_sin] = mix.unit_phase();

    SeparatorConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.bins = plan.bins();
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 1402);
    Tensor logm = log_magnitude(mix.magnitude());
    Tensor mix_mag = mix.magnitude();

    LossBuilder build = [&](Graph& g, const std::vector<Value>& ps) {
        Separator::Forward out = sep.forward(g, ps, g.constant(logm), 1);
        Value mag = g.constant(mix_mag);
        Value pc = g.constant(ph_cos);
        Value psn = g.constant(ph_sin);
        std::vector<Value> waves;
        for (std::size_t s = 0; s < 2; ++s) {
            Value est_mag = mul(out.masks[s], mag);
            waves.push_back(plan.inverse_graph(g, mul(est_mag, pc), mul(est_mag, psn)));
        }
        return pit_snr(g, waves, {ref1, ref2});
    };
    CHECK(fd_error(build, theta) <= real(1e-3));
}

TEST_CASE("gradient norms across random batches have a heavy tail") {
    MixtureConfig mcfg;
    mcfg.duration = real(0.3);
    mcfg.gain_spread_db = 10;

    SeparatorConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 16;
    cfg.bins = STFTConfig{}.bins();
    Separator sep(cfg);
    Parameters theta = Separator::init_params(cfg, 7);
    StftPlan plan{STFTConfig{}};

    const std::size_t crop = 24;
    Rng offsets(8);
    std::vector<real> norms;
    norms.reserve(500);
    for (std::uint64_t seed = 1; seed <= 500; ++seed) {
        Mixture m = synth_mixture(seed, mcfg);
        Spectrogram mix_full = plan.forward(m.mixture);
        const std::size_t t0 = offsets.index(mix_full.frames() - crop + 1);
        Spectrogram mix = crop_frames(mix_full, t0, t0 + crop);
        Spectrogram s1 = crop_frames(plan.forward(m.sources[0]), t0, t0 + crop);
        Spectrogram s2 = crop_frames(plan.forward(m.sources[1]), t0, t0 + crop);

        Graph g;
        std::vector<Value> ps = g.params(theta);
        Separator::Forward out =
            sep.forward(g, ps, g.constant(log_magnitude(mix.magnitude())), 1);
        Value mag = g.constant(mix.magnitude());
        std::vector<Value> est = {mul(out.masks[0], mag), mul(out.masks[1], mag)};
        norms.push_back(g.backward(pit_mi(g, est, mix, {s1, s2})).norm);
    }
    std::sort(norms.begin(), norms.end());
    const real median = norms[norms.size() / 2];
    const real peak = norms.back();
    INFO("median " << median << " max " << peak << " ratio " << peak / median);
    CHECK(peak / median > real(3));
}
