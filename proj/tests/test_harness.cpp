#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cliplab/harness.hpp"

using namespace cliplab;

namespace {

// Small enough that a full run takes a fraction of a second, large enough
// that every code path (batching, recording, validation) is exercised.
RunConfig tiny_config() {
    RunConfig cfg;
    cfg.loss = LossKind::mi;
    cfg.seed = 11;
    cfg.epochs = 6;
    cfg.batch_size = 4;
    cfg.record_every = 5;
    cfg.model.layers = 1;
    cfg.model.hidden = 8;
    cfg.data.train_mixtures = 12;
    cfg.data.val_mixtures = 3;
    cfg.data.crop_frames = 12;
    cfg.data.mixture.duration = real(0.35);
    cfg.normalize();
    return cfg;
}

bool same_bits(const Parameters& a, const Parameters& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].shape() != b[i].shape()) return false;
        if (std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(real)) != 0)
            return false;
    }
    return true;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("loss names round-trip and unknown names are rejected") {
    for (LossKind kind : all_losses()) {
        CHECK(loss_from_name(loss_name(kind)) == kind);
    }
    CHECK(std::string(loss_name(LossKind::mi)) == "mi");
    CHECK(std::string(loss_name(LossKind::chimera)) == "chimera");
    CHECK(all_losses().size() == 5);
    CHECK_THROWS_AS((void)loss_from_name("tasnet"), std::invalid_argument);
    CHECK_THROWS_AS((void)loss_from_name(""), std::invalid_argument);
}

TEST_CASE("empty JSON yields the default config") {
    RunConfig cfg = run_config_from_json_text("{}");
    RunConfig def;
    def.normalize();
    CHECK(cfg.loss == def.loss);
    CHECK(cfg.seed == def.seed);
    CHECK(cfg.epochs == def.epochs);
    CHECK(cfg.batch_size == def.batch_size);
    CHECK(cfg.clip.mode == ClipMode::autoclip);
    CHECK(cfg.clip.p == def.clip.p);
    CHECK(cfg.optimizer.lr == def.optimizer.lr);
    CHECK(cfg.model.bins == cfg.stft.bins());
    CHECK(cfg.model.mask_head);
    CHECK_FALSE(cfg.model.embedding_head);
    CHECK(cfg.data.train_mixtures == def.data.train_mixtures);
    CHECK_FALSE(cfg.data.mixture.noise_snr_db.has_value());
}

TEST_CASE("config JSON round-trips every independent knob") {
    RunConfig cfg;
    cfg.loss = LossKind::chimera;
    cfg.seed = 909;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.record_every = 7;
    cfg.loss_scale = real(2.5);
    cfg.chimera_alpha = real(0.6);
    cfg.clip.mode = ClipMode::static_threshold;
    cfg.clip.static_value = real(0.75);
    cfg.clip.p = 25;
    cfg.clip.window = 300;
    cfg.optimizer.lr = real(5e-4);
    cfg.optimizer.beta2 = real(0.99);
    cfg.model.layers = 3;
    cfg.model.hidden = 12;
    cfg.model.embedding_dim = 4;
    cfg.model.bidirectional = true;
    cfg.data.train_mixtures = 5;
    cfg.data.val_mixtures = 2;
    cfg.data.crop_frames = 9;
    cfg.data.mixture.duration = real(0.5);
    cfg.data.mixture.gain_spread_db = 3;
    cfg.data.mixture.noise_snr_db = 18;
    cfg.normalize();

    RunConfig back = run_config_from_json_text(run_config_to_json_text(cfg));
    CHECK(back.loss == cfg.loss);
    CHECK(back.seed == cfg.seed);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.record_every == cfg.record_every);
    CHECK(back.loss_scale == cfg.loss_scale);
    CHECK(back.chimera_alpha == cfg.chimera_alpha);
    CHECK(back.clip.mode == cfg.clip.mode);
    CHECK(back.clip.static_value == cfg.clip.static_value);
    CHECK(back.clip.p == cfg.clip.p);
    CHECK(back.clip.window == cfg.clip.window);
    CHECK(back.optimizer.lr == cfg.optimizer.lr);
    CHECK(back.optimizer.beta2 == cfg.optimizer.beta2);
    CHECK(back.model.layers == cfg.model.layers);
    CHECK(back.model.hidden == cfg.model.hidden);
    CHECK(back.model.embedding_dim == cfg.model.embedding_dim);
    CHECK(back.model.bidirectional == cfg.model.bidirectional);
    CHECK(back.model.mask_head);
    CHECK(back.model.embedding_head);
    CHECK(back.data.train_mixtures == cfg.data.train_mixtures);
    CHECK(back.data.val_mixtures == cfg.data.val_mixtures);
    CHECK(back.data.crop_frames == cfg.data.crop_frames);
    CHECK(back.data.mixture.duration == cfg.data.mixture.duration);
    CHECK(back.data.mixture.gain_spread_db == cfg.data.mixture.gain_spread_db);
    CHECK(back.data.mixture.noise_snr_db == cfg.data.mixture.noise_snr_db);
}

TEST_CASE("config validation rejects inconsistent settings") {
    RunConfig cfg = tiny_config();
    SUBCASE("percentile out of range") {
        cfg.clip.p = 101;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("static mode needs a positive threshold") {
        cfg.clip.mode = ClipMode::static_threshold;
        cfg.clip.static_value = 0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("zero epochs") {
        cfg.epochs = 0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("zero batch") {
        cfg.batch_size = 0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("non-positive loss scale") {
        cfg.loss_scale = 0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("chimera alpha outside the unit interval") {
        cfg.loss = LossKind::chimera;
        cfg.normalize();
        cfg.chimera_alpha = real(1.5);
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("head mismatch with the loss") {
        cfg.model.mask_head = false;
        cfg.model.embedding_head = true;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("spectrogram width mismatch") {
        cfg.model.bins = 65;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("bad JSON text") {
        CHECK_THROWS((void)run_config_from_json_text("{"));
    }
}

TEST_CASE("iteration count comes from epochs and dataset size") {
    RunConfig cfg = tiny_config();
    CHECK(cfg.iterations_per_epoch() == 3);
    CHECK(cfg.iterations() == 18);
    cfg.data.train_mixtures = 2;  // smaller than the batch: still one step per epoch
    CHECK(cfg.iterations_per_epoch() == 1);
    CHECK(cfg.iterations() == 6);
}

TEST_CASE("results CSV round-trips, including failed rows") {
    std::vector<ResultRow> rows(3);
    rows[0] = {"10", "mi", real(7.25), real(0.03125), real(0.875)};
    rows[1] = {"static", "snr", real(-1.5), real(12.75), real(1)};
    rows[2] = {"100", "dc", std::nullopt, std::nullopt, std::nullopt};

    std::string csv = results_to_csv(rows);
    CHECK(csv == "p,loss,si_sdr_db,final_train_loss,fire_fraction\n"
                 "10,mi,7.25,0.03125,0.875\n"
                 "static,snr,-1.5,12.75,1\n"
                 "100,dc,,,\n");
    CHECK(results_from_csv(csv) == rows);
    CHECK(rows[2].failed());
    CHECK_FALSE(rows[0].failed());

    CHECK_THROWS_AS((void)results_from_csv("x,y\n1,2\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)results_from_csv(""), std::invalid_argument);
}

TEST_CASE("checkpoint JSON round-trip is bit-exact") {
    Checkpoint c;
    c.iteration = 41;
    c.params.push_back(Tensor({2, 3}, {real(0.1), real(1) / 3, real(-0.0), real(1e-308),
                                       real(1.7e308), real(-2.5)}));
    c.params.push_back(Tensor::vector({real(0.3), real(7)}));
    c.adam = AdamState::init(c.params);
    c.adam.t = 41;
    c.adam.m[0].data()[1] = real(0.2) + real(1e-17);
    c.adam.v[1].data()[0] = real(0.123456789012345678);
    c.history = GradNormHistory::from_values({real(0.5), real(2.25), real(0.9)}, 128);
    c.fired = 17;
    c.train_losses = {real(0.75), real(1) / 7};
    {
        Rng r(99);
        for (int i = 0; i < 5; ++i) (void)r.bits();
        std::ostringstream os;
        r.save(os);
        c.rng_state = os.str();
    }
    DynamicsRecord rec;
    rec.iteration = 20;
    rec.loss = real(0.3);
    rec.grad_norm = real(1.5);
    rec.clip_threshold = real(1.25);
    rec.fired = true;
    rec.step_size = real(0.01);
    rec.smoothness = real(2.5);
    c.dynamics.push_back(rec);
    rec.iteration = 40;
    rec.smoothness.reset();
    c.dynamics.push_back(rec);

    std::string text = checkpoint_to_json_text(c);
    Checkpoint back = checkpoint_from_json_text(text);
    CHECK(back.iteration == c.iteration);
    CHECK(same_bits(back.params, c.params));
    CHECK(same_bits(back.adam.m, c.adam.m));
    CHECK(same_bits(back.adam.v, c.adam.v));
    CHECK(back.adam.t == c.adam.t);
    CHECK(back.history.to_values() == c.history.to_values());
    CHECK(back.history.window() == c.history.window());
    CHECK(back.rng_state == c.rng_state);
    CHECK(back.fired == c.fired);
    CHECK(back.train_losses == c.train_losses);
    REQUIRE(back.dynamics.size() == 2);
    CHECK(back.dynamics[0].smoothness == c.dynamics[0].smoothness);
    CHECK_FALSE(back.dynamics[1].smoothness.has_value());
    // A second hop must produce the identical text.
    CHECK(checkpoint_to_json_text(back) == text);

    std::string path = temp_path("cliplab_test_roundtrip.json");
    save_checkpoint(path, c);
    Checkpoint disk = load_checkpoint(path);
    CHECK(checkpoint_to_json_text(disk) == text);
    std::filesystem::remove(path);
}

TEST_CASE("training is deterministic for a fixed config") {
    RunConfig cfg = tiny_config();
    RunOutput a = run_training(cfg);
    RunOutput b = run_training(cfg);
    CHECK(same_bits(a.params, b.params));
    CHECK(a.row == b.row);
    CHECK(a.dynamics.to_csv() == b.dynamics.to_csv());

    CHECK(a.row.p == "10");
    CHECK(a.row.loss == "mi");
    REQUIRE_FALSE(a.row.failed());
    CHECK(std::isfinite(*a.row.si_sdr_db));
    CHECK(*a.row.final_train_loss > 0);
    CHECK(*a.row.fire_fraction >= 0);
    CHECK(*a.row.fire_fraction <= 1);

    RunConfig other = cfg;
    other.seed = 12;
    RunOutput c = run_training(other);
    CHECK_FALSE(same_bits(a.params, c.params));
}

TEST_CASE("percentile 100 never fires and matches unclipped training bit for bit") {
    RunConfig at100 = tiny_config();
    at100.clip.p = 100;
    RunConfig off = tiny_config();
    off.clip.mode = ClipMode::none;

    RunOutput a = run_training(at100);
    RunOutput b = run_training(off);
    CHECK(same_bits(a.params, b.params));
    CHECK(*a.row.fire_fraction == 0);
    CHECK(a.row.si_sdr_db == b.row.si_sdr_db);
    CHECK(a.row.final_train_loss == b.row.final_train_loss);
    CHECK(a.row.p == "100");
    CHECK(b.row.p == "none");
}

TEST_CASE("recording cadence does not perturb the optimization path") {
    RunConfig sparse = tiny_config();
    sparse.record_every = 1000;  // beyond the horizon: no records at all
    RunConfig dense = tiny_config();
    dense.record_every = 2;

    RunOutput a = run_training(sparse);
    RunOutput b = run_training(dense);
    CHECK(same_bits(a.params, b.params));
    CHECK(a.row == b.row);
    CHECK(a.dynamics.records().empty());
    CHECK(b.dynamics.records().size() == 9);
}

TEST_CASE("dynamics records carry raw norms and the active threshold") {
    RunConfig cfg = tiny_config();
    cfg.record_every = 4;
    RunOutput out = run_training(cfg);
    REQUIRE_FALSE(out.dynamics.records().empty());
    for (const DynamicsRecord& rec : out.dynamics.records()) {
        CHECK(rec.iteration % 4 == 0);
        CHECK(rec.grad_norm > 0);
        CHECK(rec.clip_threshold > 0);
        CHECK(rec.step_size > 0);
        if (rec.fired) CHECK(rec.grad_norm > rec.clip_threshold);
        if (rec.smoothness) CHECK(*rec.smoothness >= 0);
    }
}

TEST_CASE("a resumed checkpoint reproduces the uninterrupted run") {
    std::string path = temp_path("cliplab_test_resume.json");
    RunConfig cfg = tiny_config();

    RunOutput whole = run_training(cfg);

    TrainHooks save;
    save.save_at = 7;
    save.save_path = path;
    RunOutput with_save = run_training(cfg, save);
    CHECK(same_bits(whole.params, with_save.params));
    CHECK(whole.row == with_save.row);

    Checkpoint mid = load_checkpoint(path);
    CHECK(mid.iteration == 7);

    TrainHooks resume;
    resume.resume_from = path;
    RunOutput rest = run_training(cfg, resume);
    CHECK(same_bits(whole.params, rest.params));
    CHECK(whole.row == rest.row);
    CHECK(whole.dynamics.to_csv() == rest.dynamics.to_csv());
    std::filesystem::remove(path);
}

TEST_CASE("sweep covers every cell and its table round-trips") {
    RunConfig base = tiny_config();
    base.epochs = 4;
    std::vector<real> ps{10, 100};
    std::vector<LossKind> losses{LossKind::mi, LossKind::snr};

    std::vector<ResultRow> rows = run_sweep(base, ps, losses);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].p == "10");
    CHECK(rows[0].loss == "mi");
    CHECK(rows[1].p == "10");
    CHECK(rows[1].loss == "snr");
    CHECK(rows[2].p == "100");
    CHECK(rows[3].p == "100");
    for (const ResultRow& row : rows) CHECK_FALSE(row.failed());

    CHECK(results_from_csv(results_to_csv(rows)) == rows);

    // Cell results do not depend on sweep order.
    std::vector<ResultRow> flipped = run_sweep(base, {100, 10}, losses);
    CHECK(flipped[0] == rows[2]);
    CHECK(flipped[1] == rows[3]);
    CHECK(flipped[2] == rows[0]);
    CHECK(flipped[3] == rows[1]);
}

TEST_CASE("a non-finite loss aborts with the failing iteration") {
    RunConfig cfg = tiny_config();
    cfg.data.mixture.noise_snr_db = -300;  // drives spectrogram magnitudes to ~1e15
    cfg.loss_scale = real(1e300);          // and the scaled loss past the double range
    cfg.validate();

    CHECK_THROWS_AS((void)run_training(cfg), TrainAbort);
    try {
        (void)run_training(cfg);
    } catch (const TrainAbort& e) {
        CHECK(e.iteration == 1);
        CHECK(std::string(e.what()).find("iteration 1") == 0);
    }

    // The sweep records the failure and keeps going.
    std::vector<ResultRow> rows = run_sweep(cfg, {10, 100}, {LossKind::mi});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].failed());
    CHECK(rows[1].failed());
    CHECK(rows[0].p == "10");
    CHECK(rows[0].loss == "mi");
    CHECK(results_from_csv(results_to_csv(rows)) == rows);
}

TEST_CASE("gradient checks pass for every loss") {
    for (LossKind kind : all_losses()) {
        GradCheckReport rep = gradcheck(kind, 7);
        INFO(rep.text());
        CHECK(rep.pass);
        CHECK(rep.max_rel_error < rep.tolerance);
        CHECK(rep.loss == kind);
        CHECK(rep.text().find("PASS") != std::string::npos);
        CHECK(rep.text().find(loss_name(kind)) != std::string::npos);
        CHECK(gradcheck(kind, 7).text() == rep.text());
    }
}

TEST_CASE("k-means separates well-spread clusters") {
    std::vector<real> pts;
    const std::size_t per = 20;
    Rng noise(5);
    for (std::size_t i = 0; i < per; ++i)
        for (std::size_t d = 0; d < 3; ++d) pts.push_back(real(noise.uniform(-0.5, 0.5)));
    for (std::size_t i = 0; i < per; ++i)
        for (std::size_t d = 0; d < 3; ++d) pts.push_back(real(10 + noise.uniform(-0.5, 0.5)));
    Tensor points({2 * per, 3}, pts);

    Rng rng(3);
    std::vector<std::size_t> labels = kmeans_labels(points, 2, rng);
    REQUIRE(labels.size() == 2 * per);
    for (std::size_t i = 1; i < per; ++i) CHECK(labels[i] == labels[0]);
    for (std::size_t i = per + 1; i < 2 * per; ++i) CHECK(labels[i] == labels[per]);
    CHECK(labels[0] != labels[per]);

    Rng rng2(3);
    CHECK(kmeans_labels(points, 2, rng2) == labels);

    Rng rng3(8);
    std::vector<std::size_t> ones = kmeans_labels(points, 1, rng3);
    for (std::size_t lab : ones) CHECK(lab == 0);

    Tensor three({3, 2}, {0, 0, 10, 0, 0, 10});
    Rng rng4(1);
    std::vector<std::size_t> distinct = kmeans_labels(three, 3, rng4);
    CHECK(distinct[0] != distinct[1]);
    CHECK(distinct[1] != distinct[2]);
    CHECK(distinct[0] != distinct[2]);
}

TEST_CASE("train abort reports iteration and reason") {
    TrainAbort e(3, "loss is not finite");
    CHECK(e.iteration == 3);
    CHECK(std::string(e.what()) == "iteration 3: loss is not finite");
}
