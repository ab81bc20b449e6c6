#include "cliplab/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cliplab/grad_check.hpp"
#include "cliplab/losses.hpp"

namespace cliplab {

using nlohmann::json;

const char* loss_name(LossKind kind) {
    switch (kind) {
        case LossKind::dc: return "dc";
        case LossKind::wkm: return "wkm";
        case LossKind::mi: return "mi";
        case LossKind::chimera: return "chimera";
        case LossKind::snr: return "snr";
    }
    throw std::logic_error("loss_name: bad enum value");
}

LossKind loss_from_name(const std::string& name) {
    for (LossKind k : all_losses())
        if (name == loss_name(k)) return k;
    throw std::invalid_argument("unknown loss name: " + name);
}

std::vector<LossKind> all_losses() {
    return {LossKind::dc, LossKind::wkm, LossKind::mi, LossKind::chimera, LossKind::snr};
}

namespace {

bool uses_mask_head(LossKind k) {
    return k == LossKind::mi || k == LossKind::chimera || k == LossKind::snr;
}

bool uses_embedding_head(LossKind k) {
    return k == LossKind::dc || k == LossKind::wkm || k == LossKind::chimera;
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << text;
}

}  // namespace

void DataConfig::validate() const {
    if (train_mixtures == 0 || val_mixtures == 0)
        throw std::invalid_argument("DataConfig: mixture counts must be positive");
    if (crop_frames == 0) throw std::invalid_argument("DataConfig: crop_frames must be positive");
    mixture.validate();
}

std::size_t RunConfig::iterations_per_epoch() const {
    return std::max<std::size_t>(1, data.train_mixtures / batch_size);
}

std::size_t RunConfig::iterations() const { return epochs * iterations_per_epoch(); }

void RunConfig::normalize() {
    model.bins = stft.bins();
    model.sources = 2;
    model.mask_head = uses_mask_head(loss);
    model.embedding_head = uses_embedding_head(loss);
}

void RunConfig::validate() const {
    data.validate();
    optimizer.validate();
    stft.validate();
    model.validate();
    if (epochs == 0) throw std::invalid_argument("RunConfig: epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("RunConfig: batch_size must be positive");
    if (record_every == 0) throw std::invalid_argument("RunConfig: record_every must be positive");
    if (!is_finite(loss_scale) || loss_scale <= real(0))
        throw std::invalid_argument("RunConfig: loss_scale must be positive and finite");
    if (chimera_alpha < real(0) || chimera_alpha > real(1))
        throw std::invalid_argument("RunConfig: chimera_alpha must lie in [0, 1]");
    if (clip.p < real(0) || clip.p > real(100))
        throw std::invalid_argument("RunConfig: percentile must lie in [0, 100]");
    if (clip.mode == ClipMode::static_threshold && !(clip.static_value > real(0)))
        throw std::invalid_argument("RunConfig: static threshold must be positive");
    if (clip.window && *clip.window == 0)
        throw std::invalid_argument("RunConfig: history window must be positive");
    if (model.bins != stft.bins())
        throw std::invalid_argument("RunConfig: model bins must match the transform");
    if (model.mask_head != uses_mask_head(loss) ||
        model.embedding_head != uses_embedding_head(loss))
        throw std::invalid_argument("RunConfig: heads do not match the loss; call normalize()");
}

RunConfig run_config_from_json_text(const std::string& text) {
    const json j = json::parse(text);
    RunConfig cfg;
    cfg.loss = loss_from_name(j.value("loss", std::string(loss_name(cfg.loss))));
    cfg.seed = j.value("seed", cfg.seed);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.record_every = j.value("record_every", cfg.record_every);
    cfg.loss_scale = j.value("loss_scale", cfg.loss_scale);
    cfg.chimera_alpha = j.value("chimera_alpha", cfg.chimera_alpha);
    if (j.contains("clip")) {
        const json& c = j.at("clip");
        cfg.clip.mode = clip_mode_from_name(c.value("mode", std::string(clip_mode_name(cfg.clip.mode))));
        cfg.clip.p = c.value("p", cfg.clip.p);
        cfg.clip.static_value = c.value("static_value", cfg.clip.static_value);
        if (c.contains("window") && !c.at("window").is_null())
            cfg.clip.window = c.at("window").get<std::size_t>();
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
        cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
        cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        cfg.model.layers = m.value("layers", cfg.model.layers);
        cfg.model.hidden = m.value("hidden", cfg.model.hidden);
        cfg.model.embedding_dim = m.value("embedding_dim", cfg.model.embedding_dim);
        cfg.model.bidirectional = m.value("bidirectional", cfg.model.bidirectional);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        cfg.data.train_mixtures = d.value("train_mixtures", cfg.data.train_mixtures);
        cfg.data.val_mixtures = d.value("val_mixtures", cfg.data.val_mixtures);
        cfg.data.crop_frames = d.value("crop_frames", cfg.data.crop_frames);
        cfg.data.mixture.duration = d.value("duration", cfg.data.mixture.duration);
        cfg.data.mixture.sample_rate = d.value("sample_rate", cfg.data.mixture.sample_rate);
        cfg.data.mixture.gain_spread_db = d.value("gain_spread_db", cfg.data.mixture.gain_spread_db);
        if (d.contains("noise_snr_db") && !d.at("noise_snr_db").is_null())
            cfg.data.mixture.noise_snr_db = d.at("noise_snr_db").get<real>();
    }
    cfg.normalize();
    cfg.validate();
    return cfg;
}

std::string run_config_to_json_text(const RunConfig& cfg) {
    json j;
    j["loss"] = loss_name(cfg.loss);
    j["seed"] = cfg.seed;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["record_every"] = cfg.record_every;
    j["loss_scale"] = cfg.loss_scale;
    j["chimera_alpha"] = cfg.chimera_alpha;
    j["clip"]["mode"] = clip_mode_name(cfg.clip.mode);
    j["clip"]["p"] = cfg.clip.p;
    j["clip"]["static_value"] = cfg.clip.static_value;
    if (cfg.clip.window)
        j["clip"]["window"] = *cfg.clip.window;
    else
        j["clip"]["window"] = nullptr;
    j["optimizer"]["lr"] = cfg.optimizer.lr;
    j["optimizer"]["beta1"] = cfg.optimizer.beta1;
    j["optimizer"]["beta2"] = cfg.optimizer.beta2;
    j["optimizer"]["eps"] = cfg.optimizer.eps;
    j["model"]["layers"] = cfg.model.layers;
    j["model"]["hidden"] = cfg.model.hidden;
    j["model"]["embedding_dim"] = cfg.model.embedding_dim;
    j["model"]["bidirectional"] = cfg.model.bidirectional;
    j["data"]["train_mixtures"] = cfg.data.train_mixtures;
    j["data"]["val_mixtures"] = cfg.data.val_mixtures;
    j["data"]["crop_frames"] = cfg.data.crop_frames;
    j["data"]["duration"] = cfg.data.mixture.duration;
    j["data"]["sample_rate"] = cfg.data.mixture.sample_rate;
    j["data"]["gain_spread_db"] = cfg.data.mixture.gain_spread_db;
    if (cfg.data.mixture.noise_snr_db)
        j["data"]["noise_snr_db"] = *cfg.data.mixture.noise_snr_db;
    else
        j["data"]["noise_snr_db"] = nullptr;
    return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_json_text(read_text_file(path));
}

std::string results_to_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream os;
    os << "p,loss,si_sdr_db,final_train_loss,fire_fraction\n";
    for (const ResultRow& r : rows) {
        os << r.p << ',' << r.loss << ',';
        if (r.si_sdr_db) os << csv_real(*r.si_sdr_db);
        os << ',';
        if (r.final_train_loss) os << csv_real(*r.final_train_loss);
        os << ',';
        if (r.fire_fraction) os << csv_real(*r.fire_fraction);
        os << '\n';
    }
    return os.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

std::optional<real> parse_cell(const std::string& cell) {
    if (cell.empty()) return std::nullopt;
    return static_cast<real>(std::strtod(cell.c_str(), nullptr));
}

}  // namespace

std::vector<ResultRow> results_from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line) || line != "p,loss,si_sdr_db,final_train_loss,fire_fraction")
        throw std::invalid_argument("results_from_csv: unexpected header");
    std::vector<ResultRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != 5) throw std::invalid_argument("results_from_csv: malformed row");
        ResultRow r;
        r.p = cells[0];
        r.loss = cells[1];
        r.si_sdr_db = parse_cell(cells[2]);
        r.final_train_loss = parse_cell(cells[3]);
        r.fire_fraction = parse_cell(cells[4]);
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace {

json tensor_to_json(const Tensor& t) {
    json j;
    j["shape"] = t.shape();
    j["data"] = t.raw();
    return j;
}

Tensor tensor_from_json(const json& j) {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<real>>());
}

json tensor_list_to_json(const std::vector<Tensor>& ts) {
    json arr = json::array();
    for (const Tensor& t : ts) arr.push_back(tensor_to_json(t));
    return arr;
}

std::vector<Tensor> tensor_list_from_json(const json& arr) {
    std::vector<Tensor> ts;
    for (const json& j : arr) ts.push_back(tensor_from_json(j));
    return ts;
}

}  // namespace

std::string checkpoint_to_json_text(const Checkpoint& c) {
    json j;
    j["iteration"] = c.iteration;
    j["params"] = tensor_list_to_json(c.params);
    j["adam"]["m"] = tensor_list_to_json(c.adam.m);
    j["adam"]["v"] = tensor_list_to_json(c.adam.v);
    j["adam"]["t"] = c.adam.t;
    j["history"]["values"] = c.history.to_values();
    if (c.history.window())
        j["history"]["window"] = *c.history.window();
    else
        j["history"]["window"] = nullptr;
    j["rng"] = c.rng_state;
    j["fired"] = c.fired;
    j["train_losses"] = c.train_losses;
    json dyn = json::array();
    for (const DynamicsRecord& r : c.dynamics) {
        json d;
        d["iter"] = r.iteration;
        d["loss"] = r.loss;
        d["grad_norm"] = r.grad_norm;
        d["clip_threshold"] = r.clip_threshold;
        d["fired"] = r.fired;
        d["step_size"] = r.step_size;
        if (r.smoothness)
            d["smoothness"] = *r.smoothness;
        else
            d["smoothness"] = nullptr;
        dyn.push_back(std::move(d));
    }
    j["dynamics"] = std::move(dyn);
    return j.dump() + "\n";
}

Checkpoint checkpoint_from_json_text(const std::string& text) {
    const json j = json::parse(text);
    Checkpoint c;
    c.iteration = j.at("iteration").get<std::size_t>();
    c.params = tensor_list_from_json(j.at("params"));
    c.adam.m = tensor_list_from_json(j.at("adam").at("m"));
    c.adam.v = tensor_list_from_json(j.at("adam").at("v"));
    c.adam.t = j.at("adam").at("t").get<std::int64_t>();
    std::optional<std::size_t> window;
    if (!j.at("history").at("window").is_null())
        window = j.at("history").at("window").get<std::size_t>();
    c.history = GradNormHistory::from_values(
        j.at("history").at("values").get<std::vector<real>>(), window);
    c.rng_state = j.at("rng").get<std::string>();
    c.fired = j.at("fired").get<std::size_t>();
    c.train_losses = j.at("train_losses").get<std::vector<real>>();
    for (const json& d : j.at("dynamics")) {
        DynamicsRecord r;
        r.iteration = d.at("iter").get<std::size_t>();
        r.loss = d.at("loss").get<real>();
        r.grad_norm = d.at("grad_norm").get<real>();
        r.clip_threshold = d.at("clip_threshold").get<real>();
        r.fired = d.at("fired").get<bool>();
        r.step_size = d.at("step_size").get<real>();
        if (!d.at("smoothness").is_null()) r.smoothness = d.at("smoothness").get<real>();
        c.dynamics.push_back(r);
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    write_text_file(path, checkpoint_to_json_text(c));
}

Checkpoint load_checkpoint(const std::string& path) {
    return checkpoint_from_json_text(read_text_file(path));
}

namespace {

struct Utterance {
    Spectrogram mix, s1, s2;
};

std::vector<Utterance> synth_set(Rng& rng, std::size_t count, const MixtureConfig& mcfg,
                                 const StftPlan& plan) {
    std::vector<Utterance> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Mixture m = synth_mixture(rng.bits(), mcfg);
        Utterance u;
        u.mix = plan.forward(m.mixture);
        u.s1 = plan.forward(m.sources[0]);
        u.s2 = plan.forward(m.sources[1]);
        out.push_back(std::move(u));
    }
    return out;
}

Spectrogram crop_pad(const Spectrogram& s, std::size_t t0, std::size_t crop) {
    const std::size_t k = s.bins();
    Spectrogram out;
    out.re = Tensor::zeros(Shape{crop, k});
    out.im = Tensor::zeros(Shape{crop, k});
    const std::size_t avail = s.frames() > t0 ? std::min(crop, s.frames() - t0) : 0;
    for (std::size_t t = 0; t < avail; ++t)
        for (std::size_t j = 0; j < k; ++j) {
            out.re.at(t, j) = s.re.at(t0 + t, j);
            out.im.at(t, j) = s.im.at(t0 + t, j);
        }
    return out;
}

struct BatchItem {
    std::size_t utt = 0;
    std::size_t offset = 0;
};

// Per-item crops plus the time-major input stacks the model consumes.
struct Batch {
    Tensor log_mag;
    Tensor mix_mag;
    std::vector<Spectrogram> mix, s1, s2;
};

Batch assemble_batch(const std::vector<Utterance>& data, const std::vector<BatchItem>& items,
                     std::size_t crop, std::size_t bins) {
    const std::size_t b_count = items.size();
    Batch batch;
    batch.log_mag = Tensor::zeros(Shape{crop * b_count, bins});
    batch.mix_mag = Tensor::zeros(Shape{crop * b_count, bins});
    for (std::size_t b = 0; b < b_count; ++b) {
        const Utterance& u = data[items[b].utt];
        batch.mix.push_back(crop_pad(u.mix, items[b].offset, crop));
        batch.s1.push_back(crop_pad(u.s1, items[b].offset, crop));
        batch.s2.push_back(crop_pad(u.s2, items[b].offset, crop));
        const Tensor mag = batch.mix[b].magnitude();
        const Tensor lm = log_magnitude(mag);
        for (std::size_t t = 0; t < crop; ++t)
            for (std::size_t j = 0; j < bins; ++j) {
                const std::size_t row = t * b_count + b;
                batch.mix_mag.at(row, j) = mag.at(t, j);
                batch.log_mag.at(row, j) = lm.at(t, j);
            }
    }
    return batch;
}

Value batch_loss(Graph& g, const Separator& sep, const std::vector<Value>& ps,
                 const RunConfig& cfg, const StftPlan& plan, const Batch& batch) {
    const std::size_t b_count = batch.mix.size();
    const std::size_t crop = cfg.data.crop_frames;
    Separator::Forward out = sep.forward(g, ps, g.constant(batch.log_mag), b_count);

    std::vector<Value> est_stack;
    if (cfg.model.mask_head) {
        Value mag = g.constant(batch.mix_mag);
        est_stack = {mul(out.masks[0], mag), mul(out.masks[1], mag)};
    }

    Value total;
    for (std::size_t b = 0; b < b_count; ++b) {
        const Spectrogram& mix = batch.mix[b];
        const std::vector<Spectrogram> srcs = {batch.s1[b], batch.s2[b]};
        Value item;
        switch (cfg.loss) {
            case LossKind::mi: {
                std::vector<std::size_t> rows = Separator::sequence_rows(crop, b_count, b);
                std::vector<Value> est = {gather_rows(est_stack[0], rows),
                                          gather_rows(est_stack[1], rows)};
                item = pit_mi(g, est, mix, srcs);
                break;
            }
            case LossKind::dc: {
                Value v = gather_rows(*out.embeddings, sep.sequence_tf_rows(crop, b_count, b));
                item = loss_dc(g, v, dominant_source_assignment(srcs),
                               magnitude_tf_weights(mix.magnitude()));
                break;
            }
            case LossKind::wkm: {
                Value v = gather_rows(*out.embeddings, sep.sequence_tf_rows(crop, b_count, b));
                item = loss_wkm(g, v, dominant_source_assignment(srcs));
                break;
            }
            case LossKind::chimera: {
                std::vector<std::size_t> rows = Separator::sequence_rows(crop, b_count, b);
                std::vector<Value> est = {gather_rows(est_stack[0], rows),
                                          gather_rows(est_stack[1], rows)};
                Value mi = pit_mi(g, est, mix, srcs);
                Value v = gather_rows(*out.embeddings, sep.sequence_tf_rows(crop, b_count, b));
                Value wkm = loss_wkm(g, v, dominant_source_assignment(srcs));
                item = loss_chimera(mi, wkm, cfg.chimera_alpha);
                break;
            }
            case LossKind::snr: {
                std::vector<std::size_t> rows = Separator::sequence_rows(crop, b_count, b);
                auto [pc, psn] = mix.unit_phase();
                Value pcb = g.constant(pc);
                Value psb = g.constant(psn);
                std::vector<Value> waves;
                std::vector<Tensor> refs;
                for (std::size_t s = 0; s < 2; ++s) {
                    Value em = gather_rows(est_stack[s], rows);
                    waves.push_back(plan.inverse_graph(g, mul(em, pcb), mul(em, psb)));
                    refs.push_back(
                        Tensor::vector(plan.inverse(srcs[s], cfg.data.mixture.sample_rate).samples));
                }
                item = pit_snr(g, waves, refs);
                break;
            }
        }
        total = b == 0 ? item : add(total, item);
    }
    return scale(total, real(1) / static_cast<real>(b_count));
}

real validation_si_sdr(const Separator& sep, const Parameters& theta,
                       const std::vector<Utterance>& val, const RunConfig& cfg,
                       const StftPlan& plan) {
    const real sr = cfg.data.mixture.sample_rate;
    real total = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
        const Utterance& u = val[i];
        Graph g;
        std::vector<Value> ps = g.params(theta);
        const Tensor mag = u.mix.magnitude();
        Separator::Forward fwd = sep.forward(g, ps, g.constant(log_magnitude(mag)), 1);

        std::array<Tensor, 2> masks;
        if (cfg.model.mask_head) {
            masks[0] = fwd.masks[0].tensor();
            masks[1] = fwd.masks[1].tensor();
        } else {
            // Embedding-only heads are decoded by clustering TF points and
            // applying the resulting binary masks.
            Rng kr(cfg.seed ^ (0x9e3779b97f4a7c15ULL + i));
            const std::vector<std::size_t> labels = kmeans_labels(fwd.embeddings->tensor(), 2, kr);
            masks[0] = Tensor::zeros(mag.shape());
            masks[1] = Tensor::zeros(mag.shape());
            for (std::size_t n = 0; n < labels.size(); ++n) masks[labels[n]][n] = 1;
        }

        auto [pc, psn] = u.mix.unit_phase();
        std::array<Waveform, 2> est;
        for (std::size_t s = 0; s < 2; ++s) {
            Spectrogram es;
            es.re = Tensor(mag.shape());
            es.im = Tensor(mag.shape());
            for (std::size_t n = 0; n < mag.size(); ++n) {
                const real m = masks[s][n] * mag[n];
                es.re[n] = m * pc[n];
                es.im[n] = m * psn[n];
            }
            est[s] = plan.inverse(es, sr);
        }
        const Waveform r1 = plan.inverse(u.s1, sr);
        const Waveform r2 = plan.inverse(u.s2, sr);
        const real straight = si_sdr(est[0], r1) + si_sdr(est[1], r2);
        const real swapped = si_sdr(est[0], r2) + si_sdr(est[1], r1);
        total += std::max(straight, swapped) / 2;
    }
    return total / static_cast<real>(val.size());
}

}  // namespace

RunOutput run_training(const RunConfig& raw, const TrainHooks& hooks) {
    RunConfig cfg = raw;
    cfg.normalize();
    cfg.validate();

    StftPlan plan(cfg.stft);
    Separator sep(cfg.model);
    Rng rng(cfg.seed);

    // Fixed draw order: train data, validation data, init, batch offsets.
    // Everything before the loop is identical across clip settings.
    const std::vector<Utterance> train =
        synth_set(rng, cfg.data.train_mixtures, cfg.data.mixture, plan);
    const std::vector<Utterance> val =
        synth_set(rng, cfg.data.val_mixtures, cfg.data.mixture, plan);
    Parameters theta = Separator::init_params(cfg.model, rng.bits());

    AdamState adam = AdamState::init(theta);
    GradNormHistory history(cfg.clip.window);
    DynamicsRecorder recorder(cfg.record_every);
    std::size_t fired = 0;
    std::vector<real> losses;
    std::size_t start = 1;

    if (hooks.resume_from) {
        Checkpoint c = load_checkpoint(*hooks.resume_from);
        theta = std::move(c.params);
        adam = std::move(c.adam);
        history = std::move(c.history);
        std::istringstream is(c.rng_state);
        rng.load(is);
        fired = c.fired;
        losses = std::move(c.train_losses);
        for (const DynamicsRecord& r : c.dynamics) recorder.add(r);
        start = c.iteration + 1;
    }

    const std::size_t frames = train.front().mix.frames();
    const std::size_t span =
        frames > cfg.data.crop_frames ? frames - cfg.data.crop_frames + 1 : 1;
    const std::size_t total_iters = cfg.iterations();

    for (std::size_t t = start; t <= total_iters; ++t) {
        std::vector<BatchItem> items(cfg.batch_size);
        for (BatchItem& it : items) {
            it.utt = rng.index(train.size());
            it.offset = rng.index(span);
        }
        const Batch batch = assemble_batch(train, items, cfg.data.crop_frames, plan.bins());

        real loss_value = 0;
        GradVector grad;
        GradVector applied;
        ClipReport report;
        const bool record = recorder.due(t);
        Parameters prev;
        try {
            Graph g;
            std::vector<Value> ps = g.params(theta);
            Value loss = batch_loss(g, sep, ps, cfg, plan, batch);
            if (cfg.loss_scale != real(1)) loss = scale(loss, cfg.loss_scale);
            loss_value = loss.scalar();
            grad = g.backward(loss);

            if (cfg.clip.mode == ClipMode::autoclip) {
                std::tie(applied, report) = autoclip_step(history, grad, cfg.clip);
            } else if (cfg.clip.mode == ClipMode::static_threshold) {
                history.append(grad.norm);
                std::tie(applied, report) = clip_by_norm(grad, cfg.clip.static_value);
            } else {
                history.append(grad.norm);
                applied = grad;
                report.scale = 1;
                report.fired = false;
                report.pre_clip_norm = grad.norm;
            }
            if (record) prev = theta;
            adam_step(theta, adam, applied, cfg.optimizer);
        } catch (const std::runtime_error& e) {
            throw TrainAbort(t, e.what());
        }
        if (report.fired) ++fired;
        losses.push_back(loss_value);

        if (record) {
            // Smoothness probe: raw gradient at the new iterate on the same
            // batch. Read-only; consumes no randomness.
            GradVector probe;
            try {
                Graph g2;
                std::vector<Value> ps2 = g2.params(theta);
                Value l2 = batch_loss(g2, sep, ps2, cfg, plan, batch);
                if (cfg.loss_scale != real(1)) l2 = scale(l2, cfg.loss_scale);
                probe = g2.backward(l2);
            } catch (const std::runtime_error& e) {
                throw TrainAbort(t, e.what());
            }
            DynamicsRecord r;
            r.iteration = t;
            r.loss = loss_value;
            r.grad_norm = grad.norm;
            r.clip_threshold = report.threshold;
            r.fired = report.fired;
            r.step_size = step_size(theta, prev);
            r.smoothness = local_smoothness(prev, theta, grad, probe);
            recorder.add(r);
        }

        if (hooks.save_at && t == *hooks.save_at) {
            Checkpoint c;
            c.iteration = t;
            c.params = theta;
            c.adam = adam;
            c.history = history;
            std::ostringstream os;
            rng.save(os);
            c.rng_state = os.str();
            c.fired = fired;
            c.train_losses = losses;
            c.dynamics = recorder.records();
            save_checkpoint(hooks.save_path, c);
        }
    }

    RunOutput out;
    out.row.p = cfg.clip.mode == ClipMode::autoclip ? csv_real(cfg.clip.p)
                                                    : clip_mode_name(cfg.clip.mode);
    out.row.loss = loss_name(cfg.loss);
    out.row.fire_fraction = real(fired) / static_cast<real>(total_iters);
    const std::size_t tail = std::min(losses.size(), cfg.iterations_per_epoch());
    real acc = 0;
    for (std::size_t i = losses.size() - tail; i < losses.size(); ++i) acc += losses[i];
    out.row.final_train_loss = acc / static_cast<real>(tail);
    out.row.si_sdr_db = validation_si_sdr(sep, theta, val, cfg, plan);
    out.params = std::move(theta);
    out.dynamics = recorder;
    return out;
}

std::vector<ResultRow> run_sweep(const RunConfig& base, const std::vector<real>& p_values,
                                 const std::vector<LossKind>& losses) {
    if (p_values.empty()) throw std::invalid_argument("run_sweep: need at least one percentile");
    if (losses.empty()) throw std::invalid_argument("run_sweep: need at least one loss");
    std::vector<ResultRow> rows;
    for (real p : p_values)
        for (LossKind k : losses) {
            RunConfig cfg = base;
            cfg.loss = k;
            cfg.clip.mode = ClipMode::autoclip;
            cfg.clip.p = p;
            cfg.normalize();
            try {
                rows.push_back(run_training(cfg).row);
            } catch (const TrainAbort&) {
                ResultRow r;
                r.p = csv_real(p);
                r.loss = loss_name(k);
                rows.push_back(std::move(r));
            }
        }
    return rows;
}

std::string GradCheckReport::text() const {
    std::ostringstream os;
    os << "gradcheck " << loss_name(loss) << ": max relative error " << csv_real(max_rel_error)
       << " (tolerance " << csv_real(tolerance) << ") " << (pass ? "PASS" : "FAIL");
    return os.str();
}

GradCheckReport gradcheck(LossKind kind, std::uint64_t seed) {
    Rng rng(seed);
    auto rand_spec = [&rng](std::size_t frames, std::size_t bins) {
        Spectrogram s;
        s.re = Tensor(Shape{frames, bins});
        s.im = Tensor(Shape{frames, bins});
        for (real& v : s.re.raw()) v = rng.uniform(-2, 2);
        for (real& v : s.im.raw()) v = rng.uniform(-2, 2);
        return s;
    };
    auto rand_assignment = [&rng](std::size_t n, std::size_t c) {
        Tensor y = Tensor::zeros(Shape{n, c});
        // Every class gets at least one point so Gram matrices stay regular.
        for (std::size_t i = 0; i < n; ++i) y.at(i, i < c ? i : rng.index(c)) = 1;
        return y;
    };

    std::vector<Tensor> theta;
    std::function<Value(Graph&, const std::vector<Value>&)> build;

    switch (kind) {
        case LossKind::mi: {
            const Spectrogram mix = rand_spec(4, 6);
            const Spectrogram src = rand_spec(4, 6);
            const Tensor target = psa_target(mix, src);
            Tensor est(Shape{4, 6});
            for (std::size_t i = 0; i < est.size(); ++i) {
                est[i] = rng.uniform(0, 3);
                // Keep probes away from the absolute-value kink.
                if (std::fabs(est[i] - target[i]) < real(0.01)) est[i] += real(0.05);
            }
            theta = {est};
            build = [mix, src](Graph& g, const std::vector<Value>& ps) {
                return loss_mi(g, ps[0], mix, src);
            };
            break;
        }
        case LossKind::dc: {
            Tensor raw(Shape{24, 6});
            for (real& v : raw.raw()) v = rng.uniform(-2, 2);
            const Tensor y = rand_assignment(24, 2);
            Tensor w(Shape{24});
            real w_sum = 0;
            for (real& v : w.raw()) w_sum += (v = rng.uniform(real(0.01), 1));
            for (real& v : w.raw()) v /= w_sum;
            theta = {raw};
            build = [y, w](Graph& g, const std::vector<Value>& ps) {
                return loss_dc(g, row_normalize(sigmoid(ps[0])), y, w);
            };
            break;
        }
        case LossKind::wkm: {
            Tensor raw(Shape{24, 6});
            for (real& v : raw.raw()) v = rng.uniform(-2, 2);
            const Tensor y = rand_assignment(24, 2);
            theta = {raw};
            build = [y](Graph& g, const std::vector<Value>& ps) {
                return loss_wkm(g, row_normalize(sigmoid(ps[0])), y);
            };
            break;
        }
        case LossKind::chimera: {
            const Spectrogram mix = rand_spec(4, 6);
            const Spectrogram src = rand_spec(4, 6);
            const Tensor target = psa_target(mix, src);
            Tensor est(Shape{4, 6});
            for (std::size_t i = 0; i < est.size(); ++i) {
                est[i] = rng.uniform(0, 3);
                if (std::fabs(est[i] - target[i]) < real(0.01)) est[i] += real(0.05);
            }
            Tensor raw(Shape{24, 6});
            for (real& v : raw.raw()) v = rng.uniform(-2, 2);
            const Tensor y = rand_assignment(24, 2);
            theta = {est, raw};
            build = [mix, src, y](Graph& g, const std::vector<Value>& ps) {
                Value mi = loss_mi(g, ps[0], mix, src);
                Value wkm = loss_wkm(g, row_normalize(sigmoid(ps[1])), y);
                return loss_chimera(mi, wkm, real(0.75));
            };
            break;
        }
        case LossKind::snr: {
            Tensor est(Shape{40});
            Tensor ref(Shape{40});
            for (real& v : est.raw()) v = rng.uniform(-1, 1);
            for (real& v : ref.raw()) v = rng.uniform(-1, 1);
            theta = {est};
            build = [ref](Graph& g, const std::vector<Value>& ps) {
                return loss_snr(g, ps[0], ref);
            };
            break;
        }
    }

    GradCheckReport rep;
    rep.loss = kind;
    rep.tolerance = real(1e-4);
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
    rep.max_rel_error = max_rel_error(analytic.grads, fd);
    rep.pass = rep.max_rel_error < rep.tolerance;
    return rep;
}

std::vector<std::size_t> kmeans_labels(const Tensor& points, std::size_t k, Rng& rng,
                                       std::size_t rounds) {
    if (points.rank() != 2) throw std::invalid_argument("kmeans_labels: rank-2 points required");
    const std::size_t n = points.dim(0), d = points.dim(1);
    if (k == 0 || n < k) throw std::invalid_argument("kmeans_labels: need at least k points");

    auto dist2 = [&](std::size_t i, const std::vector<real>& c) {
        real acc = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const real diff = points.at(i, j) - c[j];
            acc += diff * diff;
        }
        return acc;
    };
    auto row = [&](std::size_t i) {
        std::vector<real> r(d);
        for (std::size_t j = 0; j < d; ++j) r[j] = points.at(i, j);
        return r;
    };

    std::vector<std::vector<real>> centers;
    centers.push_back(row(rng.index(n)));
    while (centers.size() < k) {
        std::size_t best = 0;
        real best_d = real(-1);
        for (std::size_t i = 0; i < n; ++i) {
            real nearest = dist2(i, centers[0]);
            for (std::size_t c = 1; c < centers.size(); ++c)
                nearest = std::min(nearest, dist2(i, centers[c]));
            if (nearest > best_d) {
                best_d = nearest;
                best = i;
            }
        }
        centers.push_back(row(best));
    }

    std::vector<std::size_t> labels(n, 0);
    for (std::size_t round = 0; round < rounds; ++round) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            real best_d = dist2(i, centers[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const real dc = dist2(i, centers[c]);
                if (dc < best_d) {
                    best_d = dc;
                    best = c;
                }
            }
            if (labels[i] != best) {
                labels[i] = best;
                changed = true;
            }
        }
        if (!changed && round > 0) break;
        std::vector<std::vector<real>> sums(k, std::vector<real>(d, 0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[labels[i]];
            for (std::size_t j = 0; j < d; ++j) sums[labels[i]][j] += points.at(i, j);
        }
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (std::size_t j = 0; j < d; ++j)
                    centers[c][j] = sums[c][j] / static_cast<real>(counts[c]);
    }
    return labels;
}

}  // namespace cliplab
