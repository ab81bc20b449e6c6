#include "cliplab/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cliplab/rng.hpp"

namespace cliplab {

void SeparatorConfig::validate() const {
    if (layers == 0 || hidden == 0 || bins == 0)
        throw std::invalid_argument("SeparatorConfig: layers, hidden, and bins must be positive");
    if (!mask_head && !embedding_head)
        throw std::invalid_argument("SeparatorConfig: at least one head required");
    if (embedding_head && embedding_dim == 0)
        throw std::invalid_argument("SeparatorConfig: embedding_dim must be positive");
    if (sources < 2) throw std::invalid_argument("SeparatorConfig: need at least two sources");
}

Separator::Separator(SeparatorConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::vector<Shape> Separator::param_shapes() const {
    std::vector<Shape> shapes;
    const std::size_t dirs = cfg_.bidirectional ? 2 : 1;
    std::size_t in = cfg_.bins;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        for (std::size_t d = 0; d < dirs; ++d) {
            shapes.push_back(Shape{in + cfg_.hidden + 1, cfg_.hidden});  // gate
            shapes.push_back(Shape{in + cfg_.hidden + 1, cfg_.hidden});  // candidate
        }
        in = cfg_.layer_output_dim();
    }
    if (cfg_.mask_head) shapes.push_back(Shape{in + 1, cfg_.sources * cfg_.bins});
    if (cfg_.embedding_head) shapes.push_back(Shape{in + 1, cfg_.bins * cfg_.embedding_dim});
    return shapes;
}

std::vector<std::string> Separator::param_names() const {
    std::vector<std::string> names;
    const std::size_t dirs = cfg_.bidirectional ? 2 : 1;
    for (std::size_t l = 0; l < cfg_.layers; ++l)
        for (std::size_t d = 0; d < dirs; ++d) {
            const std::string tag =
                "layer" + std::to_string(l) + (dirs == 2 ? (d == 0 ? "_fwd" : "_bwd") : "");
            names.push_back(tag + "_gate");
            names.push_back(tag + "_cand");
        }
    if (cfg_.mask_head) names.push_back("mask_head");
    if (cfg_.embedding_head) names.push_back("embedding_head");
    return names;
}

std::size_t Separator::param_count() const {
    std::size_t n = 0;
    for (const Shape& s : param_shapes()) n += shape_numel(s);
    return n;
}

Parameters Separator::init_params(const SeparatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Separator sep(cfg);
    Rng rng(seed);
    Parameters params;
    const std::vector<Shape> shapes = sep.param_shapes();
    const std::vector<std::string> names = sep.param_names();
    for (std::size_t p = 0; p < shapes.size(); ++p) {
        const std::size_t rows = shapes[p][0], cols = shapes[p][1];
        const real fan_in = static_cast<real>(rows - 1);  // minus the bias row
        const real bound = real(1) / std::sqrt(fan_in);
        Tensor t(shapes[p]);
        for (std::size_t r = 0; r + 1 < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) t.at(r, c) = rng.uniform(-bound, bound);
        // Bias row: gates start open toward keeping state, everything else
        // starts neutral.
        const bool is_gate = names[p].size() >= 5 && names[p].ends_with("_gate");
        for (std::size_t c = 0; c < cols; ++c) t.at(rows - 1, c) = is_gate ? real(1) : real(0);
        params.push_back(std::move(t));
    }
    return params;
}

namespace {

// One recurrent layer over a time-major stack. Returns the per-step hidden
// states in time order.
std::vector<Value> run_direction(Graph& g, Value input, std::size_t t_steps, std::size_t batch,
                                 Value w_gate, Value w_cand, std::size_t hidden, bool backward) {
    Value ones = g.constant(Tensor::full(Shape{batch, 1}, real(1)));
    Value ones_h = g.constant(Tensor::full(Shape{batch, hidden}, real(1)));
    Value h = g.constant(Tensor::zeros(Shape{batch, hidden}));
    std::vector<Value> states;
    states.reserve(t_steps);
    for (std::size_t step = 0; step < t_steps; ++step) {
        const std::size_t t = backward ? t_steps - 1 - step : step;
        Value x = slice_rows(input, t * batch, (t + 1) * batch);
        Value joined = concat_cols({x, h, ones});
        Value z = sigmoid(matmul(joined, w_gate));
        Value cand = tanh(matmul(joined, w_cand));
        h = add(mul(z, h), mul(sub(ones_h, z), cand));
        states.push_back(h);
    }
    if (backward) std::reverse(states.begin(), states.end());
    return states;
}

}  // namespace

Separator::Forward Separator::forward(Graph& g, const std::vector<Value>& params, Value log_mag,
                                      std::size_t batch) const {
    const std::vector<Shape> shapes = param_shapes();
    if (params.size() != shapes.size())
        throw std::invalid_argument("Separator::forward: wrong parameter count");
    for (std::size_t p = 0; p < params.size(); ++p)
        if (params[p].tensor().shape() != shapes[p])
            throw std::invalid_argument("Separator::forward: parameter shape mismatch");
    const Tensor& x = log_mag.tensor();
    if (x.rank() != 2 || x.dim(1) != cfg_.bins)
        throw std::invalid_argument("Separator::forward: input must be (T*batch) x bins");
    if (batch == 0 || x.dim(0) % batch != 0)
        throw std::invalid_argument("Separator::forward: row count not divisible by batch");
    const std::size_t t_steps = x.dim(0) / batch;

    std::size_t p = 0;
    Value cur = log_mag;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        std::vector<Value> fwd =
            run_direction(g, cur, t_steps, batch, params[p], params[p + 1], cfg_.hidden, false);
        p += 2;
        if (cfg_.bidirectional) {
            std::vector<Value> bwd = run_direction(g, cur, t_steps, batch, params[p],
                                                   params[p + 1], cfg_.hidden, true);
            p += 2;
            std::vector<Value> joined;
            joined.reserve(t_steps);
            for (std::size_t t = 0; t < t_steps; ++t)
                joined.push_back(concat_cols({fwd[t], bwd[t]}));
            cur = concat_rows(joined);
        } else {
            cur = concat_rows(fwd);
        }
    }

    Value ones = g.constant(Tensor::full(Shape{t_steps * batch, 1}, real(1)));
    Value features = concat_cols({cur, ones});

    Forward out;
    if (cfg_.mask_head) {
        Value logits = matmul(features, params[p++]);
        Value masks = sigmoid(logits);
        for (std::size_t c = 0; c < cfg_.sources; ++c)
            out.masks.push_back(slice_cols(masks, c * cfg_.bins, (c + 1) * cfg_.bins));
    }
    if (cfg_.embedding_head) {
        Value logits = matmul(features, params[p++]);
        Value flat = reshape(logits, Shape{t_steps * batch * cfg_.bins, cfg_.embedding_dim});
        out.embeddings = row_normalize(sigmoid(flat));
    }
    return out;
}

std::vector<std::size_t> Separator::sequence_rows(std::size_t t, std::size_t batch,
                                                  std::size_t b) {
    if (b >= batch) throw std::invalid_argument("sequence_rows: batch index out of range");
    std::vector<std::size_t> rows(t);
    for (std::size_t i = 0; i < t; ++i) rows[i] = i * batch + b;
    return rows;
}

std::vector<std::size_t> Separator::sequence_tf_rows(std::size_t t, std::size_t batch,
                                                     std::size_t b) const {
    if (b >= batch) throw std::invalid_argument("sequence_tf_rows: batch index out of range");
    std::vector<std::size_t> rows;
    rows.reserve(t * cfg_.bins);
    for (std::size_t i = 0; i < t; ++i) {
        const std::size_t base = (i * batch + b) * cfg_.bins;
        for (std::size_t k = 0; k < cfg_.bins; ++k) rows.push_back(base + k);
    }
    return rows;
}

Tensor log_magnitude(const Tensor& mag, real floor_value) {
    if (!(floor_value > real(0)))
        throw std::invalid_argument("log_magnitude: floor must be positive");
    Tensor out(mag.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (mag[i] < real(0)) throw std::invalid_argument("log_magnitude: negative magnitude");
        out[i] = std::log(mag[i] + floor_value);
    }
    return out;
}

}  // namespace cliplab
