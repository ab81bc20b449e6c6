#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cliplab/graph.hpp"
#include "cliplab/optim.hpp"

namespace cliplab {

struct SeparatorConfig {
    std::size_t layers = 2;
    std::size_t hidden = 32;
    bool mask_head = true;
    bool embedding_head = false;
    std::size_t embedding_dim = 8;
    std::size_t sources = 2;
    bool bidirectional = false;
    std::size_t bins = 129;

    void validate() const;
    std::size_t layer_output_dim() const { return hidden * (bidirectional ? 2 : 1); }
};

// Recurrent mask/embedding network over log-magnitude frames. Each layer is
// a single-gate cell: z gates how much of the previous state survives,
//   z_t = sigmoid(Wz [x_t, h_{t-1}, 1])
//   c_t = tanh  (Wh [x_t, h_{t-1}, 1])
//   h_t = z_t * h_{t-1} + (1 - z_t) * c_t
// Biases ride along as a trailing all-ones input column, so every parameter
// is a plain matrix. Batched sequences are stacked time-major: row t*B + b
// holds frame t of sequence b.
class Separator {
  public:
    explicit Separator(SeparatorConfig cfg);

    const SeparatorConfig& config() const { return cfg_; }

    static Parameters init_params(const SeparatorConfig& cfg, std::uint64_t seed);
    std::vector<Shape> param_shapes() const;
    std::vector<std::string> param_names() const;
    std::size_t param_count() const;

    struct Forward {
        std::vector<Value> masks;          // one (T*B) x bins value per source
        std::optional<Value> embeddings;   // (T*B*bins) x D, rows unit-norm
    };

    // params must follow param_shapes() order; log_mag is (T*batch) x bins.
    Forward forward(Graph& g, const std::vector<Value>& params, Value log_mag,
                    std::size_t batch) const;

    // Row indices of sequence b inside a (T*batch) x bins stack, and of its
    // TF points inside the flattened (T*batch*bins) x D embedding stack.
    static std::vector<std::size_t> sequence_rows(std::size_t t, std::size_t batch, std::size_t b);
    std::vector<std::size_t> sequence_tf_rows(std::size_t t, std::size_t batch,
                                              std::size_t b) const;

  private:
    SeparatorConfig cfg_;
};

// Elementwise log with an additive floor; keeps silent bins finite while
// leaving loud bins near log-scale.
Tensor log_magnitude(const Tensor& mag, real floor_value = real(1e-2));

}  // namespace cliplab
