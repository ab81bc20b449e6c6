#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cliplab/clipping.hpp"
#include "cliplab/dynamics.hpp"
#include "cliplab/model.hpp"
#include "cliplab/optim.hpp"
#include "cliplab/signal.hpp"

namespace cliplab {

enum class LossKind { dc, wkm, mi, chimera, snr };

const char* loss_name(LossKind kind);
LossKind loss_from_name(const std::string& name);
std::vector<LossKind> all_losses();

struct DataConfig {
    std::size_t train_mixtures = 200;
    std::size_t val_mixtures = 50;
    std::size_t crop_frames = 24;
    MixtureConfig mixture;

    void validate() const;
};

// Everything one training run depends on. Heads and spectrogram width are
// derived from the loss and the transform by normalize(), so a config file
// only ever specifies independent knobs.
struct RunConfig {
    LossKind loss = LossKind::mi;
    ClipConfig clip;
    OptimizerConfig optimizer;
    SeparatorConfig model;
    DataConfig data;
    STFTConfig stft;
    std::uint64_t seed = 1;
    std::size_t epochs = 80;
    std::size_t batch_size = 8;
    std::size_t record_every = 20;
    real loss_scale = 1;  // diagnostics knob: multiplies the training loss
    real chimera_alpha = real(0.75);

    std::size_t iterations_per_epoch() const;
    std::size_t iterations() const;
    void normalize();
    void validate() const;
};

RunConfig run_config_from_json_text(const std::string& text);
std::string run_config_to_json_text(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

// One line of the results table. Metric fields are empty for a cell whose
// run aborted.
struct ResultRow {
    std::string p;  // percentile as text, or "static" / "none"
    std::string loss;
    std::optional<real> si_sdr_db;
    std::optional<real> final_train_loss;
    std::optional<real> fire_fraction;

    bool failed() const { return !si_sdr_db.has_value(); }
    bool operator==(const ResultRow&) const = default;
};

std::string results_to_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> results_from_csv(const std::string& csv);

// Full training state at an iteration boundary. The dataset is not stored;
// it is re-derived from the run seed on resume.
struct Checkpoint {
    std::size_t iteration = 0;
    Parameters params;
    AdamState adam;
    GradNormHistory history;
    std::string rng_state;
    std::size_t fired = 0;
    std::vector<real> train_losses;
    std::vector<DynamicsRecord> dynamics;
};

std::string checkpoint_to_json_text(const Checkpoint& c);
Checkpoint checkpoint_from_json_text(const std::string& text);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

struct TrainHooks {
    std::optional<std::size_t> save_at;  // write a checkpoint after this iteration
    std::string save_path;
    std::optional<std::string> resume_from;
};

struct RunOutput {
    Parameters params;
    ResultRow row;
    DynamicsRecorder dynamics{20};
};

// Raised when a non-finite loss or gradient stops a run.
struct TrainAbort : std::runtime_error {
    std::size_t iteration;
    TrainAbort(std::size_t it, const std::string& what)
        : std::runtime_error("iteration " + std::to_string(it) + ": " + what), iteration(it) {}
};

RunOutput run_training(const RunConfig& cfg, const TrainHooks& hooks = {});

// One run per (p, loss) cell, all with the base seed. An aborted cell
// yields a row with empty metrics; the sweep continues.
std::vector<ResultRow> run_sweep(const RunConfig& base, const std::vector<real>& p_values,
                                 const std::vector<LossKind>& losses);

struct GradCheckReport {
    LossKind loss = LossKind::mi;
    real max_rel_error = 0;
    real tolerance = 0;
    bool pass = false;
    std::string text() const;
};

// Finite-difference check of one loss on a tiny fixed instance.
GradCheckReport gradcheck(LossKind kind, std::uint64_t seed);

// Plain k-means over the rows of points, with the first centroid drawn
// from rng and the rest seeded farthest-first. Returns one label per row.
std::vector<std::size_t> kmeans_labels(const Tensor& points, std::size_t k, Rng& rng,
                                       std::size_t rounds = 20);

}  // namespace cliplab
