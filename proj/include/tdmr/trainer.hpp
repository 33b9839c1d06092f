#pragma once

#include "tdmr/checkpoint.hpp"
#include "tdmr/data.hpp"
#include "tdmr/metrics.hpp"
#include "tdmr/model.hpp"
#include "tdmr/objectives.hpp"
#include "tdmr/vsdc.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

namespace tdmr::trainer {

struct TrainConfig {
    int batch_size = 32;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    int epochs = 10;
    double lr_decay_factor = 0.1;
    int lr_decay_every_epochs = 40;  // 0 disables the schedule
    std::uint64_t seed = 0;
    double grad_clip_norm = 0.1;  // 0 disables clipping
    bool synthesis_enabled = true;
    bool include_originals = false;  // also train on the unsynthesized batch
    vsdc::SynthesisConfig synthesis;
    objectives::CostWeights cost_weights;
    objectives::LossWeights loss_weights;
    // adaptive-moment hyperparameters
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int checkpoint_every_epochs = 0;  // 0: only final
    int eval_every_epochs = 0;        // 0: never during training

    void validate() const;
};

// Parameters, optimizer accumulators and the position in the seeded
// schedule. Every stochastic choice derives from (seed, step/epoch), so
// a state is fully described by its counters.
struct TrainState {
    model::TdDetr model;
    std::vector<Mat> opt_m;
    std::vector<Mat> opt_v;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::uint64_t seed = 0;

    TrainState(const model::ModelConfig& mc, std::uint64_t seed);
};

// Current learning rate under the decay schedule.
double scheduled_lr(const TrainConfig& cfg, std::uint64_t epoch);

// Decoupled weight decay adaptive-moment update over freshly accumulated
// gradients; clears gradients afterwards.
void adamw_step(TrainState& st, const TrainConfig& cfg);

// One optimization step over the given samples: pair selection,
// synthesis, forward of every pair member, total loss, update.
objectives::LossReport train_step(TrainState& st, const data::Dataset& ds,
                                  const std::vector<std::size_t>& batch_indices,
                                  const TrainConfig& cfg);

checkpoint::CheckpointData to_checkpoint(const TrainState& st);
TrainState from_checkpoint(const checkpoint::CheckpointData& data);

struct FitResult {
    std::filesystem::path checkpoint_path;
    std::vector<objectives::LossReport> step_reports;
};

using StepHook = std::function<void(std::uint64_t step, const objectives::LossReport&)>;

// Full training run with per-epoch shuffling, periodic checkpoints and
// an optional per-step hook (used for the JSONL training log). If
// `resume` is given, continues exactly where that state left off.
FitResult fit(const data::Dataset& ds, const model::ModelConfig& mc, const TrainConfig& cfg,
              const std::filesystem::path& out_dir,
              std::optional<checkpoint::CheckpointData> resume = std::nullopt,
              const StepHook& hook = nullptr,
              std::optional<std::uint64_t> max_steps = std::nullopt);

}  // namespace tdmr::trainer
