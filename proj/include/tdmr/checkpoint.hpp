#pragma once

#include "tdmr/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tdmr::checkpoint {

// Versioned binary container: model config, named parameter tensors,
// optimizer moment estimates, step counters and the rng state string.
// Writes are byte-deterministic given identical contents.
struct CheckpointData {
    model::ModelConfig config;
    std::vector<std::pair<std::string, Mat>> params;
    std::vector<Mat> opt_m;  // first moments, registry order
    std::vector<Mat> opt_v;  // second moments, registry order
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::string rng_state;
};

void save(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load(const std::filesystem::path& path);

// Loads parameters into an existing model; throws ValidationError if the
// stored config does not match the model's.
void restore_model(model::TdDetr& m, const CheckpointData& data);

}  // namespace tdmr::checkpoint
