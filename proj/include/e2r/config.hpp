#pragma once

#include <json.hpp>

#include "e2r/metrics.hpp"
#include "e2r/trainer.hpp"

namespace e2r {

struct DataConfig {
    int n_per_task = 16;
    int n_eval_per_task = 8;
    std::vector<std::string> tasks = {"noise", "rain", "haze"};
    uint64_t seed = 0;
    int image_size = 32;  // mirrors model.image_size unless overridden
    int corpus_style = 0;
};

struct EvalConfig {
    uint64_t feature_seed = kDefaultFeatureSeed;
    double bandwidth = 0.0;  // 0 = median heuristic
    uint64_t seed = 0;
};

// One JSON document with sections model/train/sample/data/eval. Defaults
// reproduce the reference recipe (rank 64, batch 4, 1920 iterations, 500
// warmup, 28 steps, guidance 2.5, logit-normal mu 0 sigma 1). Unknown keys
// are rejected; missing keys take defaults.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SampleConfig sample;
    DataConfig data;
    EvalConfig eval;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

RunConfig default_run_config();
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace e2r
