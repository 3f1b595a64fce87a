#include "e2r/config.hpp"

#include <fstream>

#include "e2r/errors.hpp"

namespace e2r {

namespace {

void check_keys(const nlohmann::json& obj, const std::string& section,
                std::initializer_list<const char*> known) {
    if (!obj.is_object()) throw UsageError("config: section '" + section + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) ok = true;
        if (!ok) throw UsageError("config: unknown key '" + key + "' in section '" + section + "'");
    }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"image_size", c.image_size},     {"patch_size", c.patch_size},
            {"d_model", c.d_model},           {"heads", c.heads},
            {"n_double_blocks", c.n_double_blocks}, {"n_single_blocks", c.n_single_blocks}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    check_keys(j, "model",
               {"image_size", "patch_size", "d_model", "heads", "n_double_blocks",
                "n_single_blocks"});
    ModelConfig c;
    get_if(j, "image_size", c.image_size);
    get_if(j, "patch_size", c.patch_size);
    get_if(j, "d_model", c.d_model);
    get_if(j, "heads", c.heads);
    get_if(j, "n_double_blocks", c.n_double_blocks);
    get_if(j, "n_single_blocks", c.n_single_blocks);
    c.validate();
    return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"iterations", c.iterations},
            {"batch_size", c.batch_size},
            {"lr_lora", c.lr_lora},
            {"lr_text", c.lr_text},
            {"wd_lora", c.wd_lora},
            {"wd_text", c.wd_text},
            {"warmup_steps", c.warmup_steps},
            {"rank", c.rank},
            {"alpha", c.alpha},
            {"regime", c.regime},
            {"task", c.task},
            {"text_encoder_trainable", c.text_encoder_trainable},
            {"prompt_dropout", c.prompt_dropout},
            {"seed", c.seed},
            {"mode", c.mode},
            {"clip_norm", c.clip_norm},
            {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    check_keys(j, "train",
               {"iterations", "batch_size", "lr_lora", "lr_text", "wd_lora", "wd_text",
                "warmup_steps", "rank", "alpha", "regime", "task", "text_encoder_trainable",
                "prompt_dropout", "seed", "mode", "clip_norm", "checkpoint_every"});
    TrainConfig c;
    get_if(j, "iterations", c.iterations);
    get_if(j, "batch_size", c.batch_size);
    get_if(j, "lr_lora", c.lr_lora);
    get_if(j, "lr_text", c.lr_text);
    get_if(j, "wd_lora", c.wd_lora);
    get_if(j, "wd_text", c.wd_text);
    get_if(j, "warmup_steps", c.warmup_steps);
    get_if(j, "rank", c.rank);
    if (j.contains("rank") && !j.contains("alpha")) c.alpha = c.rank;  // default alpha = rank
    get_if(j, "alpha", c.alpha);
    get_if(j, "regime", c.regime);
    get_if(j, "task", c.task);
    get_if(j, "text_encoder_trainable", c.text_encoder_trainable);
    get_if(j, "prompt_dropout", c.prompt_dropout);
    get_if(j, "seed", c.seed);
    get_if(j, "mode", c.mode);
    get_if(j, "clip_norm", c.clip_norm);
    get_if(j, "checkpoint_every", c.checkpoint_every);
    c.validate();
    return c;
}

namespace {

nlohmann::json sample_config_to_json(const SampleConfig& c) {
    return {{"steps", c.steps}, {"guidance", c.guidance}, {"seed", c.seed}};
}

SampleConfig sample_config_from_json(const nlohmann::json& j) {
    check_keys(j, "sample", {"steps", "guidance", "seed"});
    SampleConfig c;
    get_if(j, "steps", c.steps);
    get_if(j, "guidance", c.guidance);
    get_if(j, "seed", c.seed);
    c.validate();
    return c;
}

nlohmann::json data_config_to_json(const DataConfig& c) {
    return {{"n_per_task", c.n_per_task}, {"n_eval_per_task", c.n_eval_per_task},
            {"tasks", c.tasks},           {"seed", c.seed},
            {"image_size", c.image_size}, {"corpus_style", c.corpus_style}};
}

DataConfig data_config_from_json(const nlohmann::json& j) {
    check_keys(j, "data",
               {"n_per_task", "n_eval_per_task", "tasks", "seed", "image_size", "corpus_style"});
    DataConfig c;
    get_if(j, "n_per_task", c.n_per_task);
    get_if(j, "n_eval_per_task", c.n_eval_per_task);
    get_if(j, "tasks", c.tasks);
    get_if(j, "seed", c.seed);
    get_if(j, "image_size", c.image_size);
    get_if(j, "corpus_style", c.corpus_style);
    if (c.n_per_task < 1) throw UsageError("config: data.n_per_task must be >= 1");
    if (c.n_eval_per_task < 1) throw UsageError("config: data.n_eval_per_task must be >= 1");
    for (const std::string& t : c.tasks) task_prompt(t);  // validates names
    return c;
}

nlohmann::json eval_config_to_json(const EvalConfig& c) {
    return {{"feature_seed", c.feature_seed}, {"bandwidth", c.bandwidth}, {"seed", c.seed}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
    check_keys(j, "eval", {"feature_seed", "bandwidth", "seed"});
    EvalConfig c;
    get_if(j, "feature_seed", c.feature_seed);
    get_if(j, "bandwidth", c.bandwidth);
    get_if(j, "seed", c.seed);
    return c;
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

nlohmann::json run_config_to_json(const RunConfig& c) {
    return {{"model", model_config_to_json(c.model)},
            {"train", train_config_to_json(c.train)},
            {"sample", sample_config_to_json(c.sample)},
            {"data", data_config_to_json(c.data)},
            {"eval", eval_config_to_json(c.eval)}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    check_keys(j, "<root>", {"model", "train", "sample", "data", "eval"});
    RunConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("sample")) c.sample = sample_config_from_json(j.at("sample"));
    if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
    if (j.contains("eval")) c.eval = eval_config_from_json(j.at("eval"));
    if (!j.contains("data") || !j.at("data").contains("image_size"))
        c.data.image_size = c.model.image_size;
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("config: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw DataError("config: " + path + " is not valid JSON");
    try {
        return run_config_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config: " + path + " is malformed: " + e.what());
    }
}

}  // namespace e2r
