#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "e2r/degradations.hpp"
#include "e2r/lora.hpp"
#include "e2r/rectified_flow.hpp"

namespace e2r {

struct TrainConfig {
    int iterations = 1920;
    int batch_size = 4;
    double lr_lora = 1e-4;   // transformer-side group (adapter, or all of it when pretraining)
    double lr_text = 5e-6;   // embedder group
    double wd_lora = 1e-4;
    double wd_text = 1e-3;
    int warmup_steps = 500;
    int rank = 64;
    double alpha = 64.0;
    std::string regime = "unified";  // unified | per-task
    std::string task;                // per-task regime: which one
    bool text_encoder_trainable = true;
    double prompt_dropout = 0.10;
    uint64_t seed = 0;
    std::string mode = "lora";  // lora | pretrain (full-parameter, prompt-free)
    double clip_norm = 1.0;
    int checkpoint_every = 100;

    void validate() const;
};

// linear ramp to base_lr over warmup steps, then constant
double lr_at(int64_t step, int64_t warmup, double base_lr);

struct LossRow {
    int64_t iteration = 0;  // 1-based
    double loss = 0.0;
    double lr_lora = 0.0;
    double lr_text = 0.0;
    bool clipped = false;
};

// decoupled weight decay: theta <- theta (1 - lr wd) before the
// bias-corrected Adam update
class AdamW {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    struct Slot {
        std::vector<double> m, v;
    };

    void begin_step() { ++t_; }
    void step_group(std::vector<std::pair<std::string, Tensor>>& group, double lr, double wd);

    int64_t steps() const { return t_; }
    void set_steps(int64_t t) { t_ = t; }
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }

private:
    int64_t t_ = 0;
    std::map<std::string, Slot> slots_;
};

// One training session: iteration loop, two-group AdamW, prompt dropout,
// gradient clipping, loss log, checkpointing. All randomness flows through a
// single serialized RNG so a resumed run replays the uninterrupted one.
class Trainer {
public:
    Trainer(VelocityModel model, PairedDataset dataset, const TrainConfig& cfg);
    static Trainer from_checkpoint(const std::string& path, PairedDataset dataset);

    LossRow step();
    // runs to cfg.iterations; out_dir (optional) receives loss.csv, train.log,
    // checkpoint.e2rc every checkpoint_every iterations, adapter.e2ra at end
    void run(const std::string& out_dir = "", bool quiet = false);

    VelocityModel& model() { return model_; }
    const VelocityModel& model() const { return model_; }
    LoraAdapter* adapter() { return adapter_ ? &*adapter_ : nullptr; }
    int64_t iteration() const { return iter_; }
    const TrainConfig& config() const { return cfg_; }
    const PairedDataset& dataset() const { return ds_; }
    const std::vector<LossRow>& session_log() const { return session_log_; }
    int pool_size() const { return static_cast<int>(pool_.size()); }

    void save_checkpoint(const std::string& path) const;
    void save_adapter(const std::string& path) const;

    static void write_log_header(const std::string& csv_path);
    static void append_log_rows(const std::string& csv_path, const std::vector<LossRow>& rows);
    static std::string format_log_row(const LossRow& row);

    friend VelocityModel load_model_from_checkpoint(const std::string& path, bool apply_adapter);

private:
    Trainer() = default;
    void build_pool();
    void collect_groups();

    VelocityModel model_;
    PairedDataset ds_;
    TrainConfig cfg_;
    std::optional<LoraAdapter> adapter_;
    AdamW opt_;
    Rng rng_;
    TimestepSampler tsampler_;
    int64_t iter_ = 0;
    std::vector<const PairedRecord*> pool_;
    std::vector<std::pair<std::string, Tensor>> group_main_;  // adapter or full net
    std::vector<std::pair<std::string, Tensor>> group_text_;
    std::vector<LossRow> session_log_;
};

// Loads model + embedder weights from an E2RC file (trainer checkpoint or
// model-only checkpoint). When apply_adapter is set and the checkpoint
// carries adapter factors, they are attached so the model restores as
// trained; otherwise the bare base weights are returned.
VelocityModel load_model_from_checkpoint(const std::string& path, bool apply_adapter = true);
// model-only E2RC (no optimizer state); used by `adapter merge`
void save_model_checkpoint(VelocityModel& model, const std::string& path);

}  // namespace e2r
