#include "e2r/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "e2r/blobfile.hpp"
#include "e2r/config.hpp"

namespace fs = std::filesystem;

namespace e2r {

namespace {
constexpr uint32_t kCheckpointVersion = 1;
}

void TrainConfig::validate() const {
    if (iterations < 1) throw UsageError("train: iterations must be >= 1");
    if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
    if (lr_lora <= 0 || lr_text <= 0) throw UsageError("train: learning rates must be positive");
    if (wd_lora < 0 || wd_text < 0) throw UsageError("train: weight decay must be >= 0");
    if (warmup_steps < 0 || warmup_steps > iterations)
        throw UsageError("train: warmup_steps must be in [0, iterations]");
    if (rank < 1) throw UsageError("train: rank must be >= 1");
    if (regime != "unified" && regime != "per-task")
        throw UsageError("train: regime must be 'unified' or 'per-task'");
    if (regime == "per-task" && task.empty())
        throw UsageError("train: per-task regime needs a task");
    if (mode != "lora" && mode != "pretrain")
        throw UsageError("train: mode must be 'lora' or 'pretrain'");
    if (prompt_dropout < 0 || prompt_dropout > 1)
        throw UsageError("train: prompt_dropout must be in [0, 1]");
    if (clip_norm <= 0) throw UsageError("train: clip_norm must be positive");
    if (checkpoint_every < 1) throw UsageError("train: checkpoint_every must be >= 1");
}

double lr_at(int64_t step, int64_t warmup, double base_lr) {
    if (step < 1) throw UsageError("lr_at: step must be >= 1");
    if (warmup <= 0 || step >= warmup) return base_lr;
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
}

void AdamW::step_group(std::vector<std::pair<std::string, Tensor>>& group, double lr, double wd) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto& [name, p] : group) {
        Slot& slot = slots_[name];
        size_t n = p.vec().size();
        if (slot.m.empty()) {
            slot.m.assign(n, 0.0);
            slot.v.assign(n, 0.0);
        }
        double* theta = p.data();
        const double* g = p.has_grad() ? p.grad().data() : nullptr;
        for (size_t i = 0; i < n; ++i) {
            theta[i] -= lr * wd * theta[i];  // decoupled decay
            double gi = g != nullptr ? g[i] : 0.0;
            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * gi;
            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * gi * gi;
            double mhat = slot.m[i] / bc1;
            double vhat = slot.v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

Trainer::Trainer(VelocityModel model, PairedDataset dataset, const TrainConfig& cfg)
    : model_(std::move(model)), ds_(std::move(dataset)), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    tsampler_ = TimestepSampler{0.0, 1.0, cfg_.seed};
    if (cfg_.mode == "lora") {
        model_.net.set_requires_grad(false);
        LoraSpec spec;
        spec.rank = cfg_.rank;
        spec.alpha = cfg_.alpha;
        spec.task_tag = cfg_.regime == "per-task" ? cfg_.task : "unified";
        adapter_ = inject(model_.net, spec, derive_seed(cfg_.seed, 0xADAu));
    } else {
        model_.net.set_requires_grad(true);
    }
    model_.text.set_trainable(cfg_.text_encoder_trainable);
    build_pool();
    collect_groups();
}

void Trainer::build_pool() {
    if (cfg_.mode == "lora" && cfg_.regime == "per-task")
        pool_ = ds_.task_records("train", cfg_.task);
    else
        pool_ = ds_.split_records("train");
    if (pool_.empty()) throw DataError("train: no training records after filtering");
}

void Trainer::collect_groups() {
    group_main_.clear();
    group_text_.clear();
    if (cfg_.mode == "lora") {
        group_main_ = adapter_->named_parameters();
    } else {
        for (auto& [n, t] : model_.net.named_parameters()) group_main_.emplace_back("model." + n, t);
    }
    if (cfg_.text_encoder_trainable) group_text_ = model_.text.named_parameters();
}

LossRow Trainer::step() {
    if (iter_ >= cfg_.iterations) throw UsageError("train: run already complete");
    const int64_t it = iter_ + 1;
    const double lr_main = lr_at(it, cfg_.warmup_steps, cfg_.lr_lora);
    const double lr_text = lr_at(it, cfg_.warmup_steps, cfg_.lr_text);

    for (auto& [n, p] : group_main_) p.zero_grad();
    for (auto& [n, p] : group_text_) p.zero_grad();

    Tape tape;
    Tensor total;
    std::vector<int> batch_ids;
    try {
        TapeScope scope(tape);
        for (int b = 0; b < cfg_.batch_size; ++b) {
            // fixed draw order per sample: record index, t, eps, prompt dropout
            const PairedRecord* rec =
                pool_[static_cast<size_t>(rng_.uniform_int(static_cast<int64_t>(pool_.size())))];
            batch_ids.push_back(rec->id);
            FlowSample fs = make_flow_sample(image_to_tensor(rec->clean), tsampler_, rng_);
            double drop = rng_.uniform();
            std::vector<int> ids = (cfg_.mode == "pretrain" || drop < cfg_.prompt_dropout)
                                       ? null_prompt_ids()
                                       : tokenize(rec->prompt);
            Tensor v_pred =
                model_.velocity(fs.z_t, image_to_tensor(rec->degraded), ids, fs.t);
            Tensor loss_b = flow_loss(v_pred, fs.v_target);
            total = total.defined() ? add(total, loss_b) : loss_b;
        }
        total = scale(total, 1.0 / cfg_.batch_size);
        if (!std::isfinite(total.item())) throw NumericError("non-finite loss");
        tape.backward(total);
    } catch (const NumericError& e) {
        std::ostringstream os;
        os << "train: " << e.what() << " at iteration " << it << "; batch records [";
        for (size_t i = 0; i < batch_ids.size(); ++i) os << (i ? ", " : "") << batch_ids[i];
        os << "]";
        throw NumericError(os.str());
    }

    // global-norm clip across both groups
    double norm2 = 0.0;
    auto add_norm = [&](std::vector<std::pair<std::string, Tensor>>& g) {
        for (auto& [n, p] : g)
            if (p.has_grad())
                for (double v : p.grad()) norm2 += v * v;
    };
    add_norm(group_main_);
    add_norm(group_text_);
    double norm = std::sqrt(norm2);
    bool clipped = norm > cfg_.clip_norm;
    if (clipped) {
        double s = cfg_.clip_norm / norm;
        auto scale_grads = [&](std::vector<std::pair<std::string, Tensor>>& g) {
            for (auto& [n, p] : g)
                if (p.has_grad())
                    for (double& v : p.grad_ref()) v *= s;
        };
        scale_grads(group_main_);
        scale_grads(group_text_);
    }

    opt_.begin_step();
    opt_.step_group(group_main_, lr_main, cfg_.wd_lora);
    if (!group_text_.empty()) opt_.step_group(group_text_, lr_text, cfg_.wd_text);

    iter_ = it;
    LossRow row{it, total.item(), lr_main, lr_text, clipped};
    session_log_.push_back(row);
    return row;
}

std::string Trainer::format_log_row(const LossRow& row) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%d\n",
                  static_cast<long long>(row.iteration), row.loss, row.lr_lora, row.lr_text,
                  row.clipped ? 1 : 0);
    return buf;
}

void Trainer::write_log_header(const std::string& csv_path) {
    std::ofstream f(csv_path);
    if (!f) throw DataError("train: cannot write " + csv_path);
    f << "iteration,loss,lr_lora,lr_text,clipped\n";
}

void Trainer::append_log_rows(const std::string& csv_path, const std::vector<LossRow>& rows) {
    std::ofstream f(csv_path, std::ios::app);
    if (!f) throw DataError("train: cannot append to " + csv_path);
    for (const LossRow& r : rows) f << format_log_row(r);
}

namespace {

// keep header and rows up to max_iter; a crashed session may have written
// rows past the last checkpoint
void truncate_log(const std::string& csv_path, int64_t max_iter) {
    std::ifstream in(csv_path);
    if (!in) return;
    std::vector<std::string> keep;
    std::string line;
    if (std::getline(in, line)) keep.push_back(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        int64_t it = std::strtoll(line.c_str(), nullptr, 10);
        if (it <= max_iter) keep.push_back(line);
    }
    in.close();
    std::ofstream out(csv_path);
    for (const std::string& l : keep) out << l << '\n';
}

}  // namespace

void Trainer::run(const std::string& out_dir, bool quiet) {
    std::string csv, log_path, ckpt_path;
    std::ofstream csv_stream;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        csv = (fs::path(out_dir) / "loss.csv").string();
        log_path = (fs::path(out_dir) / "train.log").string();
        ckpt_path = (fs::path(out_dir) / "checkpoint.e2rc").string();
        if (iter_ == 0)
            write_log_header(csv);
        else
            truncate_log(csv, iter_);
        csv_stream.open(csv, std::ios::app);

        std::ofstream lg(log_path, iter_ == 0 ? std::ios::trunc : std::ios::app);
        std::map<std::string, int> per_task;
        for (const PairedRecord* r : pool_) per_task[r->task]++;
        lg << "records: " << pool_.size();
        std::string sep = " (";
        for (const auto& [t, n] : per_task) {
            lg << sep << t << ' ' << n;
            sep = ", ";
        }
        lg << ")\n";
        lg << "mode: " << cfg_.mode << ", regime: " << cfg_.regime
           << (cfg_.regime == "per-task" ? " [" + cfg_.task + "]" : "") << "\n";
        lg << "batch_size: " << cfg_.batch_size << "\n";
        int64_t ipe = static_cast<int64_t>(pool_.size()) / cfg_.batch_size;
        lg << "iterations: " << cfg_.iterations << " (iterations per epoch: " << ipe
           << ", epochs: " << (ipe > 0 ? cfg_.iterations / ipe : 0) << ")\n";
        if (cfg_.mode == "lora" && cfg_.regime == "unified" && !ds_.tasks.empty())
            lg << "approx iterations per task: " << cfg_.iterations / static_cast<int>(ds_.tasks.size())
               << "\n";
        lg << "text-embedder: " << (cfg_.text_encoder_trainable ? "trainable" : "frozen") << "\n";
        if (cfg_.mode == "lora")
            lg << "adapter: rank " << cfg_.rank << ", alpha " << cfg_.alpha << ", trainable params "
               << adapter_->param_count() << "\n";
    }

    while (iter_ < cfg_.iterations) {
        LossRow row = step();
        if (csv_stream.is_open()) {
            csv_stream << format_log_row(row);
            csv_stream.flush();
        }
        if (!quiet && (row.iteration % 200 == 0 || row.iteration == cfg_.iterations))
            std::fprintf(stderr, "  iter %5lld  loss %.5f\n",
                         static_cast<long long>(row.iteration), row.loss);
        if (!ckpt_path.empty() &&
            (iter_ % cfg_.checkpoint_every == 0 || iter_ == cfg_.iterations))
            save_checkpoint(ckpt_path);
    }
    if (!out_dir.empty() && cfg_.mode == "lora")
        save_adapter((fs::path(out_dir) / "adapter.e2ra").string());
}

void Trainer::save_checkpoint(const std::string& path) const {
    nlohmann::json meta;
    meta["kind"] = "train-checkpoint";
    meta["iteration"] = iter_;
    meta["adam_t"] = opt_.steps();
    meta["rng"] = rng_.state();
    meta["model_config"] = model_config_to_json(model_.cfg);
    meta["train_config"] = train_config_to_json(cfg_);
    meta["vocab"] = vocab::words();
    meta["dataset"] = {{"seed", ds_.seed},
                       {"n_per_task", ds_.n_per_task},
                       {"n_eval_per_task", ds_.n_eval_per_task},
                       {"image_size", ds_.image_size},
                       {"corpus_style", ds_.corpus_style},
                       {"tasks", ds_.tasks}};
    if (adapter_) {
        nlohmann::json sites = nlohmann::json::array();
        for (const LoraSiteFactors& s : adapter_->sites()) sites.push_back(s.name);
        meta["adapter"] = {{"rank", adapter_->rank()},
                           {"alpha", adapter_->alpha()},
                           {"task_tag", adapter_->task_tag()},
                           {"sites", sites}};
    }

    std::vector<NamedArray> arrays;
    VelocityModel& m = const_cast<VelocityModel&>(model_);
    for (auto& [n, t] : m.named_parameters()) arrays.push_back({n, t.shape(), t.vec()});
    if (adapter_) {
        LoraAdapter& ad = const_cast<LoraAdapter&>(*adapter_);
        for (auto& [n, t] : ad.named_parameters()) arrays.push_back({n, t.shape(), t.vec()});
    }
    for (const auto& [name, slot] : opt_.slots()) {
        arrays.push_back({"opt.m." + name, {static_cast<int>(slot.m.size())}, slot.m});
        arrays.push_back({"opt.v." + name, {static_cast<int>(slot.v.size())}, slot.v});
    }
    write_blob(path, "E2RC", kCheckpointVersion, meta, arrays);
}

void Trainer::save_adapter(const std::string& path) const {
    if (!adapter_) throw UsageError("train: no adapter in pretrain mode");
    adapter_->save(path);
}

Trainer Trainer::from_checkpoint(const std::string& path, PairedDataset dataset) {
    Blob blob = read_blob(path, "E2RC", kCheckpointVersion);
    Trainer tr;
    tr.cfg_ = train_config_from_json(blob.meta.at("train_config"));
    ModelConfig mc = model_config_from_json(blob.meta.at("model_config"));
    if (blob.meta.at("vocab").get<std::vector<std::string>>() != vocab::words())
        throw DataError("checkpoint " + path + " was written with a different vocabulary");
    tr.ds_ = std::move(dataset);
    tr.model_ = VelocityModel(mc, 0);
    for (auto& [n, t] : tr.model_.named_parameters()) {
        const NamedArray& a = blob.find(n);
        if (a.shape != t.shape())
            throw DataError("checkpoint " + path + ": shape mismatch for '" + n + "': file " +
                            shape_str(a.shape) + " vs model " + shape_str(t.shape()));
        t.vec() = a.data;
    }
    if (tr.cfg_.mode == "lora") {
        if (!blob.meta.contains("adapter"))
            throw DataError("checkpoint " + path + ": lora mode but no adapter section");
        const auto& am = blob.meta.at("adapter");
        LoraAdapter ad;
        // rebuild factors from payloads, then attach
        LoraSpec spec;
        spec.rank = am.at("rank").get<int>();
        spec.alpha = am.at("alpha").get<double>();
        spec.task_tag = am.at("task_tag").get<std::string>();
        tr.model_.net.set_requires_grad(false);
        ad = inject(tr.model_.net, spec, 0);
        ad.set_task_tag(spec.task_tag);
        auto site_names = am.at("sites").get<std::vector<std::string>>();
        if (site_names.size() != ad.sites().size())
            throw DataError("checkpoint " + path + ": adapter site list mismatch");
        for (LoraSiteFactors& s : ad.sites()) {
            s.a.vec() = blob.find("lora." + s.name + ".A").data;
            s.b.vec() = blob.find("lora." + s.name + ".B").data;
        }
        tr.adapter_ = std::move(ad);
        tr.adapter_->set_requires_grad(true);
    } else {
        tr.model_.net.set_requires_grad(true);
    }
    tr.model_.text.set_trainable(tr.cfg_.text_encoder_trainable);
    tr.iter_ = blob.meta.at("iteration").get<int64_t>();
    tr.opt_.set_steps(blob.meta.at("adam_t").get<int64_t>());
    tr.rng_.set_state(blob.meta.at("rng").get<std::string>());
    tr.tsampler_ = TimestepSampler{0.0, 1.0, tr.cfg_.seed};
    tr.build_pool();
    tr.collect_groups();
    for (const NamedArray& a : blob.arrays) {
        if (a.name.rfind("opt.m.", 0) == 0)
            tr.opt_.slots()[a.name.substr(6)].m = a.data;
        else if (a.name.rfind("opt.v.", 0) == 0)
            tr.opt_.slots()[a.name.substr(6)].v = a.data;
    }
    return tr;
}

VelocityModel load_model_from_checkpoint(const std::string& path, bool apply_adapter) {
    Blob blob = read_blob(path, "E2RC", kCheckpointVersion);
    ModelConfig mc = model_config_from_json(blob.meta.at("model_config"));
    if (blob.meta.contains("vocab") &&
        blob.meta.at("vocab").get<std::vector<std::string>>() != vocab::words())
        throw DataError("checkpoint " + path + " was written with a different vocabulary");
    VelocityModel model(mc, 0);
    for (auto& [n, t] : model.named_parameters()) {
        const NamedArray& a = blob.find(n);
        if (a.shape != t.shape())
            throw DataError("checkpoint " + path + ": shape mismatch for '" + n + "': file " +
                            shape_str(a.shape) + " vs model " + shape_str(t.shape()));
        t.vec() = a.data;
    }
    model.net.set_requires_grad(false);
    model.text.set_trainable(false);
    if (apply_adapter && blob.meta.contains("adapter")) {
        const auto& am = blob.meta.at("adapter");
        LoraAdapter ad;
        LoraSpec spec;
        spec.rank = am.at("rank").get<int>();
        spec.alpha = am.at("alpha").get<double>();
        spec.task_tag = am.at("task_tag").get<std::string>();
        ad = inject(model.net, spec, 0);
        for (LoraSiteFactors& s : ad.sites()) {
            s.a.vec() = blob.find("lora." + s.name + ".A").data;
            s.b.vec() = blob.find("lora." + s.name + ".B").data;
        }
        ad.set_requires_grad(false);
        // the bindings share the factor tensors; the adapter object may go
        // out of scope without unbinding them
    }
    return model;
}

void save_model_checkpoint(VelocityModel& model, const std::string& path) {
    nlohmann::json meta;
    meta["kind"] = "model-checkpoint";
    meta["iteration"] = 0;
    meta["model_config"] = model_config_to_json(model.cfg);
    meta["vocab"] = vocab::words();
    std::vector<NamedArray> arrays;
    for (auto& [n, t] : model.named_parameters()) arrays.push_back({n, t.shape(), t.vec()});
    write_blob(path, "E2RC", kCheckpointVersion, meta, arrays);
}

}  // namespace e2r
