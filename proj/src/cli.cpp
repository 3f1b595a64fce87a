#include "e2r/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "e2r/config.hpp"
#include "e2r/kernels.hpp"

namespace fs = std::filesystem;

namespace e2r {

namespace {

RunConfig config_or_default(const std::string& path) {
    return path.empty() ? default_run_config() : load_run_config(path);
}

void cmd_degrade(const std::string& config_path, const std::string& out_dir,
                 const std::vector<std::string>& task_override, int64_t seed_override,
                 int n_override) {
    RunConfig cfg = config_or_default(config_path);
    if (!task_override.empty()) cfg.data.tasks = task_override;
    for (const std::string& t : cfg.data.tasks) task_prompt(t);  // usage error on bad names
    if (seed_override >= 0) cfg.data.seed = static_cast<uint64_t>(seed_override);
    if (n_override > 0) cfg.data.n_per_task = n_override;
    PairedDataset ds = build_dataset(cfg.data.n_per_task, cfg.data.tasks, cfg.data.seed,
                                     cfg.data.image_size, cfg.data.n_eval_per_task,
                                     cfg.data.corpus_style);
    save_dataset(ds, out_dir);
    int train_n = static_cast<int>(ds.split_records("train").size());
    int eval_n = static_cast<int>(ds.split_records("eval").size());
    std::printf("degrade: wrote %d records to %s (train %d, eval %d)\n",
                static_cast<int>(ds.records.size()), out_dir.c_str(), train_n, eval_n);
}

void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, const std::string& init_from, bool resume,
               int64_t seed_override, const std::string& mode_override,
               const std::string& task_override) {
    RunConfig cfg = config_or_default(config_path);
    if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
    if (!mode_override.empty()) cfg.train.mode = mode_override;
    if (!task_override.empty()) {
        cfg.train.regime = "per-task";
        cfg.train.task = task_override;
    }
    cfg.train.validate();
    PairedDataset ds = load_dataset(data_dir);

    std::string ckpt = (fs::path(out_dir) / "checkpoint.e2rc").string();
    if (resume && fs::exists(ckpt)) {
        Trainer tr = Trainer::from_checkpoint(ckpt, std::move(ds));
        std::printf("train: resuming %s at iteration %lld\n", ckpt.c_str(),
                    static_cast<long long>(tr.iteration()));
        tr.run(out_dir);
        std::printf("train: done at iteration %lld\n", static_cast<long long>(tr.iteration()));
        return;
    }

    VelocityModel model = init_from.empty()
                              ? VelocityModel(cfg.model, derive_seed(cfg.train.seed, 0x40DEu))
                              : load_model_from_checkpoint(init_from, /*apply_adapter=*/false);
    Trainer tr(std::move(model), std::move(ds), cfg.train);
    std::printf("train: %d records in pool, mode %s, regime %s\n", tr.pool_size(),
                cfg.train.mode.c_str(), cfg.train.regime.c_str());
    tr.run(out_dir);
    std::printf("train: done at iteration %lld, outputs in %s\n",
                static_cast<long long>(tr.iteration()), out_dir.c_str());
}

void validate_prompt_is_template(const std::string& prompt) {
    for (const std::string& t : task_names())
        if (prompt == task_prompt(t)) return;
    std::string valid;
    for (const std::string& t : task_names()) valid += "\n  \"" + task_prompt(t) + "\"";
    throw UsageError("restore: prompt must be one of the task templates (or --prompt-free):" +
                     valid);
}

void cmd_restore(const std::string& config_path, const std::string& checkpoint,
                 const std::string& adapter_path, const std::string& input,
                 const std::string& output, const std::string& prompt, bool prompt_free,
                 int64_t seed_override, int steps_override, double guidance_override) {
    RunConfig cfg = config_or_default(config_path);
    SampleConfig sc = cfg.sample;
    if (seed_override >= 0) sc.seed = static_cast<uint64_t>(seed_override);
    if (steps_override > 0) sc.steps = steps_override;
    if (guidance_override >= 0) sc.guidance = guidance_override;
    if (prompt_free) {
        sc.prompt = "";
    } else {
        validate_prompt_is_template(prompt);
        sc.prompt = prompt;
    }
    if (!fs::exists(checkpoint)) throw DataError("restore: checkpoint not found: " + checkpoint);
    VelocityModel model = load_model_from_checkpoint(checkpoint, adapter_path.empty());
    if (!adapter_path.empty()) {
        if (!fs::exists(adapter_path))
            throw DataError("restore: adapter file not found: " + adapter_path);
        LoraAdapter ad = LoraAdapter::load(adapter_path);
        attach(model.net, ad);
    }
    Image in = read_ppm(input);
    Image out = restore(model, in, sc);
    write_ppm(out, output);
    std::printf("restore: %s (%dx%d) -> %s (%dx%d), steps %d, guidance %g\n", input.c_str(), in.w,
                in.h, output.c_str(), out.w, out.h, sc.steps, sc.guidance);
}

std::vector<MetricRow> eval_rows_for(const VelocityModel& model, const PairedDataset& ds,
                                     const FeatureExtractor& fx, const EvalOptions& opts,
                                     const std::string& label) {
    return evaluate_model(model, ds, fx, opts, label);
}

void cmd_eval(const std::string& config_path, const std::string& checkpoint,
              const std::string& adapter_path, const std::string& data_dir,
              const std::string& report, bool with_baseline, int64_t seed_override) {
    RunConfig cfg = config_or_default(config_path);
    PairedDataset ds = load_dataset(data_dir);
    if (ds.split_records("eval").empty()) throw DataError("eval: dataset has no eval split");
    FeatureExtractor fx(cfg.eval.feature_seed);
    EvalOptions opts;
    opts.sample = cfg.sample;
    opts.sample.prompt.clear();
    opts.seed = seed_override >= 0 ? static_cast<uint64_t>(seed_override) : cfg.eval.seed;
    opts.bandwidth = cfg.eval.bandwidth;

    if (!fs::exists(checkpoint)) throw DataError("eval: checkpoint not found: " + checkpoint);
    VelocityModel model = load_model_from_checkpoint(checkpoint, adapter_path.empty());
    if (!adapter_path.empty()) {
        LoraAdapter ad = LoraAdapter::load(adapter_path);
        attach(model.net, ad);
    }

    std::vector<MetricRow> rows = eval_rows_for(model, ds, fx, opts, "adapted");
    if (with_baseline) {
        VelocityModel base = load_model_from_checkpoint(checkpoint, /*apply_adapter=*/false);
        detach(base.net);
        auto base_rows = eval_rows_for(base, ds, fx, opts, "baseline");
        rows.insert(rows.end(), base_rows.begin(), base_rows.end());
    }
    auto floor_rows = evaluate_floor(ds, fx, opts.bandwidth);
    rows.insert(rows.end(), floor_rows.begin(), floor_rows.end());

    write_report_csv(report, rows);
    write_report_sidecar(report, fx, opts);
    std::printf("eval: wrote %zu rows to %s\n", rows.size(), report.c_str());
}

struct SweepArm {
    std::string regime;  // unified | per-task
    bool te_tuned = true;
    int n_pairs = 0;
};

std::string cell(const std::vector<MetricRow>& rows, const std::string& config,
                 const std::string& task, double sigma) {
    for (const MetricRow& r : rows) {
        if (r.config != config || r.task != task) continue;
        if (sigma > 0 && r.sigma != sigma) continue;
        if (sigma <= 0 && r.sigma > 0) continue;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%.3f/%.4f/%.2f", r.fid, r.mmd, r.psnr_mean);
        return buf;
    }
    return "-";
}

void cmd_sweep(const std::string& config_path, const std::string& base_ckpt,
               const std::string& out_dir, std::vector<int> pairs,
               std::vector<std::string> regimes, const std::string& te_arms) {
    RunConfig cfg = config_or_default(config_path);
    if (pairs.empty()) pairs = {16, 32, 64, 128};
    if (regimes.empty()) regimes = {"unified"};
    for (const std::string& r : regimes)
        if (r != "unified" && r != "per-task")
            throw UsageError("sweep: regime must be 'unified' or 'per-task', got '" + r + "'");
    std::vector<bool> te;
    if (te_arms == "tuned") te = {true};
    else if (te_arms == "frozen") te = {false};
    else if (te_arms == "both") te = {true, false};
    else throw UsageError("sweep: --te must be tuned, frozen or both");
    if (!fs::exists(base_ckpt)) throw DataError("sweep: base checkpoint not found: " + base_ckpt);

    fs::create_directories(out_dir);
    FeatureExtractor fx(cfg.eval.feature_seed);

    // one dataset per pool size, derived seeds
    for (int n : pairs) {
        std::string ddir = (fs::path(out_dir) / ("data_n" + std::to_string(n))).string();
        if (!fs::exists(fs::path(ddir) / "manifest.json")) {
            PairedDataset ds =
                build_dataset(n, cfg.data.tasks, derive_seed(cfg.data.seed, static_cast<uint64_t>(n)),
                              cfg.data.image_size, cfg.data.n_eval_per_task, cfg.data.corpus_style);
            save_dataset(ds, ddir);
        }
    }

    std::vector<std::string> summary_lines;
    for (int n : pairs) {
        std::string ddir = (fs::path(out_dir) / ("data_n" + std::to_string(n))).string();
        PairedDataset ds = load_dataset(ddir);
        for (const std::string& regime : regimes) {
            for (bool tuned : te) {
                std::string label = regime + (tuned ? "_te-tuned" : "_te-frozen") + "_n" +
                                    std::to_string(n);
                fs::path run_dir = fs::path(out_dir) / ("run_" + label);
                fs::create_directories(run_dir);
                std::printf("sweep: run %s\n", label.c_str());

                std::vector<std::string> arms =
                    regime == "per-task" ? cfg.data.tasks : std::vector<std::string>{""};
                std::vector<MetricRow> rows;
                for (const std::string& arm_task : arms) {
                    fs::path arm_dir =
                        arm_task.empty() ? run_dir : run_dir / ("task_" + arm_task);
                    fs::create_directories(arm_dir);
                    std::string ckpt = (arm_dir / "checkpoint.e2rc").string();
                    std::string report = (arm_dir / "report.csv").string();

                    TrainConfig tc = cfg.train;
                    tc.mode = "lora";
                    tc.regime = regime == "per-task" ? "per-task" : "unified";
                    tc.task = arm_task;
                    tc.text_encoder_trainable = tuned;
                    tc.seed = derive_seed(cfg.train.seed,
                                          fnv1a64(label.data(), label.size()) ^
                                              fnv1a64(arm_task.data(), arm_task.size()));
                    bool trained = fs::exists(ckpt);
                    if (trained) {
                        std::printf("  %s: checkpoint present, skipping training\n",
                                    arm_task.empty() ? "unified" : arm_task.c_str());
                    } else {
                        VelocityModel model =
                            load_model_from_checkpoint(base_ckpt, /*apply_adapter=*/false);
                        Trainer tr(std::move(model), ds, tc);
                        tr.run(arm_dir.string(), /*quiet=*/true);
                    }
                    if (!fs::exists(report)) {
                        VelocityModel model = load_model_from_checkpoint(ckpt);
                        EvalOptions opts;
                        opts.sample = cfg.sample;
                        opts.seed = derive_seed(cfg.eval.seed, static_cast<uint64_t>(n));
                        opts.bandwidth = cfg.eval.bandwidth;
                        PairedDataset eval_ds = ds;
                        if (!arm_task.empty()) {
                            // per-task adapters are scored on their own task only
                            PairedDataset filtered = ds;
                            filtered.records.clear();
                            for (const PairedRecord& r : ds.records)
                                if (r.task == arm_task) filtered.records.push_back(r);
                            filtered.tasks = {arm_task};
                            eval_ds = std::move(filtered);
                        }
                        auto arm_rows = evaluate_model(model, eval_ds, fx, opts, "adapted");
                        auto floor_rows = evaluate_floor(eval_ds, fx, opts.bandwidth);
                        arm_rows.insert(arm_rows.end(), floor_rows.begin(), floor_rows.end());
                        write_report_csv(report, arm_rows);
                        write_report_sidecar(report, fx, opts);
                    }
                    auto arm_rows = read_report_csv(report);
                    rows.insert(rows.end(), arm_rows.begin(), arm_rows.end());
                }

                std::ostringstream line;
                line << regime << ',' << (tuned ? "tuned" : "frozen") << ',' << n << ','
                     << cell(rows, "adapted", "haze", 0) << ',' << cell(rows, "adapted", "rain", 0)
                     << ',' << cell(rows, "adapted", "noise", 15) << ','
                     << cell(rows, "adapted", "noise", 25) << ','
                     << cell(rows, "adapted", "noise", 50);
                summary_lines.push_back(line.str());
            }
        }
    }
    std::string summary = (fs::path(out_dir) / "summary.csv").string();
    std::ofstream f(summary);
    if (!f) throw DataError("sweep: cannot write " + summary);
    f << "regime,text_encoder,n_pairs,haze,rain,noise_s15,noise_s25,noise_s50\n";
    for (const std::string& l : summary_lines) f << l << '\n';
    std::printf("sweep: wrote %s (%zu runs); cells are fid/mmd/psnr\n", summary.c_str(),
                summary_lines.size());
}

void cmd_adapter_info(const std::string& path) {
    LoraAdapter ad = LoraAdapter::load(path);
    std::printf("adapter: %s\n", path.c_str());
    std::printf("  rank: %d\n  alpha: %g (scale %g)\n  task_tag: %s\n", ad.rank(), ad.alpha(),
                ad.scale(), ad.task_tag().c_str());
    std::printf("  sites: %zu\n  parameters: %lld\n", ad.sites().size(),
                static_cast<long long>(ad.param_count()));
    std::printf("  file size: %lld bytes\n",
                static_cast<long long>(fs::file_size(path)));
}

void cmd_adapter_merge(const std::string& checkpoint, const std::string& adapter_path,
                       const std::string& out) {
    VelocityModel model = load_model_from_checkpoint(checkpoint, /*apply_adapter=*/false);
    detach(model.net);
    LoraAdapter ad = LoraAdapter::load(adapter_path);
    merge(ad, model.net);
    save_model_checkpoint(model, out);
    std::printf("adapter: merged %s into %s -> %s\n", adapter_path.c_str(), checkpoint.c_str(),
                out.c_str());
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"few-shot prompt-conditioned image restoration via rectified-flow LoRA"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "cap internal parallelism (overrides E2R_THREADS)");

    std::string config_path, out_dir, data_dir, init_from, checkpoint, adapter_path;
    std::string input, output, prompt, mode_override, task_override, te_arms = "tuned";
    std::string report, base_ckpt;
    std::vector<std::string> tasks, regimes;
    std::vector<int> pairs;
    bool resume = false, prompt_free = false, with_baseline = false;
    int64_t seed = -1;
    int steps = 0, n_pairs = 0;
    double guidance = -1;

    CLI::App* degrade = app.add_subcommand("degrade", "synthesize a paired dataset directory");
    degrade->add_option("--config", config_path, "run config JSON");
    degrade->add_option("--out", out_dir, "output dataset directory")->required();
    degrade->add_option("--tasks", tasks, "override task list")->delimiter(',');
    degrade->add_option("--pairs", n_pairs, "override train pairs per task");
    degrade->add_option("--seed", seed, "override data seed");

    CLI::App* train = app.add_subcommand("train", "train (LoRA adaptation or full pretraining)");
    train->add_option("--config", config_path, "run config JSON");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--init-from", init_from, "base checkpoint to start from");
    train->add_flag("--resume", resume, "resume from out/checkpoint.e2rc if present");
    train->add_option("--seed", seed, "override train seed");
    train->add_option("--mode", mode_override, "override mode: lora | pretrain");
    train->add_option("--task", task_override, "train per-task regime on this task");

    CLI::App* rest = app.add_subcommand("restore", "restore one image");
    rest->add_option("--config", config_path, "run config JSON");
    rest->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    rest->add_option("--adapter", adapter_path, "adapter file to apply");
    rest->add_option("--input", input, "degraded input PPM")->required();
    rest->add_option("--output", output, "restored output PPM")->required();
    rest->add_option("--prompt", prompt, "restoration prompt (task template)");
    rest->add_flag("--prompt-free", prompt_free, "use the unconditional null prompt");
    rest->add_option("--seed", seed, "sampling seed");
    rest->add_option("--steps", steps, "integration steps");
    rest->add_option("--guidance", guidance, "guidance scale");

    CLI::App* ev = app.add_subcommand("eval", "evaluate on a dataset's eval split");
    ev->add_option("--config", config_path, "run config JSON");
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    ev->add_option("--adapter", adapter_path, "adapter file to apply");
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--report", report, "output CSV path")->required();
    ev->add_flag("--with-baseline", with_baseline, "also score the non-adapted base model");
    ev->add_option("--seed", seed, "eval seed");

    CLI::App* sweep = app.add_subcommand("sweep", "grid of runs over pool size/regime/text arm");
    sweep->add_option("--config", config_path, "run config JSON");
    sweep->add_option("--base", base_ckpt, "pretrained base checkpoint")->required();
    sweep->add_option("--out", out_dir, "sweep output directory")->required();
    sweep->add_option("--pairs", pairs, "pool sizes (default 16,32,64,128)")->delimiter(',');
    sweep->add_option("--regimes", regimes, "unified,per-task")->delimiter(',');
    sweep->add_option("--te", te_arms, "text-embedder arms: tuned | frozen | both");

    CLI::App* adapter = app.add_subcommand("adapter", "adapter file utilities");
    adapter->require_subcommand(1);
    CLI::App* info = adapter->add_subcommand("info", "print adapter header");
    std::string info_path;
    info->add_option("file", info_path, "adapter file")->required();
    CLI::App* amerge = adapter->add_subcommand("merge", "bake an adapter into a checkpoint");
    amerge->add_option("--checkpoint", checkpoint, "base checkpoint")->required();
    amerge->add_option("--adapter", adapter_path, "adapter file")->required();
    amerge->add_option("--out", output, "merged checkpoint path")->required();

    try {
        app.parse(argc, argv);
        if (threads > 0) kern::set_max_threads(threads);
        if (degrade->parsed()) cmd_degrade(config_path, out_dir, tasks, seed, n_pairs);
        if (train->parsed())
            cmd_train(config_path, data_dir, out_dir, init_from, resume, seed, mode_override,
                      task_override);
        if (rest->parsed())
            cmd_restore(config_path, checkpoint, adapter_path, input, output, prompt, prompt_free,
                        seed, steps, guidance);
        if (ev->parsed())
            cmd_eval(config_path, checkpoint, adapter_path, data_dir, report, with_baseline, seed);
        if (sweep->parsed()) cmd_sweep(config_path, base_ckpt, out_dir, pairs, regimes, te_arms);
        if (adapter->parsed()) {
            if (info->parsed()) cmd_adapter_info(info_path);
            if (amerge->parsed()) cmd_adapter_merge(checkpoint, adapter_path, output);
        }
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace e2r
