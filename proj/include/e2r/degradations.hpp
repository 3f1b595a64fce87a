#pragma once

#include <string>
#include <vector>

#include "e2r/image.hpp"
#include "e2r/rng.hpp"

namespace e2r {

// Parametric description of one corruption. `kind` selects which parameter
// group is read; the others are ignored.
struct DegradationSpec {
    std::string kind;  // noise | rain | haze

    double sigma = 25.0;  // gaussian noise stddev on the 0-255 scale

    int rain_count = 14;
    double rain_length = 12.0;     // pixels
    double rain_angle_deg = 90.0;  // global per-image angle
    double rain_jitter_deg = 4.0;  // per-streak jitter
    double rain_intensity = 0.5;
    double rain_width = 0.7;  // gaussian half-width across the streak

    double haze_beta = 1.0;   // scattering coefficient
    double haze_light = 0.9;  // atmospheric light A
    uint64_t depth_seed = 0;  // smooth synthetic depth field
};

Image degrade_noise(const Image& clean, double sigma, Rng& rng);
// atmospheric scattering: I = J tau + A (1 - tau), tau = exp(-beta * depth)
Image degrade_haze(const Image& clean, double beta, double light,
                   const std::vector<double>& depth);
Image degrade_rain(const Image& clean, const DegradationSpec& spec, Rng& rng);
Image apply_degradation(const Image& clean, const DegradationSpec& spec, Rng& rng);

// smooth random field (gaussian mixture) normalized to [0, 3]
std::vector<double> make_depth_field(int h, int w, Rng& rng);

// procedural clean corpus; style 0 = benchmark corpus (gradients + shapes +
// light texture), style 1 = generic pretraining corpus (gradients + blobs +
// stronger texture, no shapes)
Image make_clean_image(int size, Rng& rng, int style = 0);

struct PairedRecord {
    int id = 0;
    std::string task;
    std::string split;  // train | eval
    std::string prompt;
    DegradationSpec spec;
    Image clean;
    Image degraded;
};

struct PairedDataset {
    int image_size = 0;
    uint64_t seed = 0;
    int n_per_task = 0;
    int n_eval_per_task = 0;
    int corpus_style = 0;
    std::vector<std::string> tasks;
    std::vector<PairedRecord> records;  // shuffled train records, then eval records

    std::vector<const PairedRecord*> split_records(const std::string& split) const;
    std::vector<const PairedRecord*> task_records(const std::string& split,
                                                  const std::string& task) const;
};

// Deterministic under seed. The noise task splits n across sigma 15/25/50 as
// evenly as possible; train records are shuffled to mix the tasks; eval
// records come from a disjoint region of the procedural corpus.
PairedDataset build_dataset(int n_per_task, const std::vector<std::string>& tasks, uint64_t seed,
                            int image_size, int n_eval_per_task, int corpus_style = 0);

// dataset directory: clean/NNNNN.ppm, degraded/NNNNN.ppm, manifest.json
void save_dataset(const PairedDataset& ds, const std::string& dir);
PairedDataset load_dataset(const std::string& dir);

}  // namespace e2r
