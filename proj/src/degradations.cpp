#include "e2r/degradations.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "e2r/text_embed.hpp"

namespace fs = std::filesystem;

namespace e2r {

Image degrade_noise(const Image& clean, double sigma, Rng& rng) {
    if (sigma < 0) throw DataError("degrade_noise: sigma must be >= 0");
    Image out = clean;
    const double s = sigma / 255.0;
    for (double& v : out.px) v += s * rng.normal();
    clamp01(out);
    return out;
}

Image degrade_haze(const Image& clean, double beta, double light,
                   const std::vector<double>& depth) {
    if (beta < 0) throw DataError("degrade_haze: beta must be >= 0");
    if (depth.size() != static_cast<size_t>(clean.h) * clean.w)
        throw DataError("degrade_haze: depth field size mismatch");
    for (double d : depth)
        if (d < 0) throw DataError("degrade_haze: depth must be >= 0");
    Image out = clean;
    for (int y = 0; y < clean.h; ++y) {
        for (int x = 0; x < clean.w; ++x) {
            double tau = std::exp(-beta * depth[static_cast<size_t>(y) * clean.w + x]);
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = clean.at(y, x, c) * tau + light * (1.0 - tau);
        }
    }
    clamp01(out);
    return out;
}

Image degrade_rain(const Image& clean, const DegradationSpec& spec, Rng& rng) {
    if (spec.rain_count < 0) throw DataError("degrade_rain: streak count must be >= 0");
    const int h = clean.h, w = clean.w;
    std::vector<double> layer(static_cast<size_t>(h) * w, 0.0);
    const double deg = 3.14159265358979323846 / 180.0;
    for (int s = 0; s < spec.rain_count; ++s) {
        double angle =
            (spec.rain_angle_deg + rng.uniform(-spec.rain_jitter_deg, spec.rain_jitter_deg)) * deg;
        double dirx = std::cos(angle), diry = std::sin(angle);
        double len = spec.rain_length * rng.uniform(0.7, 1.3);
        double x0 = rng.uniform(-0.1, 1.1) * w;
        double y0 = rng.uniform(-0.1, 1.1) * h;
        double x1 = x0 + dirx * len, y1 = y0 + diry * len;
        double inten = spec.rain_intensity * rng.uniform(0.7, 1.3);
        double ww = spec.rain_width;

        int ylo = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - 3 * ww)));
        int yhi = std::min(h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + 3 * ww)));
        int xlo = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - 3 * ww)));
        int xhi = std::min(w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + 3 * ww)));
        double seg2 = (x1 - x0) * (x1 - x0) + (y1 - y0) * (y1 - y0);
        for (int y = ylo; y <= yhi; ++y) {
            for (int x = xlo; x <= xhi; ++x) {
                // distance to the segment; gaussian falloff across the streak
                double px = x - x0, py = y - y0;
                double u = seg2 > 0 ? std::clamp((px * (x1 - x0) + py * (y1 - y0)) / seg2, 0.0, 1.0)
                                    : 0.0;
                double dx = px - u * (x1 - x0), dy = py - u * (y1 - y0);
                double d2 = dx * dx + dy * dy;
                layer[static_cast<size_t>(y) * w + x] += inten * std::exp(-d2 / (2.0 * ww * ww));
            }
        }
    }
    Image out = clean;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double l = std::min(1.0, layer[static_cast<size_t>(y) * w + x]);
            if (l == 0.0) continue;
            // screen blend; the max guards the >= clean contract against
            // last-ulp rounding in the far gaussian tails
            for (int c = 0; c < 3; ++c) {
                double v = clean.at(y, x, c);
                out.at(y, x, c) = std::max(v, 1.0 - (1.0 - v) * (1.0 - l));
            }
        }
    }
    clamp01(out);
    return out;
}

Image apply_degradation(const Image& clean, const DegradationSpec& spec, Rng& rng) {
    if (spec.kind == "noise") return degrade_noise(clean, spec.sigma, rng);
    if (spec.kind == "rain") return degrade_rain(clean, spec, rng);
    if (spec.kind == "haze") {
        Rng depth_rng(spec.depth_seed);
        return degrade_haze(clean, spec.haze_beta, spec.haze_light,
                            make_depth_field(clean.h, clean.w, depth_rng));
    }
    throw DataError("unknown degradation kind '" + spec.kind + "'");
}

std::vector<double> make_depth_field(int h, int w, Rng& rng) {
    std::vector<double> d(static_cast<size_t>(h) * w, 0.0);
    int blobs = 3 + static_cast<int>(rng.uniform_int(3));
    for (int b = 0; b < blobs; ++b) {
        double cy = rng.uniform(0.0, 1.0) * h;
        double cx = rng.uniform(0.0, 1.0) * w;
        double s = rng.uniform(0.25, 0.6) * std::max(h, w);
        double a = rng.uniform(-1.0, 1.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                d[static_cast<size_t>(y) * w + x] +=
                    a * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2.0 * s * s));
    }
    double lo = d[0], hi = d[0];
    for (double v : d) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-12) return std::vector<double>(d.size(), 1.5);
    for (double& v : d) v = 3.0 * (v - lo) / (hi - lo);
    return d;
}

namespace {

void add_value_noise(Image& img, Rng& rng, double amp, int grid) {
    // coarse random grid, bilinearly upsampled
    std::vector<double> g(static_cast<size_t>(grid + 1) * (grid + 1) * 3);
    for (double& v : g) v = rng.uniform(-amp, amp);
    for (int y = 0; y < img.h; ++y) {
        double fy = static_cast<double>(y) / img.h * grid;
        int y0 = static_cast<int>(fy);
        double wy = fy - y0;
        for (int x = 0; x < img.w; ++x) {
            double fx = static_cast<double>(x) / img.w * grid;
            int x0 = static_cast<int>(fx);
            double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                auto at = [&](int yy, int xx) {
                    return g[(static_cast<size_t>(yy) * (grid + 1) + xx) * 3 + c];
                };
                double top = at(y0, x0) * (1 - wx) + at(y0, x0 + 1) * wx;
                double bot = at(y0 + 1, x0) * (1 - wx) + at(y0 + 1, x0 + 1) * wx;
                img.at(y, x, c) += top * (1 - wy) + bot * wy;
            }
        }
    }
}

double smoothstep(double e0, double e1, double x) {
    double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Image make_clean_image(int size, Rng& rng, int style) {
    Image img = image_zeros(size, size);
    // smooth bilinear ramp background per channel
    double c00[3], c01[3], c10[3], c11[3];
    for (int c = 0; c < 3; ++c) {
        c00[c] = rng.uniform(0.15, 0.85);
        c01[c] = rng.uniform(0.15, 0.85);
        c10[c] = rng.uniform(0.15, 0.85);
        c11[c] = rng.uniform(0.15, 0.85);
    }
    for (int y = 0; y < size; ++y) {
        double v = static_cast<double>(y) / (size - 1);
        for (int x = 0; x < size; ++x) {
            double u = static_cast<double>(x) / (size - 1);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = c00[c] * (1 - u) * (1 - v) + c01[c] * u * (1 - v) +
                                  c10[c] * (1 - u) * v + c11[c] * u * v;
        }
    }
    // soft color blobs
    int blobs = (style == 1 ? 3 : 2) + static_cast<int>(rng.uniform_int(2));
    for (int b = 0; b < blobs; ++b) {
        double cy = rng.uniform(0.0, 1.0) * size;
        double cx = rng.uniform(0.0, 1.0) * size;
        double s = rng.uniform(0.15, 0.35) * size;
        double amp[3];
        for (int c = 0; c < 3; ++c) amp[c] = rng.uniform(-0.35, 0.35);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double e = std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2.0 * s * s));
                for (int c = 0; c < 3; ++c) img.at(y, x, c) += amp[c] * e;
            }
    }
    if (style == 0) {
        // one or two soft-edged geometric shapes
        int shapes = 1 + static_cast<int>(rng.uniform_int(2));
        for (int sh = 0; sh < shapes; ++sh) {
            bool disk = rng.uniform() < 0.5;
            double fill[3];
            for (int c = 0; c < 3; ++c) fill[c] = rng.uniform(0.1, 0.9);
            double edge = 1.4;
            if (disk) {
                double cy = rng.uniform(0.2, 0.8) * size;
                double cx = rng.uniform(0.2, 0.8) * size;
                double r = rng.uniform(0.12, 0.28) * size;
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        double d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
                        double a = smoothstep(r + edge, r - edge, d);
                        for (int c = 0; c < 3; ++c)
                            img.at(y, x, c) = img.at(y, x, c) * (1 - a) + fill[c] * a;
                    }
            } else {
                double y0 = rng.uniform(0.1, 0.6) * size;
                double x0 = rng.uniform(0.1, 0.6) * size;
                double hh = rng.uniform(0.15, 0.35) * size;
                double wwr = rng.uniform(0.15, 0.35) * size;
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        double ay = smoothstep(y0 - edge, y0 + edge, y) *
                                    smoothstep(y0 + hh + edge, y0 + hh - edge, y);
                        double ax = smoothstep(x0 - edge, x0 + edge, x) *
                                    smoothstep(x0 + wwr + edge, x0 + wwr - edge, x);
                        double a = ay * ax;
                        for (int c = 0; c < 3; ++c)
                            img.at(y, x, c) = img.at(y, x, c) * (1 - a) + fill[c] * a;
                    }
            }
        }
    }
    add_value_noise(img, rng, style == 1 ? 0.06 : 0.03, 4 + static_cast<int>(rng.uniform_int(4)));
    clamp01(img);
    return img;
}

std::vector<const PairedRecord*> PairedDataset::split_records(const std::string& split) const {
    std::vector<const PairedRecord*> out;
    for (const PairedRecord& r : records)
        if (r.split == split) out.push_back(&r);
    return out;
}

std::vector<const PairedRecord*> PairedDataset::task_records(const std::string& split,
                                                             const std::string& task) const {
    std::vector<const PairedRecord*> out;
    for (const PairedRecord& r : records)
        if (r.split == split && r.task == task) out.push_back(&r);
    return out;
}

namespace {

constexpr uint64_t kEvalIndexOffset = 1ULL << 20;  // disjoint clean sources for eval
const double kNoiseSigmas[3] = {15.0, 25.0, 50.0};

DegradationSpec draw_spec(const std::string& task, int j, Rng& rng, uint64_t record_seed,
                          int image_size) {
    DegradationSpec spec;
    spec.kind = task;
    if (task == "noise") {
        spec.sigma = kNoiseSigmas[j % 3];  // as even a sigma split as possible
    } else if (task == "rain") {
        spec.rain_count = 10 + static_cast<int>(rng.uniform_int(8));
        spec.rain_length = rng.uniform(0.25, 0.45) * image_size;
        spec.rain_angle_deg = rng.uniform(70.0, 110.0);
        spec.rain_intensity = rng.uniform(0.35, 0.7);
    } else if (task == "haze") {
        spec.haze_beta = rng.uniform(0.6, 1.5);
        spec.haze_light = rng.uniform(0.7, 1.0);
        spec.depth_seed = derive_seed(record_seed, 2);
    } else {
        throw DataError("unknown task '" + task + "', expected one of {noise, rain, haze}");
    }
    return spec;
}

PairedRecord make_record(const std::string& task, int j, uint64_t master_seed,
                         uint64_t global_index, int image_size, int corpus_style,
                         const std::string& split) {
    uint64_t record_seed = derive_seed(master_seed, global_index);
    Rng clean_rng(record_seed);
    Rng spec_rng(derive_seed(record_seed, 1));

    PairedRecord rec;
    rec.task = task;
    rec.split = split;
    rec.prompt = task_prompt(task);
    rec.clean = make_clean_image(image_size, clean_rng, corpus_style);
    rec.spec = draw_spec(task, j, spec_rng, record_seed, image_size);
    rec.degraded = apply_degradation(rec.clean, rec.spec, spec_rng);
    return rec;
}

}  // namespace

PairedDataset build_dataset(int n_per_task, const std::vector<std::string>& tasks, uint64_t seed,
                            int image_size, int n_eval_per_task, int corpus_style) {
    if (n_per_task < 1) throw DataError("build_dataset: n_per_task must be >= 1");
    if (tasks.empty()) throw DataError("build_dataset: no tasks");
    PairedDataset ds;
    ds.image_size = image_size;
    ds.seed = seed;
    ds.n_per_task = n_per_task;
    ds.n_eval_per_task = n_eval_per_task;
    ds.corpus_style = corpus_style;
    ds.tasks = tasks;

    uint64_t gi = 0;
    std::vector<PairedRecord> train;
    for (const std::string& task : tasks)
        for (int j = 0; j < n_per_task; ++j)
            train.push_back(make_record(task, j, seed, gi++, image_size, corpus_style, "train"));

    // Fisher-Yates shuffle mixes the degradation types across batches
    Rng shuffle_rng(derive_seed(seed, 0x5u));
    for (size_t i = train.size(); i > 1; --i)
        std::swap(train[i - 1], train[static_cast<size_t>(shuffle_rng.uniform_int(
                                    static_cast<int64_t>(i)))]);

    gi = kEvalIndexOffset;
    std::vector<PairedRecord> eval;
    for (const std::string& task : tasks)
        for (int j = 0; j < n_eval_per_task; ++j)
            eval.push_back(make_record(task, j, seed, gi++, image_size, corpus_style, "eval"));

    ds.records = std::move(train);
    ds.records.insert(ds.records.end(), std::make_move_iterator(eval.begin()),
                      std::make_move_iterator(eval.end()));
    for (size_t i = 0; i < ds.records.size(); ++i) ds.records[i].id = static_cast<int>(i);
    return ds;
}

namespace {

nlohmann::json spec_to_json(const DegradationSpec& s) {
    nlohmann::json j;
    j["kind"] = s.kind;
    if (s.kind == "noise") {
        j["sigma"] = s.sigma;
    } else if (s.kind == "rain") {
        j["count"] = s.rain_count;
        j["length"] = s.rain_length;
        j["angle_deg"] = s.rain_angle_deg;
        j["jitter_deg"] = s.rain_jitter_deg;
        j["intensity"] = s.rain_intensity;
        j["width"] = s.rain_width;
    } else if (s.kind == "haze") {
        j["beta"] = s.haze_beta;
        j["light"] = s.haze_light;
        j["depth_seed"] = s.depth_seed;
    }
    return j;
}

DegradationSpec spec_from_json(const nlohmann::json& j) {
    DegradationSpec s;
    s.kind = j.at("kind").get<std::string>();
    if (s.kind == "noise") {
        s.sigma = j.at("sigma").get<double>();
    } else if (s.kind == "rain") {
        s.rain_count = j.at("count").get<int>();
        s.rain_length = j.at("length").get<double>();
        s.rain_angle_deg = j.at("angle_deg").get<double>();
        s.rain_jitter_deg = j.at("jitter_deg").get<double>();
        s.rain_intensity = j.at("intensity").get<double>();
        s.rain_width = j.at("width").get<double>();
    } else if (s.kind == "haze") {
        s.haze_beta = j.at("beta").get<double>();
        s.haze_light = j.at("light").get<double>();
        s.depth_seed = j.at("depth_seed").get<uint64_t>();
    } else {
        throw DataError("manifest: unknown degradation kind '" + s.kind + "'");
    }
    return s;
}

std::string record_file(int id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d.ppm", id);
    return buf;
}

}  // namespace

void save_dataset(const PairedDataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "clean");
    fs::create_directories(fs::path(dir) / "degraded");
    nlohmann::json m;
    m["version"] = 1;
    m["seed"] = ds.seed;
    m["image_size"] = ds.image_size;
    m["n_per_task"] = ds.n_per_task;
    m["n_eval_per_task"] = ds.n_eval_per_task;
    m["corpus_style"] = ds.corpus_style;
    m["tasks"] = ds.tasks;
    nlohmann::json records = nlohmann::json::array();
    for (const PairedRecord& r : ds.records) {
        std::string file = record_file(r.id);
        write_ppm(r.clean, (fs::path(dir) / "clean" / file).string());
        write_ppm(r.degraded, (fs::path(dir) / "degraded" / file).string());
        nlohmann::json jr;
        jr["id"] = r.id;
        jr["task"] = r.task;
        jr["split"] = r.split;
        jr["prompt"] = r.prompt;
        jr["clean"] = "clean/" + file;
        jr["degraded"] = "degraded/" + file;
        jr["params"] = spec_to_json(r.spec);
        records.push_back(std::move(jr));
    }
    m["records"] = std::move(records);
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw DataError("cannot write manifest in " + dir);
    f << m.dump(2) << '\n';
}

PairedDataset load_dataset(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw DataError("cannot open manifest.json in " + dir);
    nlohmann::json m = nlohmann::json::parse(f, nullptr, false);
    if (m.is_discarded()) throw DataError("corrupt manifest.json in " + dir);
    PairedDataset ds;
    try {
        ds.seed = m.at("seed").get<uint64_t>();
        ds.image_size = m.at("image_size").get<int>();
        ds.n_per_task = m.at("n_per_task").get<int>();
        ds.n_eval_per_task = m.at("n_eval_per_task").get<int>();
        ds.corpus_style = m.at("corpus_style").get<int>();
        ds.tasks = m.at("tasks").get<std::vector<std::string>>();
        for (const auto& jr : m.at("records")) {
            PairedRecord r;
            r.id = jr.at("id").get<int>();
            r.task = jr.at("task").get<std::string>();
            r.split = jr.at("split").get<std::string>();
            r.prompt = jr.at("prompt").get<std::string>();
            r.spec = spec_from_json(jr.at("params"));
            r.clean = read_ppm((fs::path(dir) / jr.at("clean").get<std::string>()).string());
            r.degraded = read_ppm((fs::path(dir) / jr.at("degraded").get<std::string>()).string());
            ds.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest.json in " + dir + " is malformed: " + e.what());
    }
    return ds;
}

}  // namespace e2r
