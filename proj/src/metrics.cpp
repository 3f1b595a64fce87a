#include "e2r/metrics.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "e2r/kernels.hpp"
#include "e2r/linalg.hpp"

namespace e2r {

double psnr(const Image& a, const Image& b) {
    double m = image_mse(a, b);
    if (m <= 0.0) return kPsnrCap;
    double v = 10.0 * std::log10(1.0 / m);
    return std::min(v, kPsnrCap);
}

namespace {

std::vector<double> to_gray(const Image& img) {
    std::vector<double> g(static_cast<size_t>(img.h) * img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            g[static_cast<size_t>(y) * img.w + x] =
                (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
    return g;
}

}  // namespace

double ssim(const Image& a, const Image& b, int window, double c1, double c2) {
    if (a.h != b.h || a.w != b.w) throw ShapeError("ssim: image sizes differ");
    std::vector<double> ga = to_gray(a), gb = to_gray(b);
    int win = std::min({window, a.h, a.w});
    double total = 0.0;
    int count = 0;
    for (int y = 0; y + win <= a.h; ++y) {
        for (int x = 0; x + win <= a.w; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    double va = ga[static_cast<size_t>(y + dy) * a.w + (x + dx)];
                    double vb = gb[static_cast<size_t>(y + dy) * a.w + (x + dx)];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            double n = static_cast<double>(win) * win;
            double mua = sa / n, mub = sb / n;
            double vara = saa / n - mua * mua;
            double varb = sbb / n - mub * mub;
            double cov = sab / n - mua * mub;
            double s = ((2 * mua * mub + c1) * (2 * cov + c2)) /
                       ((mua * mua + mub * mub + c1) * (vara + varb + c2));
            total += s;
            ++count;
        }
    }
    return count > 0 ? total / count : 1.0;
}

FeatureExtractor::FeatureExtractor(uint64_t seed) : seed_(seed) {
    Rng rng(seed);
    auto init = [&](std::vector<double>& w, std::vector<double>& b, int oc, int ic) {
        w.resize(static_cast<size_t>(oc) * ic * 9);
        double stddev = 1.0 / std::sqrt(static_cast<double>(ic) * 9);
        for (double& v : w) v = rng.normal() * stddev;
        b.assign(static_cast<size_t>(oc), 0.0);
    };
    init(w1_, b1_, 8, 3);
    init(w2_, b2_, 16, 8);
    init(w3_, b3_, kFeatureDim, 16);
}

std::vector<double> FeatureExtractor::features(const Image& img) const {
    int h = img.h, w = img.w;
    std::vector<double> x(img.px.size());
    for (size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * (img.px[i] - 0.5);

    auto layer = [&](const std::vector<double>& in, int ih, int iw, int ic,
                     const std::vector<double>& wt, const std::vector<double>& bs, int oc) {
        int oh = (ih + 1) / 2, ow = (iw + 1) / 2;
        std::vector<double> out(static_cast<size_t>(oh) * ow * oc);
        kern::conv3x3_s2_tanh(in.data(), wt.data(), bs.data(), out.data(), ih, iw, ic, oc);
        return out;
    };
    std::vector<double> h1 = layer(x, h, w, 3, w1_, b1_, 8);
    int h2s = (h + 1) / 2, w2s = (w + 1) / 2;
    std::vector<double> h2 = layer(h1, h2s, w2s, 8, w2_, b2_, 16);
    int h3s = (h2s + 1) / 2, w3s = (w2s + 1) / 2;
    std::vector<double> h3 = layer(h2, h3s, w3s, 16, w3_, b3_, kFeatureDim);
    int h4s = (h3s + 1) / 2, w4s = (w3s + 1) / 2;

    std::vector<double> f(kFeatureDim, 0.0);
    int spatial = h4s * w4s;
    for (int i = 0; i < spatial; ++i)
        for (int c = 0; c < kFeatureDim; ++c)
            f[static_cast<size_t>(c)] += h3[static_cast<size_t>(i) * kFeatureDim + c];
    for (double& v : f) v /= spatial;
    return f;
}

double frechet_from_moments(const std::vector<double>& mu_a, const std::vector<double>& cov_a,
                            const std::vector<double>& mu_b, const std::vector<double>& cov_b,
                            int dim) {
    double mu2 = 0.0;
    for (int i = 0; i < dim; ++i) {
        double d = mu_a[static_cast<size_t>(i)] - mu_b[static_cast<size_t>(i)];
        mu2 += d * d;
    }
    std::vector<double> sqrt_a = linalg::sym_sqrt_psd(cov_a, dim);
    std::vector<double> tmp(static_cast<size_t>(dim) * dim);
    std::vector<double> inner(static_cast<size_t>(dim) * dim);
    kern::matmul_nn(sqrt_a.data(), cov_b.data(), tmp.data(), dim, dim, dim);
    kern::matmul_nn(tmp.data(), sqrt_a.data(), inner.data(), dim, dim, dim);
    std::vector<double> root = linalg::sym_sqrt_psd(inner, dim);
    return mu2 + linalg::trace(cov_a, dim) + linalg::trace(cov_b, dim) -
           2.0 * linalg::trace(root, dim);
}

namespace {

void fit_moments(const std::vector<std::vector<double>>& feats, int dim, std::vector<double>& mu,
                 std::vector<double>& cov) {
    int n = static_cast<int>(feats.size());
    mu.assign(static_cast<size_t>(dim), 0.0);
    for (const auto& f : feats)
        for (int i = 0; i < dim; ++i) mu[static_cast<size_t>(i)] += f[static_cast<size_t>(i)];
    for (double& v : mu) v /= n;
    cov.assign(static_cast<size_t>(dim) * dim, 0.0);
    if (n < 2) return;
    for (const auto& f : feats)
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j)
                cov[static_cast<size_t>(i) * dim + j] += (f[static_cast<size_t>(i)] - mu[static_cast<size_t>(i)]) *
                                                         (f[static_cast<size_t>(j)] - mu[static_cast<size_t>(j)]);
    for (double& v : cov) v /= (n - 1);
}

}  // namespace

double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b) {
    if (feats_a.empty() || feats_b.empty())
        throw DataError("frechet_distance: empty feature set");
    int dim = static_cast<int>(feats_a[0].size());
    if (static_cast<int>(feats_a.size()) <= dim || static_cast<int>(feats_b.size()) <= dim)
        std::fprintf(stderr,
                     "warning: frechet_distance with %zu/%zu samples in %d dims; "
                     "covariances are rank-deficient\n",
                     feats_a.size(), feats_b.size(), dim);
    std::vector<double> mu_a, cov_a, mu_b, cov_b;
    fit_moments(feats_a, dim, mu_a, cov_a);
    fit_moments(feats_b, dim, mu_b, cov_b);
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b, dim);
}

namespace {

std::vector<double> flatten(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    std::vector<double> out;
    out.reserve(rows.size() * rows[0].size());
    for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
    return out;
}

}  // namespace

double median_pairwise_distance(const std::vector<std::vector<double>>& feats_a,
                                const std::vector<std::vector<double>>& feats_b) {
    std::vector<std::vector<double>> pool = feats_a;
    pool.insert(pool.end(), feats_b.begin(), feats_b.end());
    int n = static_cast<int>(pool.size());
    if (n < 2) return 1.0;
    int dim = static_cast<int>(pool[0].size());
    std::vector<double> flat = flatten(pool);
    std::vector<double> d2(static_cast<size_t>(n) * n);
    kern::pairwise_sqdist(flat.data(), n, flat.data(), n, dim, d2.data());
    std::vector<double> upper;
    upper.reserve(static_cast<size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) upper.push_back(d2[static_cast<size_t>(i) * n + j]);
    size_t mid = (upper.size() - 1) / 2;
    std::nth_element(upper.begin(), upper.begin() + static_cast<int64_t>(mid), upper.end());
    double med = std::sqrt(upper[mid]);
    return med > 0 ? med : 1.0;
}

double mmd_rbf(const std::vector<std::vector<double>>& feats_a,
               const std::vector<std::vector<double>>& feats_b, double bandwidth) {
    if (feats_a.empty() || feats_b.empty()) throw DataError("mmd_rbf: empty feature set");
    double bw = bandwidth > 0 ? bandwidth : median_pairwise_distance(feats_a, feats_b);
    int n = static_cast<int>(feats_a.size());
    int m = static_cast<int>(feats_b.size());
    int dim = static_cast<int>(feats_a[0].size());
    std::vector<double> fa = flatten(feats_a), fb = flatten(feats_b);
    const double inv = 1.0 / (2.0 * bw * bw);

    auto mean_kernel = [&](const std::vector<double>& xs, int nx, const std::vector<double>& ys,
                           int ny) {
        std::vector<double> d2(static_cast<size_t>(nx) * ny);
        kern::pairwise_sqdist(xs.data(), nx, ys.data(), ny, dim, d2.data());
        // fixed summation order: serial over the full matrix
        double s = 0.0;
        for (double v : d2) s += std::exp(-v * inv);
        return s / (static_cast<double>(nx) * ny);
    };
    double kaa = mean_kernel(fa, n, fa, n);
    double kbb = mean_kernel(fb, m, fb, m);
    double kab = mean_kernel(fa, n, fb, m);
    return kaa + kbb - 2.0 * kab;
}

namespace {

struct EvalGroup {
    std::string task;
    double sigma = 0.0;  // 0 = whole task
    std::vector<const PairedRecord*> records;
};

std::vector<EvalGroup> make_groups(const PairedDataset& ds) {
    std::vector<EvalGroup> groups;
    for (const std::string& task : ds.tasks) {
        auto recs = ds.task_records("eval", task);
        if (recs.empty()) continue;
        if (task == "noise") {
            std::map<double, EvalGroup> by_sigma;
            for (const PairedRecord* r : recs) {
                EvalGroup& g = by_sigma[r->spec.sigma];
                g.task = task;
                g.sigma = r->spec.sigma;
                g.records.push_back(r);
            }
            for (auto& [sig, g] : by_sigma) groups.push_back(std::move(g));
        } else {
            groups.push_back({task, 0.0, recs});
        }
    }
    return groups;
}

MetricRow score_group(const EvalGroup& g, const std::vector<const Image*>& outputs,
                      const FeatureExtractor& fx, double bandwidth,
                      const std::string& config_label) {
    MetricRow row;
    row.config = config_label;
    row.task = g.task;
    row.sigma = g.sigma;
    row.n = static_cast<int>(g.records.size());
    std::vector<std::vector<double>> f_out, f_clean;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (size_t i = 0; i < g.records.size(); ++i) {
        const Image& out = *outputs[i];
        const Image& clean = g.records[i]->clean;
        psnr_sum += psnr(out, clean);
        ssim_sum += ssim(out, clean);
        f_out.push_back(fx.features(out));
        f_clean.push_back(fx.features(clean));
    }
    row.psnr_mean = psnr_sum / row.n;
    row.ssim_mean = ssim_sum / row.n;
    row.fid = frechet_distance(f_out, f_clean);
    row.mmd = mmd_rbf(f_out, f_clean, bandwidth);
    return row;
}

}  // namespace

std::vector<MetricRow> evaluate_model(const VelocityModel& model, const PairedDataset& ds,
                                      const FeatureExtractor& fx, const EvalOptions& opts,
                                      const std::string& config_label) {
    auto eval_recs = ds.split_records("eval");
    if (eval_recs.empty()) throw DataError("evaluate: eval split is empty");

    // restorations are independent given per-record derived seeds
    std::vector<Image> restored(eval_recs.size());
    std::string error;
    int cap = kern::max_threads();
    int nthreads = opts.parallel ? (cap > 0 ? cap : omp_get_max_threads()) : 1;
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
    for (int64_t i = 0; i < static_cast<int64_t>(eval_recs.size()); ++i) {
        try {
            SampleConfig sc = opts.sample;
            sc.prompt = eval_recs[static_cast<size_t>(i)]->prompt;
            sc.seed = derive_seed(opts.seed, static_cast<uint64_t>(eval_recs[static_cast<size_t>(i)]->id));
            restored[static_cast<size_t>(i)] = restore(model, eval_recs[static_cast<size_t>(i)]->degraded, sc);
        } catch (const std::exception& e) {
#pragma omp critical
            if (error.empty()) error = e.what();
        }
    }
    if (!error.empty()) throw NumericError("evaluate: restore failed: " + error);

    std::vector<MetricRow> rows;
    for (const EvalGroup& g : make_groups(ds)) {
        std::vector<const Image*> outputs;
        for (const PairedRecord* r : g.records) {
            auto it = std::find(eval_recs.begin(), eval_recs.end(), r);
            outputs.push_back(&restored[static_cast<size_t>(it - eval_recs.begin())]);
        }
        rows.push_back(score_group(g, outputs, fx, opts.bandwidth, config_label));
    }
    return rows;
}

std::vector<MetricRow> evaluate_floor(const PairedDataset& ds, const FeatureExtractor& fx,
                                      double bandwidth) {
    std::vector<MetricRow> rows;
    for (const EvalGroup& g : make_groups(ds)) {
        std::vector<const Image*> outputs;
        for (const PairedRecord* r : g.records) outputs.push_back(&r->degraded);
        rows.push_back(score_group(g, outputs, fx, bandwidth, "floor"));
    }
    if (rows.empty()) throw DataError("evaluate: eval split is empty");
    return rows;
}

void write_report_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write report " + path);
    f << "config,task,sigma,n,fid,mmd,psnr,ssim\n";
    char buf[256];
    for (const MetricRow& r : rows) {
        std::string sigma = r.sigma > 0 ? std::to_string(static_cast<int>(r.sigma)) : "";
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%.9g,%.9g,%.9g,%.9g\n", r.config.c_str(),
                      r.task.c_str(), sigma.c_str(), r.n, r.fid, r.mmd, r.psnr_mean, r.ssim_mean);
        f << buf;
    }
}

std::vector<MetricRow> read_report_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open report " + path);
    std::string line;
    if (!std::getline(f, line) || line != "config,task,sigma,n,fid,mmd,psnr,ssim")
        throw DataError("report " + path + " has an unexpected header");
    std::vector<MetricRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string field;
        MetricRow r;
        std::getline(is, r.config, ',');
        std::getline(is, r.task, ',');
        std::getline(is, field, ',');
        r.sigma = field.empty() ? 0.0 : std::stod(field);
        std::getline(is, field, ',');
        r.n = std::stoi(field);
        std::getline(is, field, ',');
        r.fid = std::stod(field);
        std::getline(is, field, ',');
        r.mmd = std::stod(field);
        std::getline(is, field, ',');
        r.psnr_mean = std::stod(field);
        std::getline(is, field, ',');
        r.ssim_mean = std::stod(field);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_report_sidecar(const std::string& csv_path, const FeatureExtractor& fx,
                          const EvalOptions& opts) {
    nlohmann::json j;
    j["extractor_seed"] = fx.seed();
    j["feature_dim"] = fx.dim();
    j["bandwidth"] = opts.bandwidth > 0 ? nlohmann::json(opts.bandwidth)
                                        : nlohmann::json("median-heuristic");
    j["mmd_estimator"] = "biased-v-statistic";
    j["covariance"] = "sample (ddof=1)";
    j["matrix_sqrt"] = "symmetric eigendecomposition, negative eigenvalues clipped";
    j["sample_steps"] = opts.sample.steps;
    j["guidance"] = opts.sample.guidance;
    j["eval_seed"] = opts.seed;
    j["ssim_window"] = 8;
    std::ofstream f(csv_path + ".json");
    if (!f) throw DataError("cannot write sidecar for " + csv_path);
    f << j.dump(2) << '\n';
}

double task_mean_psnr(const std::vector<MetricRow>& rows, const std::string& config,
                      const std::string& task) {
    double s = 0.0;
    int n = 0;
    for (const MetricRow& r : rows)
        if (r.config == config && r.task == task) {
            s += r.psnr_mean * r.n;
            n += r.n;
        }
    if (n == 0) throw DataError("no rows for config '" + config + "', task '" + task + "'");
    return s / n;
}

double task_mean_metric(const std::vector<MetricRow>& rows, const std::string& config,
                        const std::string& task, bool want_fid) {
    double s = 0.0;
    int n = 0;
    for (const MetricRow& r : rows)
        if (r.config == config && r.task == task) {
            s += (want_fid ? r.fid : r.mmd) * r.n;
            n += r.n;
        }
    if (n == 0) throw DataError("no rows for config '" + config + "', task '" + task + "'");
    return s / n;
}

}  // namespace e2r
