#pragma once

#include <string>
#include <vector>

#include "e2r/degradations.hpp"
#include "e2r/image.hpp"
#include "e2r/sampler.hpp"

namespace e2r {

// 10 log10(1 / MSE) for [0,1] images; identical images cap at 99 dB
double psnr(const Image& a, const Image& b);
constexpr double kPsnrCap = 99.0;

// grayscale (channel mean), uniform 8x8 windows, stride 1, standard
// constants C1 = 0.01^2, C2 = 0.03^2
double ssim(const Image& a, const Image& b, int window = 8, double c1 = 1e-4, double c2 = 9e-4);

constexpr uint64_t kDefaultFeatureSeed = 0xE2F7;

// Fixed-seed random conv stack (3 layers, stride 2, tanh) with global average
// pooling; frozen forever, the declared stand-in for a pretrained backbone.
class FeatureExtractor {
public:
    explicit FeatureExtractor(uint64_t seed = kDefaultFeatureSeed);
    std::vector<double> features(const Image& img) const;
    int dim() const { return kFeatureDim; }
    uint64_t seed() const { return seed_; }

    static constexpr int kFeatureDim = 64;

private:
    uint64_t seed_;
    std::vector<double> w1_, b1_, w2_, b2_, w3_, b3_;
};

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), matrix square root by
// symmetric eigendecomposition with negative eigenvalues clipped at 0
double frechet_from_moments(const std::vector<double>& mu_a, const std::vector<double>& cov_a,
                            const std::vector<double>& mu_b, const std::vector<double>& cov_b,
                            int dim);
// fits gaussian moments (sample covariance) to feature rows; warns to stderr
// when a sample count does not exceed the feature dimension
double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b);

double median_pairwise_distance(const std::vector<std::vector<double>>& feats_a,
                                const std::vector<std::vector<double>>& feats_b);
// biased V-statistic MMD with gaussian kernel exp(-d^2 / (2 bw^2));
// bandwidth <= 0 selects the median pairwise distance heuristic
double mmd_rbf(const std::vector<std::vector<double>>& feats_a,
               const std::vector<std::vector<double>>& feats_b, double bandwidth = 0.0);

struct MetricRow {
    std::string config;  // adapted | baseline | floor
    std::string task;
    double sigma = 0.0;  // 0 = not a per-sigma row
    int n = 0;
    double fid = 0.0;
    double mmd = 0.0;
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
};

struct EvalOptions {
    SampleConfig sample;     // steps/guidance; per-record seeds derived from seed
    uint64_t seed = 0;
    double bandwidth = 0.0;  // 0 = median heuristic
    bool parallel = true;
};

// Runs restore() on every eval record, groups per task (and per sigma for
// noise), and computes fid/mmd/psnr/ssim of restored vs ground truth.
std::vector<MetricRow> evaluate_model(const VelocityModel& model, const PairedDataset& ds,
                                      const FeatureExtractor& fx, const EvalOptions& opts,
                                      const std::string& config_label);
// the no-restoration floor: degraded inputs scored directly against clean
std::vector<MetricRow> evaluate_floor(const PairedDataset& ds, const FeatureExtractor& fx,
                                      double bandwidth = 0.0);

void write_report_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_report_csv(const std::string& path);
// sidecar records extractor seed, bandwidth choice, and estimator conventions
void write_report_sidecar(const std::string& csv_path, const FeatureExtractor& fx,
                          const EvalOptions& opts);

// aggregate helper: mean psnr over every record of one task (all sigmas)
double task_mean_psnr(const std::vector<MetricRow>& rows, const std::string& config,
                      const std::string& task);
// n-weighted mean fid / mmd over the task's rows
double task_mean_metric(const std::vector<MetricRow>& rows, const std::string& config,
                        const std::string& task, bool want_fid);

}  // namespace e2r
