#include "e2r/rectified_flow.hpp"

#include <cmath>

namespace e2r {

double TimestepSampler::draw(Rng& rng) const {
    double n = mu + sigma * rng.normal();
    return 1.0 / (1.0 + std::exp(-n));
}

std::vector<double> sample_timesteps(int n, const TimestepSampler& sampler) {
    if (n < 1) throw NumericError("sample_timesteps: n must be >= 1");
    Rng rng(sampler.seed);
    std::vector<double> out(static_cast<size_t>(n));
    for (double& t : out) t = sampler.draw(rng);
    return out;
}

Tensor flow_interpolant(const Tensor& z_clean, const Tensor& eps, double t) {
    if (z_clean.shape() != eps.shape())
        throw ShapeError("flow_interpolant: shapes differ, " + shape_str(z_clean.shape()) +
                         " vs " + shape_str(eps.shape()));
    std::vector<double> zt(z_clean.vec().size());
    const double* pc = z_clean.data();
    const double* pe = eps.data();
    for (size_t i = 0; i < zt.size(); ++i) zt[i] = (1.0 - t) * pc[i] + t * pe[i];
    return Tensor::from(z_clean.shape(), std::move(zt));
}

Tensor flow_velocity_target(const Tensor& z_clean, const Tensor& eps) {
    if (z_clean.shape() != eps.shape())
        throw ShapeError("flow_velocity_target: shapes differ");
    std::vector<double> vt(z_clean.vec().size());
    const double* pc = z_clean.data();
    const double* pe = eps.data();
    for (size_t i = 0; i < vt.size(); ++i) vt[i] = pe[i] - pc[i];
    return Tensor::from(z_clean.shape(), std::move(vt));
}

FlowSample make_flow_sample(const Tensor& z_clean, const TimestepSampler& sampler, Rng& rng) {
    for (double v : z_clean.vec())
        if (!std::isfinite(v)) throw NumericError("make_flow_sample: non-finite clean input");
    FlowSample s;
    s.z_clean = z_clean;
    s.t = sampler.draw(rng);
    s.eps = Tensor::randn(z_clean.shape(), rng);
    s.z_t = flow_interpolant(z_clean, s.eps, s.t);
    s.v_target = flow_velocity_target(z_clean, s.eps);
    return s;
}

std::vector<FlowSample> make_batch(const std::vector<Tensor>& z_clean,
                                   const TimestepSampler& sampler, Rng& rng) {
    std::vector<FlowSample> out;
    out.reserve(z_clean.size());
    for (const Tensor& z : z_clean) out.push_back(make_flow_sample(z, sampler, rng));
    return out;
}

Tensor flow_loss(const Tensor& v_pred, const Tensor& v_target) { return mse(v_pred, v_target); }

}  // namespace e2r
