#pragma once

#include <vector>

#include "e2r/rng.hpp"
#include "e2r/tensor.hpp"

namespace e2r {

// t = sigmoid(n), n ~ N(mu, sigma^2); all draws strictly inside (0, 1)
struct TimestepSampler {
    double mu = 0.0;
    double sigma = 1.0;
    uint64_t seed = 0;

    double draw(Rng& rng) const;
};

// draws from the sampler's own seed; deterministic
std::vector<double> sample_timesteps(int n, const TimestepSampler& sampler);

// one record of a training batch along the linear path
//   z_t = (1 - t) z_clean + t eps,   v_target = eps - z_clean
struct FlowSample {
    Tensor z_clean;
    Tensor eps;
    Tensor z_t;
    Tensor v_target;
    double t = 0.0;
};

// z_t = (1 - t) z_clean + t eps, exact in double precision
Tensor flow_interpolant(const Tensor& z_clean, const Tensor& eps, double t);
// v = eps - z_clean
Tensor flow_velocity_target(const Tensor& z_clean, const Tensor& eps);

FlowSample make_flow_sample(const Tensor& z_clean, const TimestepSampler& sampler, Rng& rng);
// per-sample independent t and eps
std::vector<FlowSample> make_batch(const std::vector<Tensor>& z_clean,
                                   const TimestepSampler& sampler, Rng& rng);

// mean squared error over all elements (autodiff)
Tensor flow_loss(const Tensor& v_pred, const Tensor& v_target);

}  // namespace e2r
