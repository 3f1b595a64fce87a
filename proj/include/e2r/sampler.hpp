#pragma once

#include <functional>
#include <string>

#include "e2r/flow_transformer.hpp"
#include "e2r/image.hpp"

namespace e2r {

struct SampleConfig {
    int steps = 28;
    double guidance = 2.5;
    uint64_t seed = 0;
    std::string prompt;  // "" = unconditional

    void validate() const;
};

// v_hat = v_uncond + g (v_cond - v_uncond); the unconditional pass uses the
// all-null prompt with the same context image. g = 0 and g = 1 short-circuit
// to a single pass so those identities hold exactly.
Tensor guided_velocity(const VelocityModel& model, const Tensor& z, const Tensor& context,
                       const std::vector<int>& prompt_ids, double t, double g);

// Euler integration over the uniform grid t_k = k/N from k = N down to 1:
//   z <- z - (1/N) v(z, t_k)
// The velocity callback gets (z, t).
Tensor euler_integrate(const std::function<Tensor(const Tensor&, double)>& velocity,
                       const Tensor& z_init, int steps);

// full restoration: resize degraded to the model grid, integrate from seeded
// noise with the degraded image as context, clamp, resize back
Image restore(const VelocityModel& model, const Image& degraded, const SampleConfig& cfg);

}  // namespace e2r
