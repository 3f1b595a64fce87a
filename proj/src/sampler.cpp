#include "e2r/sampler.hpp"

#include <cmath>

#include "e2r/text_embed.hpp"

namespace e2r {

void SampleConfig::validate() const {
    if (steps < 1) throw NumericError("sample: steps must be >= 1");
    if (guidance < 0.0) throw NumericError("sample: guidance must be >= 0");
}

Tensor guided_velocity(const VelocityModel& model, const Tensor& z, const Tensor& context,
                       const std::vector<int>& prompt_ids, double t, double g) {
    if (g < 0.0) throw NumericError("guided_velocity: guidance must be >= 0");
    if (g == 1.0) return model.velocity(z, context, prompt_ids, t);
    Tensor v_uncond = model.velocity(z, context, null_prompt_ids(), t);
    if (g == 0.0) return v_uncond;
    Tensor v_cond = model.velocity(z, context, prompt_ids, t);
    return add(v_uncond, scale(sub(v_cond, v_uncond), g));
}

Tensor euler_integrate(const std::function<Tensor(const Tensor&, double)>& velocity,
                       const Tensor& z_init, int steps) {
    if (steps < 1) throw NumericError("euler_integrate: steps must be >= 1");
    const double dt = 1.0 / steps;
    Tensor z = z_init.clone();
    for (int k = steps; k >= 1; --k) {
        double t = static_cast<double>(k) / steps;
        Tensor v = velocity(z, t);
        if (v.shape() != z.shape())
            throw ShapeError("euler_integrate: velocity shape " + shape_str(v.shape()) +
                             " does not match state " + shape_str(z.shape()));
        double* pz = z.data();
        const double* pv = v.data();
        for (int64_t i = 0; i < z.numel(); ++i) {
            double nv = pv[i];
            if (!std::isfinite(nv))
                throw NumericError("euler_integrate: non-finite velocity at t = " +
                                   std::to_string(t) + ", element " + std::to_string(i));
            pz[i] -= dt * nv;
        }
    }
    return z;
}

Image restore(const VelocityModel& model, const Image& degraded, const SampleConfig& cfg) {
    cfg.validate();
    const int s = model.cfg.image_size;
    std::vector<int> prompt_ids = tokenize(cfg.prompt);

    Image ctx_img = resize_bilinear(degraded, s, s);
    Tensor context = image_to_tensor(ctx_img);

    Rng rng(cfg.seed);
    Tensor z = Tensor::randn({s, s, 3}, rng);
    z = euler_integrate(
        [&](const Tensor& zt, double t) {
            return guided_velocity(model, zt, context, prompt_ids, t, cfg.guidance);
        },
        z, cfg.steps);

    Image out = tensor_to_image(z);
    clamp01(out);
    return resize_bilinear(out, degraded.h, degraded.w);
}

}  // namespace e2r
