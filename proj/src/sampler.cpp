#include "lvd/sampler.hpp"

#include <cmath>

namespace lvd {

Tensor guided_epsilon(const Tensor& z_t, int t, double fps, const ConditioningBundle& cond,
                      const ConditioningBundle& null_cond, double guidance_scale,
                      const GenerativeModel& model) {
    if (guidance_scale < 0.0)
        throw std::invalid_argument("guided_epsilon: guidance scale must be >= 0");
    if (guidance_scale == 1.0) return denoiser_forward(z_t, t, fps, cond, model);
    Tensor eps_null = denoiser_forward(z_t, t, fps, null_cond, model);
    if (guidance_scale == 0.0) return eps_null;
    Tensor eps_cond = denoiser_forward(z_t, t, fps, cond, model);
    // eps_null + s (eps_cond - eps_null)
    return add(eps_null, scale(sub(eps_cond, eps_null), guidance_scale));
}

namespace {

ConditioningBundle make_null_for(const GenerativeModel& model,
                                 const ConditioningBundle& cond) {
    return null_bundle(model.conditioning(), cond.fps, cond.f_img.has_value());
}

void check_latent_shape(const Shape& s, const GenerativeModel& model) {
    if (s.size() != 5)
        throw std::invalid_argument("sample: latent shape must be rank-5");
    if (s[1] != model.cfg.denoiser.in_channels)
        throw std::invalid_argument("sample: latent channel mismatch");
}

}  // namespace

Tensor ddpm_sample(const GenerativeModel& model, const ConditioningBundle& cond,
                   const Shape& latent_shape, const NoiseSchedule& schedule,
                   double guidance_scale, uint64_t seed) {
    check_latent_shape(latent_shape, model);
    NoGradGuard guard;
    RngStream rng(derive_seed(seed, "ddpm_sample"));
    ConditioningBundle null_cond = make_null_for(model, cond);

    Tensor z = Tensor::randn(latent_shape, rng);
    for (int t = schedule.num_steps; t >= 1; --t) {
        Tensor eps = guided_epsilon(z, t, cond.fps, cond, null_cond, guidance_scale, model);
        Tensor fresh =
            t > 1 ? Tensor::randn(latent_shape, rng) : Tensor::zeros(latent_shape);
        z = p_sample_step(z, eps, t, fresh, schedule);
        if (!all_finite(z))
            throw SamplingFailure("ddpm_sample: non-finite latent at t=" + std::to_string(t));
    }
    return z;
}

std::vector<int> ddim_timesteps(int num_steps, int num_inference_steps) {
    if (num_inference_steps < 1 || num_inference_steps > num_steps)
        throw std::invalid_argument("ddim: need 1 <= num_inference_steps <= T");
    std::vector<int> ts;
    double stride = static_cast<double>(num_steps) / num_inference_steps;
    for (int i = 0; i < num_inference_steps; ++i) {
        int t = num_steps - static_cast<int>(std::llround(i * stride));
        t = std::max(1, std::min(num_steps, t));
        if (ts.empty() || t < ts.back()) ts.push_back(t);
    }
    return ts;  // starts at T, strictly decreasing
}

Tensor ddim_sample(const GenerativeModel& model, const ConditioningBundle& cond,
                   const Shape& latent_shape, const NoiseSchedule& schedule,
                   int num_inference_steps, double guidance_scale, uint64_t seed) {
    check_latent_shape(latent_shape, model);
    NoGradGuard guard;
    RngStream rng(derive_seed(seed, "ddim_sample"));
    ConditioningBundle null_cond = make_null_for(model, cond);
    std::vector<int> ts = ddim_timesteps(schedule.num_steps, num_inference_steps);

    Tensor z = Tensor::randn(latent_shape, rng);
    for (size_t i = 0; i < ts.size(); ++i) {
        int t = ts[i];
        double abar = schedule.alpha_bar(t);
        double abar_prev = i + 1 < ts.size() ? schedule.alpha_bar(ts[i + 1]) : 1.0;
        Tensor eps = guided_epsilon(z, t, cond.fps, cond, null_cond, guidance_scale, model);

        double inv_sqrt_abar = 1.0 / std::sqrt(abar);
        double noise_coef = std::sqrt(1.0 - abar);
        double a_prev_sqrt = std::sqrt(abar_prev);
        double sigma_prev = std::sqrt(1.0 - abar_prev);
        Tensor next = Tensor::zeros(latent_shape);
        const double* pz = z.data();
        const double* pe = eps.data();
        double* pn = next.data();
        for (int64_t j = 0; j < z.numel(); ++j) {
            double z0_hat = (pz[j] - noise_coef * pe[j]) * inv_sqrt_abar;
            pn[j] = a_prev_sqrt * z0_hat + sigma_prev * pe[j];
        }
        z = next;
        if (!all_finite(z))
            throw SamplingFailure("ddim_sample: non-finite latent at t=" + std::to_string(t));
    }
    return z;
}

}  // namespace lvd
