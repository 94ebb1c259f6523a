#pragma once

#include <stdexcept>

#include "lvd/model.hpp"

namespace lvd {

struct SamplingFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// classifier-free guidance: eps_null + s * (eps_cond - eps_null).
// s == 1 runs the conditional pass only; s == 0 the null pass only.
Tensor guided_epsilon(const Tensor& z_t, int t, double fps, const ConditioningBundle& cond,
                      const ConditioningBundle& null_cond, double guidance_scale,
                      const GenerativeModel& model);

// ancestral chain from unit-Gaussian z_T down to z_0; deterministic per seed
Tensor ddpm_sample(const GenerativeModel& model, const ConditioningBundle& cond,
                   const Shape& latent_shape, const NoiseSchedule& schedule,
                   double guidance_scale, uint64_t seed);

// deterministic DDIM over a strided, strictly decreasing timestep subset
Tensor ddim_sample(const GenerativeModel& model, const ConditioningBundle& cond,
                   const Shape& latent_shape, const NoiseSchedule& schedule,
                   int num_inference_steps, double guidance_scale, uint64_t seed);

// strictly decreasing subset starting at T; exposed for tests
std::vector<int> ddim_timesteps(int num_steps, int num_inference_steps);

}  // namespace lvd
