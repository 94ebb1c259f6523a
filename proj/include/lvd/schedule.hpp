#pragma once

#include <vector>

#include "lvd/tensor.hpp"

namespace lvd {

enum class BetaKind { linear, scaled_linear };

// Precomputed diffusion coefficients. Immutable after construction; timesteps
// are 1-indexed (t in [1, T]) to match the product form of the marginal.
struct NoiseSchedule {
    int num_steps = 0;
    std::vector<double> betas;                 // beta_t, index t-1
    std::vector<double> alphas;                // 1 - beta_t
    std::vector<double> alpha_bars;            // prod_{s<=t} alpha_s
    std::vector<double> posterior_variances;   // beta_t (1-abar_{t-1})/(1-abar_t), 0 at t=1

    double beta(int t) const { return betas[static_cast<size_t>(t - 1)]; }
    double alpha(int t) const { return alphas[static_cast<size_t>(t - 1)]; }
    double alpha_bar(int t) const { return alpha_bars[static_cast<size_t>(t - 1)]; }
    double posterior_variance(int t) const {
        return posterior_variances[static_cast<size_t>(t - 1)];
    }
};

NoiseSchedule make_beta_schedule(BetaKind kind, int num_steps, double beta_start,
                                 double beta_end);

BetaKind beta_kind_from_string(const std::string& s);
std::string to_string(BetaKind k);

// one forward transition: sqrt(1-beta_t) z_{t-1} + sqrt(beta_t) noise
Tensor q_step(const Tensor& z_prev, int t, const Tensor& noise, const NoiseSchedule& s);

// closed-form marginal: sqrt(abar_t) z0 + sqrt(1-abar_t) noise
Tensor q_sample(const Tensor& z0, int t, const Tensor& noise, const NoiseSchedule& s);

// ancestral reverse step; the fresh-noise term is dropped at t=1
Tensor p_sample_step(const Tensor& z_t, const Tensor& predicted_noise, int t,
                     const Tensor& fresh_noise, const NoiseSchedule& s);

}  // namespace lvd
