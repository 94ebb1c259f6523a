#include "lvd/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lvd {

NoiseSchedule make_beta_schedule(BetaKind kind, int num_steps, double beta_start,
                                 double beta_end) {
    if (num_steps < 1)
        throw std::invalid_argument("make_beta_schedule: num_steps must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw std::invalid_argument(
            "make_beta_schedule: need 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.num_steps = num_steps;
    s.betas.resize(static_cast<size_t>(num_steps));
    for (int i = 0; i < num_steps; ++i) {
        double u = num_steps == 1 ? 0.0
                                  : static_cast<double>(i) / static_cast<double>(num_steps - 1);
        switch (kind) {
            case BetaKind::linear:
                s.betas[i] = beta_start + (beta_end - beta_start) * u;
                break;
            case BetaKind::scaled_linear: {
                double r = std::sqrt(beta_start) + (std::sqrt(beta_end) - std::sqrt(beta_start)) * u;
                s.betas[i] = r * r;
                break;
            }
        }
    }

    s.alphas.resize(s.betas.size());
    s.alpha_bars.resize(s.betas.size());
    s.posterior_variances.resize(s.betas.size());
    double prod = 1.0;
    for (size_t i = 0; i < s.betas.size(); ++i) {
        s.alphas[i] = 1.0 - s.betas[i];
        double abar_prev = prod;
        prod *= s.alphas[i];
        s.alpha_bars[i] = prod;
        s.posterior_variances[i] =
            i == 0 ? 0.0 : s.betas[i] * (1.0 - abar_prev) / (1.0 - prod);
    }
    return s;
}

BetaKind beta_kind_from_string(const std::string& str) {
    if (str == "linear") return BetaKind::linear;
    if (str == "scaled_linear") return BetaKind::scaled_linear;
    throw std::invalid_argument("unknown beta schedule kind: " + str);
}

std::string to_string(BetaKind k) {
    return k == BetaKind::linear ? "linear" : "scaled_linear";
}

static void check_step(int t, const NoiseSchedule& s) {
    if (t < 1 || t > s.num_steps)
        throw std::invalid_argument("timestep " + std::to_string(t) + " out of [1, " +
                                    std::to_string(s.num_steps) + "]");
}

static void check_shapes(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor q_step(const Tensor& z_prev, int t, const Tensor& noise, const NoiseSchedule& s) {
    check_step(t, s);
    check_shapes(z_prev, noise, "q_step");
    double a = std::sqrt(1.0 - s.beta(t));
    double b = std::sqrt(s.beta(t));
    Tensor out = z_prev.detach();
    const double* pn = noise.data();
    double* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = a * po[i] + b * pn[i];
    return out;
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& noise, const NoiseSchedule& s) {
    check_step(t, s);
    check_shapes(z0, noise, "q_sample");
    double a = std::sqrt(s.alpha_bar(t));
    double b = std::sqrt(1.0 - s.alpha_bar(t));
    Tensor out = z0.detach();
    const double* pn = noise.data();
    double* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = a * po[i] + b * pn[i];
    return out;
}

Tensor p_sample_step(const Tensor& z_t, const Tensor& predicted_noise, int t,
                     const Tensor& fresh_noise, const NoiseSchedule& s) {
    check_step(t, s);
    check_shapes(z_t, predicted_noise, "p_sample_step");
    check_shapes(z_t, fresh_noise, "p_sample_step");
    double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    double eps_coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    double sigma = t == 1 ? 0.0 : std::sqrt(s.posterior_variance(t));
    Tensor out = z_t.detach();
    const double* pe = predicted_noise.data();
    const double* pf = fresh_noise.data();
    double* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i)
        po[i] = inv_sqrt_alpha * (po[i] - eps_coef * pe[i]) + sigma * pf[i];
    return out;
}

}  // namespace lvd
