// Exact Gaussian algebra of the variance-preserving diffusion process:
// marginals, transitions, the top-down posterior, the reverse-model
// conditional and the ancestral sampling step. All functions are pure.
#pragma once

#include <vector>

#include "vdm/schedule.hpp"

namespace vdm {

struct DiffusionCoeffs {
    double gamma;
    double alpha_sq;
    double sigma_sq;
    double t;
};

struct TransitionParams {
    double alpha_ts;     // alpha_t / alpha_s
    double sigma_sq_ts;  // sigma_t^2 - alpha_ts^2 * sigma_s^2
};

struct GaussianParams {
    std::vector<double> mean;
    double var;  // scalar, shared across dimensions
};

DiffusionCoeffs diffusion_coeffs(const NoiseSchedule& schedule, double t);

// z_t = alpha_t x + sigma_t eps
std::vector<double> marginal_sample(const std::vector<double>& x, const DiffusionCoeffs& coeffs,
                                    const std::vector<double>& eps);

// q(z_t | z_s) for s < t. The variance uses the numerically stable
// -expm1(softplus(gamma_s) - softplus(gamma_t)) form; set `naive` to compute
// sigma_t^2 - alpha_ts^2 sigma_s^2 directly (stability demonstrations only).
TransitionParams transition_params(const NoiseSchedule& schedule, double s, double t,
                                   bool naive = false);

// q(z_s | z_t, x)
GaussianParams posterior_params(const std::vector<double>& z_t, const std::vector<double>& x,
                                const NoiseSchedule& schedule, double s, double t);

// p(z_s | z_t) with x replaced by the denoised estimate implied by eps_hat.
GaussianParams reverse_model_params(const std::vector<double>& z_t,
                                    const std::vector<double>& eps_hat,
                                    const NoiseSchedule& schedule, double s, double t);

// One ancestral sampling step z_t -> z_s.
std::vector<double> ancestral_step(const std::vector<double>& z_t,
                                   const std::vector<double>& eps_hat,
                                   const NoiseSchedule& schedule, double s, double t,
                                   const std::vector<double>& noise);

}  // namespace vdm
