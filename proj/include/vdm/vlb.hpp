// Variational-bound losses: prior and reconstruction terms, discrete- and
// continuous-time diffusion losses (plain Monte Carlo evaluators and tape
// builders for training), the low-discrepancy time sampler, and the
// schedule-variance gradient routing.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "vdm/autodiff.hpp"
#include "vdm/denoiser.hpp"
#include "vdm/diffusion.hpp"
#include "vdm/rng.hpp"
#include "vdm/schedule.hpp"

namespace vdm {

struct VlbBreakdown {
    double prior_loss = 0.0;      // nats
    double recon_loss = 0.0;      // nats
    double diffusion_loss = 0.0;  // nats
    double total_bpd = 0.0;       // (prior + recon + diffusion) / (d ln 2)
};

enum class TimeMode { IidUniform, LowDiscrepancy, DiscreteIndex };

struct TimeBatch {
    std::vector<double> times;
    TimeMode mode = TimeMode::IidUniform;
};

// t_i = mod(u0 + i/k, 1), i = 1..k. Uniform marginals, stratified coverage.
TimeBatch low_discrepancy_times(std::size_t k, double u0);
TimeBatch iid_times(std::size_t k, Rng& rng);

// V quantization levels spanning [-1, 1].
std::vector<double> level_grid(int levels);

Tensor sample_normal(Rng& rng, std::size_t rows, std::size_t cols);

// ---- plain evaluators (one data example) ----

// KL(q(z_1|x) || N(0, I)) in closed form.
double prior_loss(const std::vector<double>& x, const NoiseSchedule& schedule);

// -log p(x|z_0) with p(x_i|z_{0,i}) proportional to q(z_{0,i}|x_i) normalized
// over the V levels; computed in log space.
double recon_loss(const std::vector<double>& x, const std::vector<double>& z_0,
                  const DiffusionCoeffs& coeffs0, int levels);

// Per-draw terms (T/2) expm1(gamma_t - gamma_s) ||eps - eps_hat||^2 at
// s=(i-1)/T, t=i/T; their mean estimates L_T unbiasedly.
std::vector<double> discrete_loss_terms(const std::vector<double>& x,
                                        const NoiseSchedule& schedule,
                                        const DenoiserParams& denoiser, int T,
                                        const std::vector<int>& indices, const Tensor& eps);
double discrete_diffusion_loss(const std::vector<double>& x, const NoiseSchedule& schedule,
                               const DenoiserParams& denoiser, int T,
                               const std::vector<int>& indices, const Tensor& eps);

// Per-draw terms (1/2) gamma'(t) ||eps - eps_hat||^2.
std::vector<double> continuous_loss_terms(const std::vector<double>& x,
                                          const NoiseSchedule& schedule,
                                          const DenoiserParams& denoiser,
                                          const std::vector<double>& times, const Tensor& eps);
double continuous_diffusion_loss(const std::vector<double>& x, const NoiseSchedule& schedule,
                                 const DenoiserParams& denoiser, const TimeBatch& times,
                                 const Tensor& eps);

// (1/2) gamma'(t) w(exp(-gamma(t))) ||eps - eps_hat||^2 averaged over draws.
double weighted_continuous_loss(const std::vector<double>& x, const NoiseSchedule& schedule,
                                const DenoiserParams& denoiser,
                                const std::function<double(double)>& weight,
                                const TimeBatch& times, const Tensor& eps);

struct EvalMode {
    bool discrete = false;
    int T = 0;  // required when discrete
};

struct SampleCounts {
    std::size_t diffusion_draws = 1024;
    std::size_t recon_draws = 1;
};

VlbBreakdown vlb_bpd(const std::vector<double>& x, const NoiseSchedule& schedule,
                     const DenoiserParams& denoiser, int levels, const EvalMode& mode,
                     const SampleCounts& counts, Rng& rng);

// Mean breakdown over a set of examples.
VlbBreakdown vlb_bpd_dataset(const std::vector<std::vector<double>>& xs,
                             const NoiseSchedule& schedule, const DenoiserParams& denoiser,
                             int levels, const EvalMode& mode, const SampleCounts& counts,
                             Rng& rng);

// ---- tape builders (batched training path) ----

struct BatchLossNodes {
    ad::NodeRef diffusion;    // scalar: mean over rows of the per-example term
    ad::NodeRef per_example;  // (k,1) per-example MC diffusion terms
    // Schedule outputs feeding the loss; the variance objective is routed
    // back through these without a second pass through the denoiser.
    std::vector<ad::NodeRef> cut_nodes;
};

BatchLossNodes build_continuous_batch_loss(ad::Graph& g, const NoiseSchedule& schedule,
                                           const DenoiserParams& denoiser, const Tensor& x,
                                           const std::vector<double>& times, const Tensor& eps);

BatchLossNodes build_discrete_batch_loss(ad::Graph& g, const NoiseSchedule& schedule,
                                         const DenoiserParams& denoiser, const Tensor& x, int T,
                                         const std::vector<int>& indices, const Tensor& eps);

// Scalar prior loss, averaged over batch rows.
ad::NodeRef build_prior_loss(ad::Graph& g, const NoiseSchedule& schedule, const Tensor& x);

// Scalar reconstruction loss, averaged over batch rows; eps0 is the z_0
// reparameterization draw.
ad::NodeRef build_recon_loss(ad::Graph& g, const NoiseSchedule& schedule, const Tensor& x,
                             const Tensor& eps0, int levels);

// After backward(total) has run, seed the squared-per-example-loss objective
// at the cut nodes (factor 2 L^MC per example) and propagate it through the
// schedule subgraph, accumulating into the schedule parameters' grads.
void accumulate_variance_gradients(ad::Graph& g, const BatchLossNodes& nodes);

}  // namespace vdm
