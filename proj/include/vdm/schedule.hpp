// Noise schedules gamma(t) = -log SNR(t) for the variance-preserving process:
// a learnable monotonic network with trainable endpoints, plus fixed analytic
// forms. Schedules are value objects; training swaps in new parameter values.
#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "vdm/autodiff.hpp"

namespace vdm {

struct ScheduleEndpoints {
    double gamma0 = -10.0;  // -log SNR_max, at t = 0
    double gamma1 = 10.0;   // -log SNR_min, at t = 1
};

// Three positive-weight affine layers composed as
//   gamma_tilde(t) = l1(t) + l3(sigmoid(l2(l1(t)))).
// Weights are stored unconstrained and pass through softplus at use time;
// biases are unconstrained.
struct MonotonicNetParams {
    ad::ParamPtr l1_w, l1_b;  // 1x1
    ad::ParamPtr l2_w, l2_b;  // 1xH
    ad::ParamPtr l3_w, l3_b;  // 1xH, 1x1
    int hidden = 1024;

    static MonotonicNetParams init(std::uint64_t seed, int hidden = 1024);
    std::vector<ad::ParamPtr> params() const { return {l1_w, l1_b, l2_w, l2_b, l3_w, l3_b}; }
};

double gamma_tilde(const MonotonicNetParams& net, double t);
double gamma_tilde_dt(const MonotonicNetParams& net, double t);

enum class ScheduleKind {
    LearnedMonotonic,
    LogSnrLinear,
    BetaLinear,
    AlphaCosine,
};

struct SnrTriple {
    double snr;
    double alpha_sq;
    double sigma_sq;
};

class NoiseSchedule {
   public:
    // Learned monotonic network rescaled to hit the endpoints exactly.
    static NoiseSchedule learned(ScheduleEndpoints e, std::uint64_t seed, int hidden = 1024);
    static NoiseSchedule learned(ScheduleEndpoints e, MonotonicNetParams net);
    // gamma affine in t between the endpoints.
    static NoiseSchedule log_snr_linear(ScheduleEndpoints e);
    // NCSNv2 constants: sigma_t geometric from 0.01 to 50.
    static NoiseSchedule ncsn_v2();
    // Continuous approximation of the DDPM beta-linear schedule.
    static NoiseSchedule beta_linear();
    // Unclipped cosine alpha_bar schedule; gamma diverges at exactly t=0 and
    // t=1 (IEEE +-inf), interior values are finite.
    static NoiseSchedule alpha_cosine();

    ScheduleKind kind() const { return kind_; }
    double gamma0() const;
    double gamma1() const;
    ScheduleEndpoints endpoints() const { return {gamma0(), gamma1()}; }

    double gamma(double t) const;
    double gamma_prime(double t) const;
    SnrTriple snr_alpha_sigma(double t) const;
    double implied_weighting(double t) const;
    // Inverse of gamma by bisection; g must lie within [gamma(0), gamma(1)].
    double time_of_gamma(double g) const;

    // Tape builders. t_node is (k x 1); gradients flow into the endpoint and
    // interior network parameters where the kind has them.
    ad::NodeRef gamma_node(ad::Graph& g, ad::NodeRef t_node) const;
    ad::NodeRef gamma_prime_node(ad::Graph& g, ad::NodeRef t_node) const;

    // Endpoint parameters (trained w.r.t. the VLB); null for fixed-form kinds.
    ad::ParamPtr gamma0_param() const { return gamma0_p_; }
    ad::ParamPtr gamma1_param() const { return gamma1_p_; }
    // Interior network parameters (trained to minimize estimator variance in
    // continuous mode); empty unless learned.
    std::vector<ad::ParamPtr> interior_params() const;
    const MonotonicNetParams* net() const { return net_.get(); }

   private:
    NoiseSchedule() = default;
    ScheduleKind kind_ = ScheduleKind::LogSnrLinear;
    ad::ParamPtr gamma0_p_, gamma1_p_;
    std::shared_ptr<MonotonicNetParams> net_;
};

}  // namespace vdm
