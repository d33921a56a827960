#include "vdm/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vdm {
namespace {

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

void check_order(double s, double t) {
    if (!(s >= 0.0 && s < t && t <= 1.0))
        throw std::invalid_argument("require 0 <= s < t <= 1; got s=" + std::to_string(s) +
                                    " t=" + std::to_string(t));
}

void check_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string("shape mismatch in ") + what);
}

}  // namespace

DiffusionCoeffs diffusion_coeffs(const NoiseSchedule& schedule, double t) {
    const SnrTriple s = schedule.snr_alpha_sigma(t);
    return {schedule.gamma(t), s.alpha_sq, s.sigma_sq, t};
}

std::vector<double> marginal_sample(const std::vector<double>& x, const DiffusionCoeffs& coeffs,
                                    const std::vector<double>& eps) {
    check_same_size(x.size(), eps.size(), "marginal_sample");
    const double a = std::sqrt(coeffs.alpha_sq);
    const double s = std::sqrt(coeffs.sigma_sq);
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = a * x[i] + s * eps[i];
    return z;
}

TransitionParams transition_params(const NoiseSchedule& schedule, double s, double t, bool naive) {
    check_order(s, t);
    const double gs = schedule.gamma(s);
    const double gt = schedule.gamma(t);
    const SnrTriple cs = schedule.snr_alpha_sigma(s);
    const SnrTriple ct = schedule.snr_alpha_sigma(t);
    const double alpha_ts = std::sqrt(ct.alpha_sq / cs.alpha_sq);
    double var;
    if (naive) {
        var = ct.sigma_sq - (ct.alpha_sq / cs.alpha_sq) * cs.sigma_sq;
    } else {
        var = -std::expm1(softplus(gs) - softplus(gt));
    }
    return {alpha_ts, var};
}

GaussianParams posterior_params(const std::vector<double>& z_t, const std::vector<double>& x,
                                const NoiseSchedule& schedule, double s, double t) {
    check_order(s, t);
    check_same_size(z_t.size(), x.size(), "posterior_params");
    const SnrTriple cs = schedule.snr_alpha_sigma(s);
    const SnrTriple ct = schedule.snr_alpha_sigma(t);
    const TransitionParams tr = transition_params(schedule, s, t);
    const double wz = tr.alpha_ts * cs.sigma_sq / ct.sigma_sq;
    const double wx = std::sqrt(cs.alpha_sq) * tr.sigma_sq_ts / ct.sigma_sq;
    GaussianParams out;
    out.var = tr.sigma_sq_ts * cs.sigma_sq / ct.sigma_sq;
    out.mean.resize(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i) out.mean[i] = wz * z_t[i] + wx * x[i];
    return out;
}

GaussianParams reverse_model_params(const std::vector<double>& z_t,
                                    const std::vector<double>& eps_hat,
                                    const NoiseSchedule& schedule, double s, double t) {
    check_order(s, t);
    check_same_size(z_t.size(), eps_hat.size(), "reverse_model_params");
    const double gs = schedule.gamma(s);
    const double gt = schedule.gamma(t);
    const SnrTriple cs = schedule.snr_alpha_sigma(s);
    const SnrTriple ct = schedule.snr_alpha_sigma(t);
    const double ratio = std::sqrt(cs.alpha_sq / ct.alpha_sq);
    const double em1 = std::expm1(gs - gt);  // in (-1, 0]
    const double sigma_t = std::sqrt(ct.sigma_sq);
    GaussianParams out;
    out.var = cs.sigma_sq * (-em1);
    out.mean.resize(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i)
        out.mean[i] = ratio * (z_t[i] + sigma_t * em1 * eps_hat[i]);
    return out;
}

std::vector<double> ancestral_step(const std::vector<double>& z_t,
                                   const std::vector<double>& eps_hat,
                                   const NoiseSchedule& schedule, double s, double t,
                                   const std::vector<double>& noise) {
    check_order(s, t);
    check_same_size(z_t.size(), eps_hat.size(), "ancestral_step");
    check_same_size(z_t.size(), noise.size(), "ancestral_step");
    const double gs = schedule.gamma(s);
    const double gt = schedule.gamma(t);
    const SnrTriple cs = schedule.snr_alpha_sigma(s);
    const SnrTriple ct = schedule.snr_alpha_sigma(t);
    const double c = -std::expm1(gs - gt);
    const double mean_scale = std::sqrt(cs.alpha_sq / ct.alpha_sq);
    const double sigma_t = std::sqrt(ct.sigma_sq);
    const double noise_var = (1.0 - cs.alpha_sq) * c;
    if (noise_var < 0.0) throw std::logic_error("negative ancestral step variance");
    const double noise_scale = std::sqrt(noise_var);
    std::vector<double> z_s(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i)
        z_s[i] = mean_scale * (z_t[i] - sigma_t * c * eps_hat[i]) + noise_scale * noise[i];
    return z_s;
}

}  // namespace vdm
