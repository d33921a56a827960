#include "vdm/schedule.hpp"

#include <cmath>
#include <stdexcept>

#include "vdm/rng.hpp"

namespace vdm {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Inverse of softplus, for initializing stored values to a target effective
// weight.
double softplus_inv(double y) { return std::log(std::expm1(y)); }

void check_unit_interval(double t, bool open) {
    if (open ? (t <= 0.0 || t >= 1.0) : (t < 0.0 || t > 1.0))
        throw std::domain_error("time outside " + std::string(open ? "(0,1)" : "[0,1]") + ": t=" +
                                std::to_string(t));
}

double cosine_alpha_bar(double t) {
    const double u = (t + 0.008) / 1.008 * (kPi / 2.0);
    return std::cos(u) / std::cos(0.008 / 1.008 * (kPi / 2.0));
}

}  // namespace

MonotonicNetParams MonotonicNetParams::init(std::uint64_t seed, int hidden) {
    Rng rng(derive_seed(seed, 0x5ced01eULL));
    MonotonicNetParams p;
    p.hidden = hidden;
    const std::size_t h = static_cast<std::size_t>(hidden);
    // l1 starts as the identity so the initial schedule is near log-SNR-linear.
    p.l1_w = ad::make_param(Tensor::scalar(softplus_inv(1.0)), "sched.l1_w");
    p.l1_b = ad::make_param(Tensor::scalar(0.0), "sched.l1_b");
    Tensor w2(1, h), b2(1, h), w3(1, h);
    for (std::size_t i = 0; i < h; ++i) {
        w2.data[i] = softplus_inv(std::exp(rng.uniform(std::log(0.1), std::log(2.0))));
        b2.data[i] = rng.uniform(-1.0, 1.0);
        w3.data[i] = softplus_inv(std::exp(rng.uniform(std::log(1e-5), std::log(1e-4))));
    }
    p.l2_w = ad::make_param(std::move(w2), "sched.l2_w");
    p.l2_b = ad::make_param(std::move(b2), "sched.l2_b");
    p.l3_w = ad::make_param(std::move(w3), "sched.l3_w");
    p.l3_b = ad::make_param(Tensor::scalar(0.0), "sched.l3_b");
    return p;
}

double gamma_tilde(const MonotonicNetParams& net, double t) {
    check_unit_interval(t, false);
    const double u = softplus(net.l1_w->value[0]) * t + net.l1_b->value[0];
    double acc = 0.0;
    const std::size_t h = static_cast<std::size_t>(net.hidden);
    for (std::size_t i = 0; i < h; ++i) {
        const double hv = softplus(net.l2_w->value[i]) * u + net.l2_b->value[i];
        acc += softplus(net.l3_w->value[i]) * sigmoid(hv);
    }
    return u + acc + net.l3_b->value[0];
}

double gamma_tilde_dt(const MonotonicNetParams& net, double t) {
    const double w1 = softplus(net.l1_w->value[0]);
    const double u = w1 * t + net.l1_b->value[0];
    double acc = 0.0;
    const std::size_t h = static_cast<std::size_t>(net.hidden);
    for (std::size_t i = 0; i < h; ++i) {
        const double w2 = softplus(net.l2_w->value[i]);
        const double s = sigmoid(w2 * u + net.l2_b->value[i]);
        acc += softplus(net.l3_w->value[i]) * s * (1.0 - s) * w2;
    }
    return w1 * (1.0 + acc);
}

NoiseSchedule NoiseSchedule::learned(ScheduleEndpoints e, std::uint64_t seed, int hidden) {
    return learned(e, MonotonicNetParams::init(seed, hidden));
}

NoiseSchedule NoiseSchedule::learned(ScheduleEndpoints e, MonotonicNetParams net) {
    if (e.gamma0 >= e.gamma1) throw std::invalid_argument("endpoints require gamma0 < gamma1");
    NoiseSchedule s;
    s.kind_ = ScheduleKind::LearnedMonotonic;
    s.gamma0_p_ = ad::make_param(Tensor::scalar(e.gamma0), "sched.gamma0");
    s.gamma1_p_ = ad::make_param(Tensor::scalar(e.gamma1), "sched.gamma1");
    s.net_ = std::make_shared<MonotonicNetParams>(std::move(net));
    return s;
}

NoiseSchedule NoiseSchedule::log_snr_linear(ScheduleEndpoints e) {
    if (e.gamma0 >= e.gamma1) throw std::invalid_argument("endpoints require gamma0 < gamma1");
    NoiseSchedule s;
    s.kind_ = ScheduleKind::LogSnrLinear;
    s.gamma0_p_ = ad::make_param(Tensor::scalar(e.gamma0), "sched.gamma0");
    s.gamma1_p_ = ad::make_param(Tensor::scalar(e.gamma1), "sched.gamma1");
    return s;
}

NoiseSchedule NoiseSchedule::ncsn_v2() {
    return log_snr_linear({2.0 * std::log(0.01), 2.0 * std::log(0.01) + 2.0 * std::log(5000.0)});
}

NoiseSchedule NoiseSchedule::beta_linear() {
    NoiseSchedule s;
    s.kind_ = ScheduleKind::BetaLinear;
    return s;
}

NoiseSchedule NoiseSchedule::alpha_cosine() {
    NoiseSchedule s;
    s.kind_ = ScheduleKind::AlphaCosine;
    return s;
}

double NoiseSchedule::gamma0() const {
    switch (kind_) {
        case ScheduleKind::LearnedMonotonic:
        case ScheduleKind::LogSnrLinear:
            return gamma0_p_->value[0];
        case ScheduleKind::BetaLinear:
            return std::log(std::expm1(1e-4));
        case ScheduleKind::AlphaCosine: {
            const double a2 = cosine_alpha_bar(0.0) * cosine_alpha_bar(0.0);
            return std::log(1.0 / a2 - 1.0);  // -inf: alpha_bar(0) = 1
        }
    }
    return 0.0;
}

double NoiseSchedule::gamma1() const {
    switch (kind_) {
        case ScheduleKind::LearnedMonotonic:
        case ScheduleKind::LogSnrLinear:
            return gamma1_p_->value[0];
        case ScheduleKind::BetaLinear:
            return std::log(std::expm1(1e-4 + 10.0));
        case ScheduleKind::AlphaCosine: {
            const double a2 = cosine_alpha_bar(1.0) * cosine_alpha_bar(1.0);
            return std::log(1.0 / a2 - 1.0);  // +inf: alpha_bar(1) = 0
        }
    }
    return 0.0;
}

double NoiseSchedule::gamma(double t) const {
    check_unit_interval(t, false);
    switch (kind_) {
        case ScheduleKind::LearnedMonotonic: {
            if (!net_) throw std::invalid_argument("learned schedule requires a monotonic net");
            const double g0 = gamma0_p_->value[0], g1 = gamma1_p_->value[0];
            const double lo = gamma_tilde(*net_, 0.0), hi = gamma_tilde(*net_, 1.0);
            return g0 + (g1 - g0) * (gamma_tilde(*net_, t) - lo) / (hi - lo);
        }
        case ScheduleKind::LogSnrLinear: {
            const double g0 = gamma0_p_->value[0], g1 = gamma1_p_->value[0];
            return g0 + (g1 - g0) * t;
        }
        case ScheduleKind::BetaLinear:
            return std::log(std::expm1(1e-4 + 10.0 * t * t));
        case ScheduleKind::AlphaCosine: {
            const double a = cosine_alpha_bar(t);
            return std::log(1.0 / (a * a) - 1.0);
        }
    }
    return 0.0;
}

double NoiseSchedule::gamma_prime(double t) const {
    check_unit_interval(t, true);
    switch (kind_) {
        case ScheduleKind::LearnedMonotonic: {
            const double g0 = gamma0_p_->value[0], g1 = gamma1_p_->value[0];
            const double lo = gamma_tilde(*net_, 0.0), hi = gamma_tilde(*net_, 1.0);
            return (g1 - g0) * gamma_tilde_dt(*net_, t) / (hi - lo);
        }
        case ScheduleKind::LogSnrLinear:
            return gamma1_p_->value[0] - gamma0_p_->value[0];
        case ScheduleKind::BetaLinear: {
            const double e = 1e-4 + 10.0 * t * t;
            return -20.0 * t / std::expm1(-e);
        }
        case ScheduleKind::AlphaCosine: {
            const double du = kPi / (2.0 * 1.008);
            const double u = (t + 0.008) / 1.008 * (kPi / 2.0);
            return 4.0 * du / std::sin(2.0 * u);
        }
    }
    return 0.0;
}

SnrTriple NoiseSchedule::snr_alpha_sigma(double t) const {
    const double g = gamma(t);
    return {std::exp(-g), sigmoid(-g), sigmoid(g)};
}

double NoiseSchedule::implied_weighting(double t) const {
    const double gp = gamma_prime(t);
    if (!(gp > 0.0)) throw std::runtime_error("schedule invalid: gamma_prime <= 0");
    return 1.0 / gp;
}

double NoiseSchedule::time_of_gamma(double g) const {
    double lo = 0.0, hi = 1.0;
    const double glo = gamma(lo), ghi = gamma(hi);
    if (g < glo || g > ghi) throw std::domain_error("gamma value outside schedule range");
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (gamma(mid) < g)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

ad::NodeRef NoiseSchedule::gamma_node(ad::Graph& g, ad::NodeRef t_node) const {
    using ad::NodeRef;
    switch (kind_) {
        case ScheduleKind::LearnedMonotonic: {
            auto tilde = [&](NodeRef t) {
                NodeRef u = g.add(g.mul(t, g.softplus(g.param(net_->l1_w))), g.param(net_->l1_b));
                NodeRef h = g.add(g.mul(u, g.softplus(g.param(net_->l2_w))), g.param(net_->l2_b));
                NodeRef phi = g.sigmoid(h);
                NodeRef l3 = g.add(g.row_sum(g.mul(phi, g.softplus(g.param(net_->l3_w)))),
                                   g.param(net_->l3_b));
                return g.add(u, l3);
            };
            NodeRef gt = tilde(t_node);
            NodeRef lo = tilde(g.constant(0.0));
            NodeRef hi = tilde(g.constant(1.0));
            NodeRef g0 = g.param(gamma0_p_);
            NodeRef g1 = g.param(gamma1_p_);
            NodeRef span = g.sub(g1, g0);
            return g.add(g0, g.mul(span, g.div(g.sub(gt, lo), g.sub(hi, lo))));
        }
        case ScheduleKind::LogSnrLinear: {
            NodeRef g0 = g.param(gamma0_p_);
            NodeRef g1 = g.param(gamma1_p_);
            return g.add(g0, g.mul(g.sub(g1, g0), t_node));
        }
        case ScheduleKind::BetaLinear: {
            NodeRef e = g.add(g.constant(1e-4), g.scale(g.square(t_node), 10.0));
            return g.log(g.expm1(e));
        }
        case ScheduleKind::AlphaCosine: {
            const double norm = std::cos(0.008 / 1.008 * (kPi / 2.0));
            NodeRef u = g.scale(g.add(t_node, g.constant(0.008)), kPi / (2.0 * 1.008));
            NodeRef a = g.scale(g.cos(u), 1.0 / norm);
            return g.log(g.sub(g.div(g.constant(1.0), g.square(a)), g.constant(1.0)));
        }
    }
    throw std::logic_error("unreachable");
}

ad::NodeRef NoiseSchedule::gamma_prime_node(ad::Graph& g, ad::NodeRef t_node) const {
    using ad::NodeRef;
    switch (kind_) {
        case ScheduleKind::LearnedMonotonic: {
            NodeRef w1 = g.softplus(g.param(net_->l1_w));
            NodeRef u = g.add(g.mul(t_node, w1), g.param(net_->l1_b));
            NodeRef w2 = g.softplus(g.param(net_->l2_w));
            NodeRef phi = g.sigmoid(g.add(g.mul(u, w2), g.param(net_->l2_b)));
            NodeRef sig_d = g.mul(phi, g.sub(g.constant(1.0), phi));
            NodeRef inner =
                g.row_sum(g.mul(g.mul(sig_d, w2), g.softplus(g.param(net_->l3_w))));
            NodeRef dtilde = g.mul(w1, g.add(g.constant(1.0), inner));
            // d gamma / dt = (g1-g0) * dtilde / (tilde(1) - tilde(0))
            auto tilde_const = [&](double tv) {
                NodeRef t = g.constant(tv);
                NodeRef uu = g.add(g.mul(t, w1), g.param(net_->l1_b));
                NodeRef hh = g.add(g.mul(uu, w2), g.param(net_->l2_b));
                NodeRef pp = g.sigmoid(hh);
                return g.add(uu, g.add(g.row_sum(g.mul(pp, g.softplus(g.param(net_->l3_w)))),
                                       g.param(net_->l3_b)));
            };
            NodeRef lo = tilde_const(0.0);
            NodeRef hi = tilde_const(1.0);
            NodeRef span = g.sub(g.param(gamma1_p_), g.param(gamma0_p_));
            return g.mul(span, g.div(dtilde, g.sub(hi, lo)));
        }
        case ScheduleKind::LogSnrLinear: {
            NodeRef span = g.sub(g.param(gamma1_p_), g.param(gamma0_p_));
            // Broadcast the constant slope to one value per time row.
            return g.mul(g.add(g.scale(t_node, 0.0), g.constant(1.0)), span);
        }
        case ScheduleKind::BetaLinear: {
            NodeRef e = g.add(g.constant(1e-4), g.scale(g.square(t_node), 10.0));
            NodeRef denom = g.expm1(g.scale(e, -1.0));
            return g.div(g.scale(t_node, -20.0), denom);
        }
        case ScheduleKind::AlphaCosine: {
            const double du = kPi / (2.0 * 1.008);
            NodeRef u = g.scale(g.add(t_node, g.constant(0.008)), du);
            return g.div(g.constant(4.0 * du), g.sin(g.scale(u, 2.0)));
        }
    }
    throw std::logic_error("unreachable");
}

std::vector<ad::ParamPtr> NoiseSchedule::interior_params() const {
    if (kind_ != ScheduleKind::LearnedMonotonic) return {};
    return net_->params();
}

}  // namespace vdm
