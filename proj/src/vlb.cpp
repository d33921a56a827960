#include "vdm/vlb.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vdm {
namespace {

constexpr double kLn2 = 0.6931471805599453094172321214581766;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_levels(int levels) {
    if (levels < 2) throw std::invalid_argument("need at least 2 levels");
}

// Batched z_t rows for one example x: row r is alpha_r x + sigma_r eps_r.
Tensor diffuse_rows(const std::vector<double>& x, const std::vector<double>& gammas,
                    const Tensor& eps) {
    if (eps.rows != gammas.size() || eps.cols != x.size())
        throw std::invalid_argument("diffuse_rows: eps shape mismatch");
    Tensor z(eps.rows, eps.cols);
    for (std::size_t r = 0; r < eps.rows; ++r) {
        const double a = std::sqrt(sigmoid(-gammas[r]));
        const double s = std::sqrt(sigmoid(gammas[r]));
        for (std::size_t j = 0; j < eps.cols; ++j) z(r, j) = a * x[j] + s * eps(r, j);
    }
    return z;
}

std::vector<double> row_mse(const Tensor& eps, const Tensor& eps_hat) {
    std::vector<double> mse(eps.rows, 0.0);
    for (std::size_t r = 0; r < eps.rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < eps.cols; ++j) {
            const double d = eps(r, j) - eps_hat(r, j);
            acc += d * d;
        }
        mse[r] = acc;
    }
    return mse;
}

}  // namespace

TimeBatch low_discrepancy_times(std::size_t k, double u0) {
    if (k < 1) throw std::invalid_argument("batch size must be >= 1");
    if (u0 < 0.0 || u0 >= 1.0) throw std::invalid_argument("u0 must lie in [0,1)");
    TimeBatch batch;
    batch.mode = TimeMode::LowDiscrepancy;
    batch.times.resize(k);
    for (std::size_t i = 1; i <= k; ++i)
        batch.times[i - 1] = std::fmod(u0 + static_cast<double>(i) / static_cast<double>(k), 1.0);
    return batch;
}

TimeBatch iid_times(std::size_t k, Rng& rng) {
    TimeBatch batch;
    batch.mode = TimeMode::IidUniform;
    batch.times.resize(k);
    for (auto& t : batch.times) t = rng.uniform();
    return batch;
}

std::vector<double> level_grid(int levels) {
    check_levels(levels);
    std::vector<double> grid(levels);
    for (int j = 0; j < levels; ++j)
        grid[j] = -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(levels - 1);
    return grid;
}

Tensor sample_normal(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    for (double& v : t.data) v = rng.normal();
    return t;
}

double prior_loss(const std::vector<double>& x, const NoiseSchedule& schedule) {
    const SnrTriple c1 = schedule.snr_alpha_sigma(1.0);
    double acc = 0.0;
    for (double xi : x) acc += c1.sigma_sq + c1.alpha_sq * xi * xi - 1.0 - std::log(c1.sigma_sq);
    return 0.5 * acc;
}

double recon_loss(const std::vector<double>& x, const std::vector<double>& z_0,
                  const DiffusionCoeffs& coeffs0, int levels) {
    check_levels(levels);
    if (x.size() != z_0.size()) throw std::invalid_argument("recon_loss shape mismatch");
    const std::vector<double> grid = level_grid(levels);
    const double a0 = std::sqrt(coeffs0.alpha_sq);
    const double inv2var = 0.5 / coeffs0.sigma_sq;
    const double spacing = 2.0 / static_cast<double>(levels - 1);
    double loss = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        // x must sit exactly on the level grid.
        const double idx = (x[j] + 1.0) / spacing;
        const long nearest = std::lround(idx);
        if (nearest < 0 || nearest >= levels || std::fabs(idx - static_cast<double>(nearest)) > 1e-9)
            throw std::invalid_argument("recon_loss: x off the level grid");
        const double a_x = -(z_0[j] - a0 * x[j]) * (z_0[j] - a0 * x[j]) * inv2var;
        double shift = a_x;
        for (double v : grid) {
            const double a_v = -(z_0[j] - a0 * v) * (z_0[j] - a0 * v) * inv2var;
            shift = std::max(shift, a_v);
        }
        double sumexp = 0.0;
        for (double v : grid) {
            const double a_v = -(z_0[j] - a0 * v) * (z_0[j] - a0 * v) * inv2var;
            sumexp += std::exp(a_v - shift);
        }
        loss += shift + std::log(sumexp) - a_x;
    }
    return loss;
}

std::vector<double> discrete_loss_terms(const std::vector<double>& x,
                                        const NoiseSchedule& schedule,
                                        const DenoiserParams& denoiser, int T,
                                        const std::vector<int>& indices, const Tensor& eps) {
    if (T < 1) throw std::invalid_argument("T must be >= 1");
    if (indices.size() != eps.rows) throw std::invalid_argument("indices/eps size mismatch");
    std::vector<double> gs(indices.size()), gt(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const int i = indices[r];
        if (i < 1 || i > T) throw std::invalid_argument("step index out of range");
        gs[r] = schedule.gamma(static_cast<double>(i - 1) / T);
        gt[r] = schedule.gamma(static_cast<double>(i) / T);
    }
    const Tensor z = diffuse_rows(x, gt, eps);
    const Tensor eps_hat = predict_noise(denoiser, z, gt);
    std::vector<double> mse = row_mse(eps, eps_hat);
    std::vector<double> terms(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r)
        terms[r] = 0.5 * static_cast<double>(T) * std::expm1(gt[r] - gs[r]) * mse[r];
    return terms;
}

double discrete_diffusion_loss(const std::vector<double>& x, const NoiseSchedule& schedule,
                               const DenoiserParams& denoiser, int T,
                               const std::vector<int>& indices, const Tensor& eps) {
    const std::vector<double> terms = discrete_loss_terms(x, schedule, denoiser, T, indices, eps);
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc / static_cast<double>(terms.size());
}

std::vector<double> continuous_loss_terms(const std::vector<double>& x,
                                          const NoiseSchedule& schedule,
                                          const DenoiserParams& denoiser,
                                          const std::vector<double>& times, const Tensor& eps) {
    if (times.size() != eps.rows) throw std::invalid_argument("times/eps size mismatch");
    std::vector<double> gammas(times.size()), gprime(times.size());
    for (std::size_t r = 0; r < times.size(); ++r) {
        gammas[r] = schedule.gamma(times[r]);
        gprime[r] = schedule.gamma_prime(times[r]);
    }
    const Tensor z = diffuse_rows(x, gammas, eps);
    const Tensor eps_hat = predict_noise(denoiser, z, gammas);
    std::vector<double> mse = row_mse(eps, eps_hat);
    std::vector<double> terms(times.size());
    for (std::size_t r = 0; r < times.size(); ++r) terms[r] = 0.5 * gprime[r] * mse[r];
    return terms;
}

double continuous_diffusion_loss(const std::vector<double>& x, const NoiseSchedule& schedule,
                                 const DenoiserParams& denoiser, const TimeBatch& times,
                                 const Tensor& eps) {
    const std::vector<double> terms =
        continuous_loss_terms(x, schedule, denoiser, times.times, eps);
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc / static_cast<double>(terms.size());
}

double weighted_continuous_loss(const std::vector<double>& x, const NoiseSchedule& schedule,
                                const DenoiserParams& denoiser,
                                const std::function<double(double)>& weight,
                                const TimeBatch& times, const Tensor& eps) {
    std::vector<double> terms = continuous_loss_terms(x, schedule, denoiser, times.times, eps);
    double acc = 0.0;
    for (std::size_t r = 0; r < terms.size(); ++r) {
        const double w = weight(std::exp(-schedule.gamma(times.times[r])));
        if (!(w > 0.0)) throw std::invalid_argument("weight function must be positive");
        acc += w * terms[r];
    }
    return acc / static_cast<double>(terms.size());
}

VlbBreakdown vlb_bpd(const std::vector<double>& x, const NoiseSchedule& schedule,
                     const DenoiserParams& denoiser, int levels, const EvalMode& mode,
                     const SampleCounts& counts, Rng& rng) {
    if (counts.diffusion_draws < 1 || counts.recon_draws < 1)
        throw std::invalid_argument("sample counts must be >= 1");
    VlbBreakdown out;
    out.prior_loss = prior_loss(x, schedule);

    const DiffusionCoeffs c0 = diffusion_coeffs(schedule, 0.0);
    double recon = 0.0;
    for (std::size_t r = 0; r < counts.recon_draws; ++r) {
        std::vector<double> eps0(x.size());
        for (auto& e : eps0) e = rng.normal();
        const std::vector<double> z0 = marginal_sample(x, c0, eps0);
        recon += recon_loss(x, z0, c0, levels);
    }
    out.recon_loss = recon / static_cast<double>(counts.recon_draws);

    constexpr std::size_t kChunk = 512;
    if (mode.discrete) {
        if (mode.T < 1) throw std::invalid_argument("discrete mode requires T >= 1");
        // Stratified: every step index appears the same number of times.
        const std::size_t reps =
            std::max<std::size_t>(1, counts.diffusion_draws / static_cast<std::size_t>(mode.T));
        std::vector<int> all_idx;
        all_idx.reserve(reps * mode.T);
        for (std::size_t r = 0; r < reps; ++r)
            for (int i = 1; i <= mode.T; ++i) all_idx.push_back(i);
        double acc = 0.0;
        std::size_t done = 0;
        while (done < all_idx.size()) {
            const std::size_t n = std::min(kChunk, all_idx.size() - done);
            std::vector<int> idx(all_idx.begin() + done, all_idx.begin() + done + n);
            const Tensor eps = sample_normal(rng, n, x.size());
            const std::vector<double> terms =
                discrete_loss_terms(x, schedule, denoiser, mode.T, idx, eps);
            for (double t : terms) acc += t;
            done += n;
        }
        out.diffusion_loss = acc / static_cast<double>(all_idx.size());
    } else {
        const TimeBatch batch = low_discrepancy_times(counts.diffusion_draws, rng.uniform());
        double acc = 0.0;
        std::size_t done = 0;
        while (done < batch.times.size()) {
            const std::size_t n = std::min(kChunk, batch.times.size() - done);
            std::vector<double> times(batch.times.begin() + done, batch.times.begin() + done + n);
            const Tensor eps = sample_normal(rng, n, x.size());
            const std::vector<double> terms =
                continuous_loss_terms(x, schedule, denoiser, times, eps);
            for (double t : terms) acc += t;
            done += n;
        }
        out.diffusion_loss = acc / static_cast<double>(batch.times.size());
    }

    out.total_bpd = (out.prior_loss + out.recon_loss + out.diffusion_loss) /
                    (static_cast<double>(x.size()) * kLn2);
    return out;
}

VlbBreakdown vlb_bpd_dataset(const std::vector<std::vector<double>>& xs,
                             const NoiseSchedule& schedule, const DenoiserParams& denoiser,
                             int levels, const EvalMode& mode, const SampleCounts& counts,
                             Rng& rng) {
    if (xs.empty()) throw std::invalid_argument("empty dataset");
    VlbBreakdown acc;
    for (const auto& x : xs) {
        const VlbBreakdown b = vlb_bpd(x, schedule, denoiser, levels, mode, counts, rng);
        acc.prior_loss += b.prior_loss;
        acc.recon_loss += b.recon_loss;
        acc.diffusion_loss += b.diffusion_loss;
        acc.total_bpd += b.total_bpd;
    }
    const double n = static_cast<double>(xs.size());
    acc.prior_loss /= n;
    acc.recon_loss /= n;
    acc.diffusion_loss /= n;
    acc.total_bpd /= n;
    return acc;
}

// ---- tape builders ----

namespace {

struct DiffusedBatch {
    ad::NodeRef z;
    ad::NodeRef gamma;
    ad::NodeRef mse;  // (k,1) row sums of squared prediction error
};

DiffusedBatch build_diffused_mse(ad::Graph& g, const DenoiserParams& denoiser, const Tensor& x,
                                 ad::NodeRef gamma, const Tensor& eps) {
    using ad::NodeRef;
    NodeRef xn = g.constant(x);
    NodeRef en = g.constant(eps);
    NodeRef alpha = g.sqrt(g.sigmoid(g.scale(gamma, -1.0)));
    NodeRef sig = g.sqrt(g.sigmoid(gamma));
    NodeRef z = g.add(g.mul(xn, alpha), g.mul(en, sig));
    NodeRef eps_hat = build_predict_noise(g, denoiser, z, gamma);
    NodeRef mse = g.row_sum(g.square(g.sub(en, eps_hat)));
    return {z, gamma, mse};
}

}  // namespace

BatchLossNodes build_continuous_batch_loss(ad::Graph& g, const NoiseSchedule& schedule,
                                           const DenoiserParams& denoiser, const Tensor& x,
                                           const std::vector<double>& times, const Tensor& eps) {
    using ad::NodeRef;
    if (x.rows != times.size() || x.rows != eps.rows)
        throw std::invalid_argument("batch loss: row mismatch");
    NodeRef t_node = g.constant(Tensor::column(times));
    NodeRef gamma = schedule.gamma_node(g, t_node);
    NodeRef gprime = schedule.gamma_prime_node(g, t_node);
    DiffusedBatch d = build_diffused_mse(g, denoiser, x, gamma, eps);
    NodeRef per_example = g.scale(g.mul(gprime, d.mse), 0.5);
    BatchLossNodes out;
    out.per_example = per_example;
    out.diffusion = g.mean(per_example);
    out.cut_nodes = {gamma, gprime};
    return out;
}

BatchLossNodes build_discrete_batch_loss(ad::Graph& g, const NoiseSchedule& schedule,
                                         const DenoiserParams& denoiser, const Tensor& x, int T,
                                         const std::vector<int>& indices, const Tensor& eps) {
    using ad::NodeRef;
    if (T < 1) throw std::invalid_argument("T must be >= 1");
    if (x.rows != indices.size() || x.rows != eps.rows)
        throw std::invalid_argument("batch loss: row mismatch");
    std::vector<double> s_times(indices.size()), t_times(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] < 1 || indices[r] > T)
            throw std::invalid_argument("step index out of range");
        s_times[r] = static_cast<double>(indices[r] - 1) / T;
        t_times[r] = static_cast<double>(indices[r]) / T;
    }
    NodeRef gs = schedule.gamma_node(g, g.constant(Tensor::column(s_times)));
    NodeRef gt = schedule.gamma_node(g, g.constant(Tensor::column(t_times)));
    DiffusedBatch d = build_diffused_mse(g, denoiser, x, gt, eps);
    NodeRef weight = g.expm1(g.sub(gt, gs));
    NodeRef per_example = g.scale(g.mul(weight, d.mse), 0.5 * static_cast<double>(T));
    BatchLossNodes out;
    out.per_example = per_example;
    out.diffusion = g.mean(per_example);
    out.cut_nodes = {gt, gs};
    return out;
}

ad::NodeRef build_prior_loss(ad::Graph& g, const NoiseSchedule& schedule, const Tensor& x) {
    using ad::NodeRef;
    NodeRef g1 = schedule.gamma_node(g, g.constant(1.0));
    NodeRef sig1 = g.sigmoid(g1);
    NodeRef alpha1 = g.sigmoid(g.scale(g1, -1.0));
    NodeRef xn = g.constant(x);
    NodeRef terms = g.sub(g.sub(g.add(g.mul(alpha1, g.square(xn)), sig1), g.constant(1.0)),
                          g.log(sig1));
    return g.mean(g.scale(g.row_sum(terms), 0.5));
}

ad::NodeRef build_recon_loss(ad::Graph& g, const NoiseSchedule& schedule, const Tensor& x,
                             const Tensor& eps0, int levels) {
    using ad::NodeRef;
    check_levels(levels);
    if (!x.same_shape(eps0)) throw std::invalid_argument("recon: eps0 shape mismatch");
    const std::vector<double> grid = level_grid(levels);

    NodeRef g0 = schedule.gamma_node(g, g.constant(0.0));
    NodeRef sig0_sq = g.sigmoid(g0);
    NodeRef alpha0 = g.sqrt(g.sigmoid(g.scale(g0, -1.0)));
    NodeRef xn = g.constant(x);
    NodeRef en = g.constant(eps0);
    NodeRef z0 = g.add(g.mul(xn, alpha0), g.mul(en, g.sqrt(sig0_sq)));
    NodeRef inv2var = g.div(g.constant(-0.5), sig0_sq);

    // log-sum-exp shift, computed from current values and baked as data. The
    // identity lse(a) = c + log sum exp(a - c) holds for any constant c, so
    // the value and gradients stay exact even if parameters move later.
    const double g0v = schedule.gamma(0.0);
    const double a0v = std::sqrt(sigmoid(-g0v));
    const double i2v = -0.5 / sigmoid(g0v);
    Tensor shift(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double z = a0v * x(r, j) + std::sqrt(sigmoid(g0v)) * eps0(r, j);
            double best = (z - a0v * x(r, j)) * (z - a0v * x(r, j)) * i2v;
            for (double v : grid) best = std::max(best, (z - a0v * v) * (z - a0v * v) * i2v);
            shift(r, j) = best;
        }
    NodeRef shift_n = g.constant(shift);

    NodeRef a_x = g.mul(g.square(g.sub(z0, g.mul(xn, alpha0))), inv2var);
    NodeRef sumexp;
    bool first = true;
    for (double v : grid) {
        NodeRef a_v = g.mul(g.square(g.sub(z0, g.scale(alpha0, v))), inv2var);
        NodeRef e = g.exp(g.sub(a_v, shift_n));
        sumexp = first ? e : g.add(sumexp, e);
        first = false;
    }
    NodeRef loss = g.sub(g.add(shift_n, g.log(sumexp)), a_x);
    return g.mean(g.row_sum(loss));
}

void accumulate_variance_gradients(ad::Graph& g, const BatchLossNodes& nodes) {
    const Tensor ell = g.value(nodes.per_example);
    std::vector<std::pair<ad::NodeRef, Tensor>> seeds;
    seeds.reserve(nodes.cut_nodes.size());
    for (const ad::NodeRef& cut : nodes.cut_nodes) {
        const Tensor adj = g.adjoint(cut);  // d(total)/d(cut) = (1/k) d l_i / d(cut_i)
        if (adj.rows != ell.rows || adj.cols != 1)
            throw std::logic_error("variance routing: unexpected cut node shape");
        Tensor seed(adj.rows, 1);
        for (std::size_t i = 0; i < adj.rows; ++i)
            seed(i, 0) = 2.0 * ell(i, 0) * adj(i, 0);
        seeds.emplace_back(cut, std::move(seed));
    }
    g.backward_from(seeds);
}

}  // namespace vdm
