#include "vdm/denoiser.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vdm/rng.hpp"

namespace vdm {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor gamma_embedding(const std::vector<double>& gamma, const DenoiserConfig& cfg) {
    const std::size_t m = cfg.emb_dim / 2;
    const double inv_span = 1.0 / (cfg.gamma_hi - cfg.gamma_lo);
    Tensor emb(gamma.size(), cfg.emb_dim);
    for (std::size_t r = 0; r < gamma.size(); ++r) {
        const double gn = (gamma[r] - cfg.gamma_lo) * inv_span;
        for (std::size_t j = 0; j < m; ++j) {
            const double w = 2.0 * kPi * std::ldexp(1.0, static_cast<int>(j));
            emb(r, j) = std::sin(gn * w);
            emb(r, m + j) = std::cos(gn * w);
        }
    }
    return emb;
}

}  // namespace

Tensor fourier_features(const Tensor& z, const FourierConfig& config) {
    if (config.n_min > config.n_max)
        throw std::invalid_argument("fourier config requires n_min <= n_max");
    const int bands = config.bands();
    Tensor out(z.rows, z.cols * 2 * static_cast<std::size_t>(bands));
    for (std::size_t r = 0; r < z.rows; ++r) {
        std::size_t c = 0;
        for (int n = config.n_min; n <= config.n_max; ++n) {
            const double f = std::ldexp(1.0, n) * kPi;
            for (std::size_t j = 0; j < z.cols; ++j) out(r, c++) = std::sin(z(r, j) * f);
            for (std::size_t j = 0; j < z.cols; ++j) out(r, c++) = std::cos(z(r, j) * f);
        }
    }
    return out;
}

DenoiserParams DenoiserParams::init(const DenoiserConfig& cfg, std::uint64_t seed) {
    if (cfg.emb_dim % 2 != 0) throw std::invalid_argument("emb_dim must be even");
    Rng rng(derive_seed(seed, 0xde401eULL));
    DenoiserParams p;
    p.config = cfg;
    auto dense = [&](std::size_t in, std::size_t out, bool zero, const std::string& name) {
        Tensor w(in, out), b(1, out);
        if (!zero) {
            const double s = 1.0 / std::sqrt(static_cast<double>(in));
            for (double& v : w.data) v = s * rng.normal();
        }
        p.weights.push_back(ad::make_param(std::move(w), name + ".w"));
        p.weights.push_back(ad::make_param(std::move(b), name + ".b"));
    };
    dense(cfg.input_width(), cfg.width, false, "denoiser.in");
    for (std::size_t i = 1; i < cfg.depth; ++i)
        dense(cfg.width, cfg.width, false, "denoiser.h" + std::to_string(i));
    // Zero-initialized head: the untrained model predicts zero noise.
    dense(cfg.width, cfg.dim, true, "denoiser.out");
    return p;
}

DenoiserParams DenoiserParams::clone() const {
    DenoiserParams c;
    c.config = config;
    c.weights.reserve(weights.size());
    for (const auto& w : weights) c.weights.push_back(ad::make_param(w->value, w->name));
    return c;
}

Tensor predict_noise(const DenoiserParams& params, const Tensor& z_t,
                     const std::vector<double>& gamma_t) {
    const DenoiserConfig& cfg = params.config;
    if (z_t.cols != cfg.dim)
        throw std::invalid_argument("predict_noise: z has " + std::to_string(z_t.cols) +
                                    " columns, expected " + std::to_string(cfg.dim));
    if (z_t.rows != gamma_t.size())
        throw std::invalid_argument("predict_noise: batch size mismatch");
    const Tensor ff = fourier_features(z_t, cfg.fourier);
    const Tensor emb = gamma_embedding(gamma_t, cfg);
    Tensor input(z_t.rows, cfg.input_width());
    for (std::size_t r = 0; r < z_t.rows; ++r) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < z_t.cols; ++j) input(r, c++) = z_t(r, j);
        for (std::size_t j = 0; j < ff.cols; ++j) input(r, c++) = ff(r, j);
        for (std::size_t j = 0; j < emb.cols; ++j) input(r, c++) = emb(r, j);
    }

    auto affine = [&](const Tensor& h, std::size_t layer, Tensor& out) {
        matmul(h, params.weights[2 * layer]->value, out);
        const Tensor& b = params.weights[2 * layer + 1]->value;
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t j = 0; j < out.cols; ++j) out(r, j) += b.data[j];
    };
    auto silu_inplace = [](Tensor& h) {
        for (double& v : h.data) v = v * stable_sigmoid(v);
    };

    Tensor h;
    affine(input, 0, h);
    silu_inplace(h);
    Tensor tmp;
    for (std::size_t layer = 1; layer < cfg.depth; ++layer) {
        affine(h, layer, tmp);
        silu_inplace(tmp);
        for (std::size_t i = 0; i < h.size(); ++i) h.data[i] += tmp.data[i];
    }
    Tensor out;
    affine(h, cfg.depth, out);
    return out;
}

std::vector<double> predict_noise(const DenoiserParams& params, const std::vector<double>& z_t,
                                  double gamma_t) {
    Tensor z(1, z_t.size());
    z.data = z_t;
    Tensor out = predict_noise(params, z, {gamma_t});
    return out.data;
}

ad::NodeRef build_predict_noise(ad::Graph& g, const DenoiserParams& params, ad::NodeRef z_node,
                                ad::NodeRef gamma_node) {
    using ad::NodeRef;
    const DenoiserConfig& cfg = params.config;
    if (g.node_cols(z_node) != cfg.dim)
        throw std::invalid_argument("build_predict_noise: z width mismatch");

    std::vector<NodeRef> pieces;
    pieces.push_back(z_node);
    for (int n = cfg.fourier.n_min; n <= cfg.fourier.n_max; ++n) {
        const double f = std::ldexp(1.0, n) * kPi;
        pieces.push_back(g.sin(g.scale(z_node, f)));
        pieces.push_back(g.cos(g.scale(z_node, f)));
    }
    NodeRef gn = g.scale(g.sub(gamma_node, g.constant(cfg.gamma_lo)),
                         1.0 / (cfg.gamma_hi - cfg.gamma_lo));
    const std::size_t m = cfg.emb_dim / 2;
    Tensor freqs(1, m);
    for (std::size_t j = 0; j < m; ++j)
        freqs.data[j] = 2.0 * kPi * std::ldexp(1.0, static_cast<int>(j));
    NodeRef phase = g.mul(gn, g.constant(freqs));  // (k,1)x(1,m) -> (k,m)
    pieces.push_back(g.sin(phase));
    pieces.push_back(g.cos(phase));
    NodeRef input = g.concat_cols(pieces);

    auto affine = [&](NodeRef h, std::size_t layer) {
        return g.add(g.matmul(h, g.param(params.weights[2 * layer])),
                     g.param(params.weights[2 * layer + 1]));
    };
    NodeRef h = g.silu(affine(input, 0));
    for (std::size_t layer = 1; layer < cfg.depth; ++layer)
        h = g.add(h, g.silu(affine(h, layer)));
    return affine(h, cfg.depth);
}

std::vector<double> eps_to_x(const std::vector<double>& z_t, const std::vector<double>& eps_hat,
                             const DiffusionCoeffs& coeffs) {
    if (z_t.size() != eps_hat.size()) throw std::invalid_argument("eps_to_x shape mismatch");
    const double a = std::sqrt(coeffs.alpha_sq);
    const double s = std::sqrt(coeffs.sigma_sq);
    std::vector<double> x(z_t.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (z_t[i] - s * eps_hat[i]) / a;
    return x;
}

std::vector<double> eps_to_score(const std::vector<double>& z_t,
                                 const std::vector<double>& eps_hat,
                                 const DiffusionCoeffs& coeffs) {
    (void)z_t;
    if (z_t.size() != eps_hat.size()) throw std::invalid_argument("eps_to_score shape mismatch");
    if (coeffs.sigma_sq <= 0.0) throw std::domain_error("eps_to_score: sigma_sq must be positive");
    const double s = std::sqrt(coeffs.sigma_sq);
    std::vector<double> score(eps_hat.size());
    for (std::size_t i = 0; i < score.size(); ++i) score[i] = -eps_hat[i] / s;
    return score;
}

}  // namespace vdm
