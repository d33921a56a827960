// Noise-prediction network eps_hat(z_t, gamma_t): an MLP over the latent, its
// Fourier features and a sinusoidal embedding of the rescaled gamma. Residual
// connections between the hidden layers, SiLU nonlinearity.
#pragma once

#include <cstdint>
#include <vector>

#include "vdm/autodiff.hpp"
#include "vdm/diffusion.hpp"

namespace vdm {

struct FourierConfig {
    int n_min = 7;
    int n_max = 8;
    int bands() const { return n_max - n_min + 1; }
};

struct DenoiserConfig {
    std::size_t dim = 64;  // data dimensionality d
    std::size_t width = 256;
    std::size_t depth = 4;      // hidden layers
    std::size_t emb_dim = 32;   // gamma embedding width (even)
    FourierConfig fourier;
    // gamma is rescaled to ~[0,1] with these constants before embedding.
    double gamma_lo = -10.0;
    double gamma_hi = 10.0;

    std::size_t input_width() const { return dim * (1 + 2 * fourier.bands()) + emb_dim; }
};

struct DenoiserParams {
    DenoiserConfig config;
    std::vector<ad::ParamPtr> weights;  // layer i: weights[2i] = W, weights[2i+1] = b

    static DenoiserParams init(const DenoiserConfig& cfg, std::uint64_t seed);
    std::vector<ad::ParamPtr> params() const { return weights; }
    // Deep value copy (for EMA shadows and snapshots).
    DenoiserParams clone() const;
};

// sin/cos channels sin(z 2^n pi), cos(z 2^n pi) for n in [n_min, n_max],
// n ascending, sin before cos. Input and output are row-major batches.
Tensor fourier_features(const Tensor& z, const FourierConfig& config);

// Plain forward pass; batch rows are independent.
Tensor predict_noise(const DenoiserParams& params, const Tensor& z_t,
                     const std::vector<double>& gamma_t);
std::vector<double> predict_noise(const DenoiserParams& params, const std::vector<double>& z_t,
                                  double gamma_t);

// Tape forward pass; identical arithmetic to the plain path. z_node is
// (k x d), gamma_node is (k x 1).
ad::NodeRef build_predict_noise(ad::Graph& g, const DenoiserParams& params, ad::NodeRef z_node,
                                ad::NodeRef gamma_node);

// x_hat = (z_t - sigma_t eps_hat) / alpha_t
std::vector<double> eps_to_x(const std::vector<double>& z_t, const std::vector<double>& eps_hat,
                             const DiffusionCoeffs& coeffs);

// score = -eps_hat / sigma_t
std::vector<double> eps_to_score(const std::vector<double>& z_t,
                                 const std::vector<double>& eps_hat,
                                 const DiffusionCoeffs& coeffs);

}  // namespace vdm
