#pragma once

#include <optional>
#include <string>

#include "lcf/depthio.hpp"
#include "lcf/geometry.hpp"

namespace lcf {

// One depth measurement with its proxy target and predicted uncertainty.
struct LossSample {
    double d = 0.0;      // measured depth, meters
    double d_star = 0.0; // proxy depth, meters
    double sigma = 1.0;  // uncertainty scale, >= 1
};

enum class LossKind { gaussian, gaussian_star, laplacian, laplacian_star };

LossKind loss_kind_from_name(const std::string& name);
std::string loss_kind_name(LossKind kind);

// Gaussian negative log-likelihood, constant dropped:
//   ln(sigma) + (d - d*)^2 / (2 sigma^2)
double loss_gaussian(const LossSample& s);

// Stabilized form with the residual shifted so the unconstrained minimizer
// sigma = |d - d*| + 1 lies inside the sigma >= 1 domain:
//   ln(sigma) + (|d - d*| + 1)^2 / (2 sigma^2)
double loss_gaussian_star(const LossSample& s);

// Laplacian counterparts (sigma plays the Laplace scale):
//   ln(2 sigma) + |d - d*| / sigma    and    ln(2 sigma) + (|d - d*| + 1) / sigma
double loss_laplacian(const LossSample& s);
double loss_laplacian_star(const LossSample& s);

double loss_value(LossKind kind, const LossSample& s);

// Closed-form d(loss)/d(sigma) for each kind.
double loss_grad_sigma(LossKind kind, const LossSample& s);

// sigma value minimizing the loss over sigma in [1, inf).
double loss_sigma_minimum(LossKind kind, const LossSample& s);

// Mean per-pixel loss over valid pixels. Requires the proxy valid mask to
// equal the depth valid mask; returns nullopt when there is no valid pixel.
std::optional<double> batch_loss(LossKind kind, const SparseDepthMap& depth,
                                 const ProxyLabelMap& proxy, const ConfidenceMap& sigma);

} // namespace lcf
