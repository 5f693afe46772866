#include "lcf/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace lcf {

namespace {

void check_domain(const LossSample& s) {
    if (!(s.sigma >= 1.0)) throw std::domain_error("loss requires sigma >= 1");
}

} // namespace

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "gaussian") return LossKind::gaussian;
    if (name == "gaussian-star") return LossKind::gaussian_star;
    if (name == "laplacian") return LossKind::laplacian;
    if (name == "laplacian-star") return LossKind::laplacian_star;
    throw std::invalid_argument("unknown loss kind '" + name + "'");
}

std::string loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::gaussian: return "gaussian";
        case LossKind::gaussian_star: return "gaussian-star";
        case LossKind::laplacian: return "laplacian";
        case LossKind::laplacian_star: return "laplacian-star";
    }
    throw std::invalid_argument("unknown loss kind");
}

double loss_gaussian(const LossSample& s) {
    check_domain(s);
    const double r = s.d - s.d_star;
    return std::log(s.sigma) + r * r / (2.0 * s.sigma * s.sigma);
}

double loss_gaussian_star(const LossSample& s) {
    check_domain(s);
    const double r = std::fabs(s.d - s.d_star) + 1.0;
    return std::log(s.sigma) + r * r / (2.0 * s.sigma * s.sigma);
}

double loss_laplacian(const LossSample& s) {
    check_domain(s);
    return std::log(2.0 * s.sigma) + std::fabs(s.d - s.d_star) / s.sigma;
}

double loss_laplacian_star(const LossSample& s) {
    check_domain(s);
    return std::log(2.0 * s.sigma) + (std::fabs(s.d - s.d_star) + 1.0) / s.sigma;
}

double loss_value(LossKind kind, const LossSample& s) {
    switch (kind) {
        case LossKind::gaussian: return loss_gaussian(s);
        case LossKind::gaussian_star: return loss_gaussian_star(s);
        case LossKind::laplacian: return loss_laplacian(s);
        case LossKind::laplacian_star: return loss_laplacian_star(s);
    }
    throw std::invalid_argument("unknown loss kind");
}

double loss_grad_sigma(LossKind kind, const LossSample& s) {
    check_domain(s);
    const double sig = s.sigma;
    const double r = std::fabs(s.d - s.d_star);
    switch (kind) {
        case LossKind::gaussian: return 1.0 / sig - r * r / (sig * sig * sig);
        case LossKind::gaussian_star: {
            const double m = r + 1.0;
            return 1.0 / sig - m * m / (sig * sig * sig);
        }
        case LossKind::laplacian: return 1.0 / sig - r / (sig * sig);
        case LossKind::laplacian_star: return 1.0 / sig - (r + 1.0) / (sig * sig);
    }
    throw std::invalid_argument("unknown loss kind");
}

double loss_sigma_minimum(LossKind kind, const LossSample& s) {
    const double r = std::fabs(s.d - s.d_star);
    switch (kind) {
        case LossKind::gaussian:
        case LossKind::laplacian: return std::max(1.0, r);
        case LossKind::gaussian_star:
        case LossKind::laplacian_star: return r + 1.0;
    }
    throw std::invalid_argument("unknown loss kind");
}

std::optional<double> batch_loss(LossKind kind, const SparseDepthMap& depth,
                                 const ProxyLabelMap& proxy, const ConfidenceMap& sigma) {
    if (depth.width != proxy.width || depth.height != proxy.height ||
        depth.width != sigma.width || depth.height != sigma.height)
        throw std::invalid_argument("batch_loss: raster size mismatch");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < depth.depth.size(); ++i) {
        const bool dv = depth.depth[i] > 0.0;
        const bool pv = proxy.proxy[i] > 0.0;
        if (dv != pv)
            throw std::invalid_argument("batch_loss: proxy valid mask differs from depth mask");
        if (!dv) continue;
        sum += loss_value(kind, {depth.depth[i], proxy.proxy[i], sigma.sigma[i]});
        ++count;
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

} // namespace lcf
