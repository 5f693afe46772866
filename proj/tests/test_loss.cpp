#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcf/loss.hpp"
#include "lcf/rng.hpp"

using namespace lcf;

namespace {

const LossKind kAllKinds[4] = {LossKind::gaussian, LossKind::gaussian_star,
                               LossKind::laplacian, LossKind::laplacian_star};

LossSample random_sample(Rng& rng) {
    return {rng.uniform(0.5, 50.0), rng.uniform(0.5, 50.0), rng.uniform(1.0, 30.0)};
}

} // namespace

TEST_CASE("gaussian loss values") {
    CHECK(loss_gaussian({5.0, 5.0, 1.0}) == 0.0);
    CHECK(loss_gaussian({5.0, 5.0, std::exp(1.0)}) == doctest::Approx(1.0));
    CHECK(loss_gaussian({5.0, 3.0, 2.0}) == doctest::Approx(std::log(2.0) + 0.5)); // ~1.1931
}

TEST_CASE("stabilized gaussian loss values") {
    CHECK(loss_gaussian_star({5.0, 5.0, 1.0}) == doctest::Approx(0.5));
    CHECK(loss_gaussian_star({5.0, 3.0, 3.0}) == doctest::Approx(std::log(3.0) + 0.5)); // ~1.5986
    CHECK(loss_gaussian_star({10.0, 9.0, 1.0}) == doctest::Approx(2.0));
}

TEST_CASE("laplacian loss values") {
    CHECK(loss_laplacian({5.0, 5.0, 1.0}) == doctest::Approx(std::log(2.0)));
    CHECK(loss_laplacian_star({5.0, 3.0, 3.0}) == doctest::Approx(std::log(6.0) + 1.0)); // ~2.7918
}

TEST_CASE("sigma below 1 is a domain error") {
    for (LossKind kind : kAllKinds) {
        CHECK_THROWS_AS(loss_value(kind, {5.0, 5.0, 0.999}), std::domain_error);
        CHECK_THROWS_AS(loss_grad_sigma(kind, {5.0, 5.0, 0.5}), std::domain_error);
    }
}

TEST_CASE("unknown loss kind is rejected") {
    CHECK_THROWS_AS(loss_value(static_cast<LossKind>(99), {5, 5, 1}), std::invalid_argument);
    CHECK_THROWS_AS(loss_kind_from_name("cauchy"), std::invalid_argument);
}

TEST_CASE("gradient roots sit at the analytic minima") {
    CHECK(loss_grad_sigma(LossKind::gaussian, {7.0, 3.0, 4.0}) == doctest::Approx(0.0));
    CHECK(loss_grad_sigma(LossKind::gaussian_star, {7.0, 3.0, 5.0}) == doctest::Approx(0.0));
    CHECK(loss_grad_sigma(LossKind::laplacian, {7.0, 3.0, 4.0}) == doctest::Approx(0.0));
    CHECK(loss_grad_sigma(LossKind::laplacian_star, {7.0, 3.0, 5.0}) == doctest::Approx(0.0));
    CHECK(loss_sigma_minimum(LossKind::gaussian_star, {5.0, 3.0, 1.0}) == 3.0);
    CHECK(loss_sigma_minimum(LossKind::laplacian_star, {5.0, 3.0, 1.0}) == 3.0);
}

TEST_CASE("closed-form sigma gradients match central finite differences") {
    Rng rng(17);
    const double h = 1e-5;
    for (int trial = 0; trial < 100; ++trial) {
        LossSample s = random_sample(rng);
        s.sigma = rng.uniform(1.1, 30.0); // keep sigma +- h inside the domain
        for (LossKind kind : kAllKinds) {
            LossSample hi = s, lo = s;
            hi.sigma += h;
            lo.sigma -= h;
            const double fd = (loss_value(kind, hi) - loss_value(kind, lo)) / (2 * h);
            const double an = loss_grad_sigma(kind, s);
            const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-8});
            CHECK(rel < 1e-6);
        }
    }
}

TEST_CASE("global minimum of the stabilized losses over a sigma grid") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const double d = rng.uniform(0.5, 60.0);
        const double dstar = std::max(0.1, d - rng.uniform(0.0, 50.0));
        const double expect = std::fabs(d - dstar) + 1.0;
        const int n = 10000;
        double best_sigma = 1.0, best = loss_gaussian_star({d, dstar, 1.0});
        const double step = 99.0 / (n - 1);
        for (int i = 1; i < n; ++i) {
            const double sigma = 1.0 + step * i;
            const double val = loss_gaussian_star({d, dstar, sigma});
            if (val < best) {
                best = val;
                best_sigma = sigma;
            }
        }
        CHECK(std::fabs(best_sigma - expect) <= step + 1e-12);
        // every grid point dominates the analytic minimum
        const double at_min = loss_gaussian_star({d, dstar, expect});
        CHECK(best >= at_min - 1e-12);
    }
}

TEST_CASE("regularizer vanishes at the sigma floor") {
    // ln(sigma) contributes 0 at sigma = 1 for every kind
    CHECK(loss_gaussian({4.0, 4.0, 1.0}) == 0.0);
    CHECK(loss_gaussian_star({4.0, 4.0, 1.0}) == 0.5);
    CHECK(loss_laplacian({4.0, 4.0, 1.0}) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("star dominance and monotone residual") {
    Rng rng(29);
    for (int trial = 0; trial < 200; ++trial) {
        const LossSample s = random_sample(rng);
        CHECK(loss_gaussian_star(s) >= loss_gaussian(s));
        CHECK(loss_laplacian_star(s) >= loss_laplacian(s));
        for (LossKind kind : kAllKinds) {
            LossSample wider = s;
            wider.d = s.d_star + (s.d - s.d_star) * 1.5; // same sign, larger |d - d*|
            CHECK(loss_value(kind, wider) >= loss_value(kind, s) - 1e-15);
        }
    }
}

TEST_CASE("batch loss reduces the mean over valid pixels") {
    SparseDepthMap depth(3, 1);
    depth.at(0, 0) = 5.0;
    depth.at(0, 2) = 10.0;
    ProxyLabelMap proxy;
    proxy.width = 3;
    proxy.height = 1;
    proxy.proxy = {3.0, 0.0, 9.0};
    ConfidenceMap sigma(3, 1);
    sigma.sigma = {2.0, 0.0, 1.5};

    const double a = loss_gaussian_star({5.0, 3.0, 2.0});
    const double b = loss_gaussian_star({10.0, 9.0, 1.5});
    const auto mean = batch_loss(LossKind::gaussian_star, depth, proxy, sigma);
    REQUIRE(mean.has_value());
    CHECK(*mean == doctest::Approx((a + b) / 2.0));

    SUBCASE("single pixel equals the per-pixel loss") {
        SparseDepthMap one(1, 1);
        one.at(0, 0) = 5.0;
        ProxyLabelMap p1;
        p1.width = p1.height = 1;
        p1.proxy = {3.0};
        ConfidenceMap s1(1, 1);
        s1.sigma = {2.0};
        CHECK(*batch_loss(LossKind::gaussian_star, one, p1, s1) == doctest::Approx(a));
    }

    SUBCASE("no valid pixels yields the skip signal") {
        SparseDepthMap none(2, 2);
        ProxyLabelMap pn;
        pn.width = pn.height = 2;
        pn.proxy.assign(4, 0.0);
        ConfidenceMap sn(2, 2);
        CHECK(!batch_loss(LossKind::gaussian_star, none, pn, sn).has_value());
    }

    SUBCASE("mask mismatch is an error") {
        proxy.proxy = {3.0, 1.0, 9.0}; // valid where depth is not
        CHECK_THROWS(batch_loss(LossKind::gaussian_star, depth, proxy, sigma));
    }
}

TEST_CASE("pixel order does not change the batch mean") {
    Rng rng(37);
    SparseDepthMap depth(16, 4);
    ProxyLabelMap proxy;
    proxy.width = 16;
    proxy.height = 4;
    proxy.proxy.assign(64, 0.0);
    ConfidenceMap sigma(16, 4);
    std::vector<LossSample> samples;
    for (std::size_t i = 0; i < 64; ++i)
        if (rng.uniform() < 0.6) {
            const LossSample s = random_sample(rng);
            depth.depth[i] = s.d;
            proxy.proxy[i] = s.d_star;
            sigma.sigma[i] = s.sigma;
            samples.push_back(s);
        }
    const auto mean = batch_loss(LossKind::laplacian_star, depth, proxy, sigma);
    REQUIRE(mean.has_value());

    // naive mean over the same samples in a different order
    double acc = 0.0;
    for (auto it = samples.rbegin(); it != samples.rend(); ++it)
        acc += loss_value(LossKind::laplacian_star, *it);
    CHECK(std::fabs(*mean - acc / static_cast<double>(samples.size())) < 1e-12);
}
