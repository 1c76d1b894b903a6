#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "trafficlm/error.hpp"
#include "trafficlm/rng.hpp"
#include "trafficlm/spectrum.hpp"

using namespace trafficlm;

namespace {

/// Inverse-CDF draws from p(x) ~ x^-alpha on [xmin, inf).
std::vector<double> pareto(double alpha, std::size_t n, std::uint64_t seed, double xmin = 1.0) {
    Rng rng(seed);
    std::vector<double> x(n);
    for (auto &v : x) v = xmin * std::pow(1.0 - rng.uniform(), -1.0 / (alpha - 1.0));
    return x;
}

/// Exhaustive fit: every distinct candidate xmin, MLE alpha, two-sided ECDF distance.
PowerLawFit brute_fit(std::vector<double> x, std::size_t min_tail) {
    std::sort(x.begin(), x.end());
    PowerLawFit best;
    best.ks_distance = INFINITY;
    for (std::size_t s = 0; s + min_tail <= x.size(); ++s) {
        if (s > 0 && x[s] == x[s - 1]) continue;
        const std::vector<double> tail(x.begin() + static_cast<long>(s), x.end());
        double log_sum = 0;
        for (double v : tail) log_sum += std::log(v / x[s]);
        if (log_sum <= 0) continue;
        const double alpha = 1 + static_cast<double>(tail.size()) / log_sum;
        double ks = 0;
        for (double v : tail) {
            const double model = 1 - std::pow(v / x[s], 1 - alpha);
            const auto below = std::lower_bound(tail.begin(), tail.end(), v) - tail.begin();
            const auto upto = std::upper_bound(tail.begin(), tail.end(), v) - tail.begin();
            const double n = static_cast<double>(tail.size());
            ks = std::max({ks, std::abs(static_cast<double>(below) / n - model), std::abs(static_cast<double>(upto) / n - model)});
        }
        if (ks < best.ks_distance) best = {alpha, x[s], ks, tail.size()};
    }
    return best;
}

}  // namespace

TEST_CASE("fit agrees with an exhaustive search") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto x = pareto(2.5, 300, seed);
        auto fit = fit_power_law(x, 5);
        auto ref = brute_fit(x, 5);
        CHECK(fit.xmin == ref.xmin);
        CHECK(fit.n_tail == ref.n_tail);
        CHECK(fit.alpha == doctest::Approx(ref.alpha).epsilon(1e-12));
        CHECK(fit.ks_distance == doctest::Approx(ref.ks_distance).epsilon(1e-9));
    }
}

TEST_CASE("Pareto exponents are recovered") {
    for (double alpha : {2.0, 2.5, 4.0}) {
        int hits = 0;
        for (std::uint64_t seed = 100; seed < 110; ++seed) {
            auto fit = fit_power_law(pareto(alpha, 1000, seed, 0.5), 5);
            CHECK(fit.alpha > 1.0);
            if (std::abs(fit.alpha - alpha) <= 0.1 * alpha) ++hits;
        }
        CAPTURE(alpha);
        CHECK(hits >= 8);
    }
}

TEST_CASE("fit failures") {
    CHECK_THROWS_AS(fit_power_law({1, 2, 3}, 5), FitFailed);
    CHECK_THROWS_AS(fit_power_law({0, 0, 0, 0, 0, 0}, 5), FitFailed);
    CHECK_THROWS_AS(fit_power_law(std::vector<double>(10, 2.0), 5), FitFailed);
}

TEST_CASE("identity weight gives a degenerate spectrum") {
    auto layer = layer_spectrum("eye", Eigen::MatrixXd::Identity(16, 16));
    CHECK(layer.degenerate);
    CHECK_FALSE(layer.fit.has_value());
    for (double e : layer.eigenvalues) CHECK(e == doctest::Approx(1.0 / 16));
}

TEST_CASE("correlation eigenvalues match squared singular values") {
    Rng rng(1);
    for (auto [r, c] : {std::pair{20, 7}, std::pair{6, 15}}) {
        Eigen::MatrixXd w(r, c);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
        auto ev = correlation_eigenvalues(w);
        const double n = std::max(r, c);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
        std::vector<double> sq;
        for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) sq.push_back(svd.singularValues()(i) * svd.singularValues()(i) / n);
        std::sort(sq.begin(), sq.end());
        REQUIRE(ev.size() == sq.size());
        for (std::size_t i = 0; i < ev.size(); ++i) CHECK(ev[i] == doctest::Approx(sq[i]).epsilon(1e-10));
        CHECK(ev.size() == static_cast<std::size_t>(std::min(r, c)));
    }
}

TEST_CASE("model spectrum covers every 2-D weight") {
    auto model = Classifier::build(test::toy_config(), 2);
    auto report = esd_alpha(model, 3);
    // word, position, token type; six per layer; pooler; classifier.
    CHECK(report.layers.size() == 3 + 6 * 2 + 2);
    for (const auto &l : report.layers) {
        CHECK(l.lambda_max > 0);
        for (double e : l.eigenvalues) CHECK(e >= -1e-9 * l.lambda_max);
        if (l.fit) CHECK(l.fit->alpha > 1.0);
        CHECK(l.eigenvalues.size() == std::min(l.rows, l.cols));
    }
    auto csv = report.to_csv();
    CHECK(csv.starts_with("layer,n_eigs,alpha,lambda_max\n"));
    CHECK(csv.find("encoder.layer.1.intermediate.dense.weight,8,") != std::string::npos);
}
