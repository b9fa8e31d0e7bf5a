#include <cmath>

#include "doctest.h"
#include "kfp/hypo.hpp"
#include "support/oracles.hpp"

using namespace kfp;

namespace {
PresetParams params_1d(double sigma) {
    PresetParams p;
    p.V = double_well(0.1);
    p.Sigma = Mat::Constant(1, 1, sigma);
    return p;
}
}  // namespace

TEST_CASE("Gaussian moments match quadrature") {
    Mat Sigma(2, 2);
    Sigma << 1.0, 0.4, -0.2, 0.7;
    double h = 0.3;
    // The normalization: the zeroth moment of rho^2 is one.
    CHECK(oracle::rho2_average(Sigma, h, [](const Vec&) { return 1.0; }, 40) == doctest::Approx(1.0).epsilon(1e-12));
    for (MultiIndex g : {MultiIndex{0, 0}, MultiIndex{2, 0}, MultiIndex{1, 1}, MultiIndex{4, 2}, MultiIndex{3, 3}, MultiIndex{8, 0},
                         MultiIndex{2, 1}}) {
        double ref = oracle::rho2_average(
            Sigma, h, [&](const Vec& v) { return std::pow(v[0], g[0]) * std::pow(v[1], g[1]); }, 40);
        CHECK(std::abs(gaussian_moment(Sigma, h, g) - ref) <= 1e-10 * (1e-4 + std::abs(ref)));
    }
    CHECK_THROWS(gaussian_moment(Sigma, h, {6, 4}));
    CHECK_THROWS(gaussian_moment(Sigma, -1.0, {2, 0}));
}

TEST_CASE("Gaussian constant closed form") {
    Mat Sigma = Mat::Identity(3, 3) * 2.0;
    // det(Sigma^{-1})^{2/3} = 1/4
    CHECK(gaussian_constant(Sigma) == doctest::Approx(M_PI / 8));
}

TEST_CASE("moments scale as h^{|gamma|/2}") {
    Mat Sigma = Mat::Constant(1, 1, 0.8);
    for (int k : {2, 4, 6, 8}) {
        double r = gaussian_moment(Sigma, 0.2, {k}) / gaussian_moment(Sigma, 0.1, {k});
        CHECK(r == doctest::Approx(std::pow(2.0, k / 2.0)));
    }
}

TEST_CASE("G for the standard preset is h S") {
    PresetParams p;
    Polynomial V(2);
    V.add_term({2, 0}, 1.0);
    V.add_term({0, 4}, 0.25);
    p.V = PotentialSpec::from_polynomial(V);
    p.Sigma = (Mat(2, 2) << 1.0, 0.3, 0.0, 0.6).finished();
    auto sys = preset("standard", p);
    auto G = compute_G(sys);
    Vec x = Vec::Constant(2, 0.4);
    Mat expect = 0.05 * sys.S();
    CHECK((G.eval(x, 0.05) - expect).norm() < 1e-14);
}

TEST_CASE("standard preset gap with S = 1/2") {
    auto sys = preset("standard", params_1d(std::sqrt(0.5)));
    auto R = hypo_report(sys, Box::cube(1, -3, 3, 31), default_h_grid());
    CHECK(R.all_pass());
    CHECK(R.bounds.g1.p == 1.0);
    CHECK(R.bounds.g1.c == doctest::Approx(0.5));
    CHECK(R.bounds.g2.c == doctest::Approx(0.5));
    for (double h : default_h_grid()) CHECK(R.gap(h) == doctest::Approx(h / (2 + std::sqrt(2.0))));
    CHECK(R.centering.pass);
    CHECK(R.hypocoer_ii.pass);
}

TEST_CASE("adaptive preset gap") {
    auto sys = preset("adaptive", params_1d(1.0));
    auto R = hypo_report(sys, Box::cube(2, -2, 2, 9), default_h_grid());
    CHECK(R.bounds.psd.pass);
    CHECK(R.bounds.g1.p == 2.0);
    CHECK(R.bounds.g2.p == 1.0);
    for (double h : default_h_grid())
        CHECK(R.gap(h) == doctest::Approx(h / (1 + 8 / (h * h * h) + std::sqrt(2.0 / h))).epsilon(1e-6));
    CHECK(R.gap_fit.p == 4.0);
    CHECK(R.centering.pass);
}

TEST_CASE("rescaled preset G is h g^2 S") {
    auto p = params_1d(std::sqrt(0.5));
    p.g = Polynomial(1);
    p.g->add_term({0}, 2.0);
    p.g->add_term({2}, 0.5);
    p.g_box = Box::cube(1, -3, 3, 13);
    auto sys = preset("rescaled", p);
    auto G = compute_G(sys);
    for (double x : {-1.0, 0.0, 0.7}) {
        double g = 2.0 + 0.5 * x * x;
        CHECK(G.eval(Vec::Constant(1, x), 0.1)(0, 0) == doctest::Approx(0.1 * g * g * 0.5));
    }
    auto R = hypo_report(sys, Box::cube(1, -3, 3, 31), default_h_grid());
    CHECK(R.bounds.g1.p == 1.0);
    CHECK(R.bounds.g1.c == doctest::Approx(0.5 * 4.0));
}

TEST_CASE("centering failure is reported") {
    auto sys = preset("standard", params_1d(1.0));
    sys.alpha[0] += Polynomial::constant(sys.nvars(), 0.2);
    auto v = check_centering(sys, 0.1, {Vec::Zero(1)});
    CHECK_FALSE(v.pass);
    CHECK(v.value == doctest::Approx(0.2));
}

TEST_CASE("degenerate G is a hard failure") {
    auto sys = preset("standard", params_1d(1.0));
    sys.alpha[0] = Polynomial(sys.nvars());
    auto R = hypo_report(sys, Box::cube(1, -1, 1, 5), default_h_grid());
    CHECK_FALSE(R.bounds.psd.pass);
    CHECK_FALSE(R.all_pass());
}

TEST_CASE("monomial fit rounds the exponent to a quarter") {
    std::vector<double> h = default_h_grid(), y;
    for (double t : h) y.push_back(3.0 * std::pow(t, 1.26));
    auto f = fit_monomial(h, y);
    CHECK(f.raw_p == doctest::Approx(1.26));
    CHECK(f.p == 1.25);
    CHECK_THROWS(fit_monomial({0.1}, {1.0}));
}
