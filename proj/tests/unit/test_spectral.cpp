#include <Eigen/Eigenvalues>
#include <cmath>

#include "doctest.h"
#include "kfp/spectral.hpp"

using namespace kfp;

namespace {
CoefficientSystem standard_1d(const PotentialSpec& V) {
    PresetParams p;
    p.V = V;
    p.Sigma = Mat::Constant(1, 1, std::sqrt(0.5));
    return preset("standard", p);
}

GridBox small_grid(const CoefficientSystem& sys, double h, int nx, int nv) {
    GridOptions o;
    o.nx = nx;
    o.nv = nv;
    return automatic_grid(sys, h, o);
}

double gap_function(double h) { return h / (2 + std::sqrt(2.0)); }
}  // namespace

TEST_CASE("discrete transport part is exactly antisymmetric") {
    auto sys = standard_1d(double_well(0.1));
    auto op = discretize_P(sys, 0.2, small_grid(sys, 0.2, 40, 20));
    SpMat skew = op.X + SpMat(op.X.transpose());
    CHECK(skew.norm() == 0.0);
    SpMat asym = op.N - SpMat(op.N.transpose());
    CHECK(asym.norm() == 0.0);
    CHECK(op.norm1 > 0);
}

TEST_CASE("sampled equilibrium is a near-kernel element and improves under refinement") {
    auto sys = standard_1d(double_well(0.1));
    double h = 0.2;
    double prev = 1.0;
    for (int n : {40, 80, 160}) {
        auto op = discretize_P(sys, h, small_grid(sys, h, n, n / 2));
        Vec e = equilibrium_vector(sys, op.grid, h);
        double r = (op.P * e).norm() / e.norm();
        CHECK(r < prev);
        prev = r;
    }
    CHECK(prev < 2e-3);
}

TEST_CASE("without transport the operator is symmetric with a near-zero ground state") {
    auto sys = standard_1d(double_well(0.1));
    sys.alpha[0] = Polynomial(sys.nvars());
    sys.beta[0] = Polynomial(sys.nvars());
    auto op = discretize_P(sys, 0.2, small_grid(sys, 0.2, 16, 32), {0.0});
    CHECK(op.X.nonZeros() == 0);
    Eigen::SelfAdjointEigenSolver<Mat> es{Mat(op.P)};
    CHECK(std::abs(es.eigenvalues()[0]) < 1e-10);
}

TEST_CASE("harmonic Witten Laplacian ladder") {
    Polynomial v(1);
    v.add_term({2}, 0.5);
    auto V = PotentialSpec::from_polynomial(v);
    double h = 0.1;
    SpMat W = discretize_witten(V, h, -3, 3, 600);
    CHECK((W - SpMat(W.transpose())).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Mat> es{Mat(W)};
    for (int n = 0; n < 4; ++n) CHECK(es.eigenvalues()[n] == doctest::Approx(2 * n * h).epsilon(1e-3).scale(1.0));
    CHECK(std::abs(es.eigenvalues()[0]) < 1e-12);
}

TEST_CASE("double-well Witten gap stays of order h") {
    double prev = 1.0;
    for (double h : {0.2, 0.1, 0.05}) {
        SpMat W = discretize_witten(double_well(0.1), h, -2.5, 2.5, 800);
        Eigen::SelfAdjointEigenSolver<Mat> es{Mat(W)};
        double split = es.eigenvalues()[1] / es.eigenvalues()[2];
        CHECK(split < prev);
        prev = split;
        CHECK(es.eigenvalues()[2] / h > 0.5);
    }
    CHECK(prev < 1e-3);
}

TEST_CASE("cluster count matches the number of minima") {
    double h = 0.1;
    auto dw = standard_1d(double_well(0.1));
    auto op = discretize_P(dw, h, small_grid(dw, h, 200, 100));
    auto sp = small_eigs(op.P, 6, gap_function(h) / 2);
    CHECK(sp.converged);
    CHECK(sp.cluster_size == 2);
    CHECK(std::abs(sp.eigenvalues[0]) < 1e-6);
    CHECK(sp.eigenvalues[1].real() > 0);
    CHECK(sp.gap > gap_function(h) / 2);
    for (double r : sp.residuals) CHECK(r <= 1e-8 * sp.norm);
    for (int i = 0; i < sp.eigenvalues.size(); ++i) CHECK(sp.eigenvalues[i].real() >= -1e-8 * sp.norm);

    auto sw = standard_1d(polynomial_1d({0.0, 0.0, 0.5, 0.0, 0.1}));
    auto op1 = discretize_P(sw, h, small_grid(sw, h, 120, 80));
    auto sp1 = small_eigs(op1.P, 5, gap_function(h) / 2);
    CHECK(sp1.cluster_size == 1);
}

TEST_CASE("resolvent probe") {
    double h = 0.2;
    auto sys = standard_1d(double_well(0.1));
    auto op = discretize_P(sys, h, small_grid(sys, h, 60, 40));
    double far = resolvent_norm(op.P, {-1.0, 0.0});
    CHECK(far <= 1.0);
    CHECK(far >= 0.5);
    auto sp = small_eigs(op.P, 4, gap_function(h) / 2);
    double pole = resolvent_norm(op.P, sp.eigenvalues[1]);
    CHECK(pole > 1e6);
}

TEST_CASE("semigroup keeps the equilibrium and returns to the projection") {
    double h = 0.2;
    auto sys = standard_1d(double_well(0.1));
    auto op = discretize_P(sys, h, small_grid(sys, h, 60, 40));
    Vec e = equilibrium_vector(sys, op.grid, h);
    auto tr = evolve(op.P, e, h, 1e-3, 10.0, e);
    for (double dist : tr.distance_to_limit) CHECK(dist < 2e-2);
    CHECK(tr.halvings == 0);

    Vec u0 = Vec::Zero(e.size());
    for (std::size_t id = 0; id < op.grid.size(); ++id)
        if (op.grid.point(id)[0] > 0.3) u0[id] = e[id];
    auto sp = small_eigs(op.P, 4, gap_function(h) / 2);
    double t_end = 50 * h / sp.eigenvalues[1].real();
    auto tr2 = evolve(op.P, u0, h, 1e-3, t_end, e, {}, 16);
    CHECK(tr2.distance_to_limit.front() > 0.5);
    CHECK(tr2.distance_to_limit.back() < 5e-2);
}

TEST_CASE("memory guard and coordinate export") {
    auto sys = standard_1d(double_well(0.1));
    GridBox g = small_grid(sys, 0.2, 10, 10);
    CHECK_THROWS_AS(discretize_P(sys, 0.2, g, {}, 50), std::length_error);
    SpMat A(2, 2);
    A.insert(0, 1) = 0.5;
    CHECK(to_coordinate_text(A) == "0 1 0.5\n");
}
