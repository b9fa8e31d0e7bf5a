#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "kfp/sde.hpp"

using namespace kfp;

namespace {
CoefficientSystem standard_1d(const PotentialSpec& V) {
    PresetParams p;
    p.V = V;
    p.Sigma = Mat::Constant(1, 1, std::sqrt(0.5));
    return preset("standard", p);
}

Vec one(double a) { return Vec::Constant(1, a); }

// Mass of exp(-2V/h) on x < 0 relative to the whole line, by the trapezoid rule.
double left_mass(const PotentialSpec& V, double h) {
    CompiledPolynomial p(V.poly);
    double left = 0, all = 0, dx = 1e-3;
    for (double x = -4; x <= 4; x += dx) {
        double w = std::exp(-2 * p(&x) / h);
        all += w;
        if (x < 0) left += w;
    }
    return left / all;
}
}  // namespace

TEST_CASE("config validation") {
    SdeConfig c;
    c.h = 0.1;
    c.dt = 0.1 / 50;
    CHECK_NOTHROW(c.validate());
    c.dt = 0.01;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.h = 0;
    c.dt = 0.02;
    CHECK_NOTHROW(c.validate());
    c.scheme = "milstein";
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("ensembles are reproducible across thread counts") {
    auto sys = standard_1d(double_well(0.1));
    SdeConfig c;
    c.h = 0.2;
    c.dt = 0.004;
    c.T_max = 2;
    c.n_traj = 7;
    c.seed = 42;
    auto a = simulate_ensemble(sys, c, one(0.9), one(0));
    c.threads = 3;
    auto b = simulate_ensemble(sys, c, one(0.9), one(0));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x[0] == b[i].x[0]);
        CHECK(a[i].v[0] == b[i].v[0]);
    }
    CHECK(a[0].x[0] != a[1].x[0]);
    CHECK(stream_seed(42, 0) != stream_seed(42, 1));
    CHECK(stream_seed(42, 0) != stream_seed(43, 0));
}

TEST_CASE("noise-free flow does not increase f") {
    auto sys = standard_1d(double_well(0.1));
    SdeConfig c;
    c.h = 0;
    c.dt = 1e-3;
    c.T_max = 20;
    c.record_every = 10;
    auto tr = simulate(sys, c, one(1.8), one(0.7));
    // Explicit Euler adds an O(dt) energy error per unit time on top of the exact dissipation.
    double f0 = eval_f(sys, tr.states[0].head(1), tr.states[0].tail(1));
    double prev = f0, worst = 0.0;
    for (const auto& s : tr.states) {
        double f = eval_f(sys, s.head(1), s.tail(1));
        worst = std::max(worst, f - prev);
        prev = f;
    }
    CHECK(worst < c.dt);
    CHECK(prev < f0 - 1.0);
    CHECK(tr.steps == 20000);
}

TEST_CASE("quadratic well samples the invariant density") {
    auto sys = standard_1d(polynomial_1d({0.0, 0.0, 0.5}));
    SdeConfig c;
    c.h = 0.5;
    c.dt = 0.01;
    c.T_max = 500;
    c.n_traj = 40;
    c.record_every = 10;
    auto runs = simulate_ensemble(sys, c, one(0), one(0));
    double m2 = 0;
    long n = 0;
    for (const auto& r : runs)
        for (std::size_t k = 0; k < r.states.size(); ++k)
            if (r.t[k] >= 10) {
                m2 += r.states[k][0] * r.states[k][0];
                ++n;
            }
    // exp(-2V/h) with V = x^2/2 has variance h/2.
    CHECK(m2 / n == doctest::Approx(c.h / 2).epsilon(0.1));
    auto rep = invariant_histogram(sys, c.h, runs, Vec::Constant(2, -2.5), Vec::Constant(2, 2.5), 10, 10);
    CHECK(rep.tv <= 0.05);
    CHECK(rep.outside_fraction < 1e-3);

    c.T_max = 0.05;
    c.n_traj = 20;
    c.record_every = 1;
    auto early = simulate_ensemble(sys, c, one(2), one(0));
    CHECK(invariant_histogram(sys, c.h, early, Vec::Constant(2, -2.5), Vec::Constant(2, 2.5), 10).tv > 0.8);
}

TEST_CASE("double-well populations match quadrature") {
    auto V = double_well(0.1);
    auto sys = standard_1d(V);
    SdeConfig c;
    c.h = 0.3;
    c.dt = 0.006;
    c.T_max = 600;
    c.n_traj = 40;
    c.record_every = 5;
    auto runs = simulate_ensemble(sys, c, one(0), one(0));
    long left = 0, n = 0;
    for (const auto& r : runs)
        for (std::size_t k = 0; k < r.states.size(); ++k)
            if (r.t[k] >= 20) {
                left += r.states[k][0] < 0;
                ++n;
            }
    CHECK(static_cast<double>(left) / n == doctest::Approx(left_mass(V, c.h)).epsilon(0.05));
}

TEST_CASE("escape times and the global minimum") {
    auto sys = standard_1d(double_well(0.1));
    Box box = Box::cube(1, -3, 3, 201);
    auto lab = analyze_landscape(sys.V, box);
    SdeConfig c;
    c.h = 0.3;
    c.dt = 0.006;
    c.T_max = 400;
    c.n_traj = 30;
    auto st = mfpt(sys, c, lab, 1, box);
    REQUIRE(st.targets.size() == 1);
    CHECK(st.targets[0] == lab.minima[0]);
    CHECK(st.escapes > 0);
    CHECK(st.escapes + st.censored + st.aborted == c.n_traj);
    CHECK(st.mean == doctest::Approx(1 / st.rate));
    auto j = nlohmann::json::parse(st.to_json());
    CHECK(j["escapes"] == st.escapes);

    auto g = mfpt(sys, c, lab, 0, box);
    CHECK(g.escapes == 0);
    CHECK(g.censored == c.n_traj);
    CHECK(g.note.find("no lower well") != std::string::npos);
    CHECK(nlohmann::json::parse(g.to_json())["mean"].is_null());
}

TEST_CASE("blow-up aborts with a diagnostic") {
    // V = -x^4 is not confining; the trajectory leaves every bounded set.
    auto sys = standard_1d(polynomial_1d({0.0, 0.0, 0.0, 0.0, -1.0}));
    SdeConfig c;
    c.h = 0.1;
    c.dt = 0.002;
    c.T_max = 100;
    auto tr = simulate(sys, c, one(2), one(0));
    CHECK(tr.aborted);
    CHECK(tr.abort_step > 0);
    CHECK_FALSE(tr.reason.empty());
}
