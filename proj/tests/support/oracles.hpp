// Independent reference computations used only by tests.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

namespace oracle {

struct GaussHermite {
    std::vector<double> nodes, weights;
};

/// Golub-Welsch nodes and weights for int exp(-t^2) f(t) dt.
inline GaussHermite gauss_hermite(int n) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    GaussHermite g;
    for (int i = 0; i < n; ++i) {
        g.nodes.push_back(es.eigenvalues()[i]);
        double v0 = es.eigenvectors()(0, i);
        g.weights.push_back(std::sqrt(M_PI) * v0 * v0);
    }
    return g;
}

/// Tensor Gauss-Hermite average of f(v) against rho(v)^2 = (C h)^{-d'/2} exp(-2|Sigma v|^2/h),
/// with C the paper's closed-form constant (pi/2) det(Sigma^{-1})^{2/d'}.
inline double rho2_average(const Eigen::MatrixXd& Sigma, double h, const std::function<double(const Eigen::VectorXd&)>& f, int n = 64) {
    static thread_local GaussHermite gh;
    if (static_cast<int>(gh.nodes.size()) != n) gh = gauss_hermite(n);
    int dp = static_cast<int>(Sigma.rows());
    Eigen::MatrixXd Si = Sigma.inverse();
    double C = 0.5 * M_PI * std::pow(std::abs(Si.determinant()), 2.0 / dp);
    double pref = std::pow(C * h, -dp / 2.0) * std::pow(h / 2.0, dp / 2.0) * std::abs(Si.determinant());
    std::vector<int> idx(dp, 0);
    double s = 0.0;
    while (true) {
        Eigen::VectorXd t(dp);
        double w = 1.0;
        for (int i = 0; i < dp; ++i) {
            t[i] = gh.nodes[idx[i]];
            w *= gh.weights[idx[i]];
        }
        Eigen::VectorXd v = std::sqrt(h / 2.0) * Si * t;
        s += w * f(v);
        int i = 0;
        while (i < dp && ++idx[i] == n) idx[i++] = 0;
        if (i == dp) break;
    }
    return pref * s;
}

/// Real roots of x^3 + p x + q = 0 (three real roots case) by the trigonometric formula, sorted.
inline std::vector<double> depressed_cubic_roots(double p, double q) {
    std::vector<double> r;
    double disc = -(4 * p * p * p + 27 * q * q);
    if (disc > 0) {
        double m = 2.0 * std::sqrt(-p / 3.0);
        double th = std::acos(3.0 * q / (p * m)) / 3.0;
        for (int k = 0; k < 3; ++k) r.push_back(m * std::cos(th - 2.0 * M_PI * k / 3.0));
    } else {
        double s = std::sqrt(q * q / 4 + p * p * p / 27);
        r.push_back(std::cbrt(-q / 2 + s) + std::cbrt(-q / 2 - s));
    }
    std::sort(r.begin(), r.end());
    return r;
}

/// Brute-force barrier on a uniform lattice: minimax (bottleneck) path value from the start node to any node
/// with value strictly below `below`, over 2d-neighbor moves. Returns +inf when no such node is reachable.
inline double bottleneck_barrier(const std::vector<double>& values, int dim, int n, std::size_t start, double below) {
    std::size_t N = values.size();
    std::vector<double> best(N, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    best[start] = values[start];
    pq.push({values[start], start});
    while (!pq.empty()) {
        auto [b, id] = pq.top();
        pq.pop();
        if (b > best[id]) continue;
        if (values[id] < below) return b;
        std::size_t stride = 1, rest = id;
        for (int ax = 0; ax < dim; ++ax) {
            int k = static_cast<int>(rest % n);
            rest /= n;
            for (int dir : {-1, 1}) {
                if ((dir < 0 && k == 0) || (dir > 0 && k == n - 1)) continue;
                std::size_t nb = dir < 0 ? id - stride : id + stride;
                double nbv = std::max(b, values[nb]);
                if (nbv < best[nb]) {
                    best[nb] = nbv;
                    pq.push({nbv, nb});
                }
            }
            stride *= n;
        }
    }
    return std::numeric_limits<double>::infinity();
}

/// Simpson quadrature on [a, b] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 2000) {
    double hh = (b - a) / n, s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * hh) * (i % 2 ? 4 : 2);
    return s * hh / 3;
}

}  // namespace oracle
