#include "kfp/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "kfp/landscape.hpp"

namespace kfp {

using Triplets = std::vector<Eigen::Triplet<double>>;

std::size_t GridBox::size() const {
    std::size_t n = 1;
    for (int k : nodes) n *= static_cast<std::size_t>(k);
    return n;
}

std::size_t GridBox::stride(int axis) const {
    std::size_t s = 1;
    for (int k = 0; k < axis; ++k) s *= static_cast<std::size_t>(nodes[k]);
    return s;
}

Vec GridBox::point(std::size_t id) const {
    Vec p(d + dp);
    for (int a = 0; a < d + dp; ++a) {
        p[a] = coordinate(a, static_cast<int>(id % nodes[a]));
        id /= nodes[a];
    }
    return p;
}

double GridBox::cell_volume() const {
    double w = 1.0;
    for (int a = 0; a < d + dp; ++a) w *= spacing(a);
    return w;
}

namespace {

double min_on_cube_surface(const PotentialSpec& V, const Vec& c, double r, int per_axis) {
    int d = V.d;
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> idx(d, 0);
    std::size_t total = 1;
    for (int k = 0; k < d; ++k) total *= per_axis;
    for (std::size_t t = 0; t < total; ++t) {
        std::size_t q = t;
        bool face = false;
        Vec x(d);
        for (int k = 0; k < d; ++k) {
            int i = static_cast<int>(q % per_axis);
            q /= per_axis;
            face = face || i == 0 || i == per_axis - 1;
            x[k] = c[k] - r + 2 * r * i / (per_axis - 1);
        }
        if (face) best = std::min(best, V.value(x));
    }
    return best;
}

double max_abs_col_sum(const SpMat& A) {
    double m = 0.0;
    for (int k = 0; k < A.outerSize(); ++k) {
        double s = 0.0;
        for (SpMat::InnerIterator it(A, k); it; ++it) s += std::abs(it.value());
        m = std::max(m, s);
    }
    return m;
}

// Exponentially fitted difference along one axis for the weight exp(-phi/h):
// (D u)_edge = (h/D)(exp(dphi/2h) u_b - exp(-dphi/2h) u_a). Ghost nodes outside the grid carry u = 0.
// Appends rows of D (one per edge, including the two boundary edges of every line) to `rows`.
void fitted_difference(const GridBox& g, int axis, const std::function<double(const Vec&)>& phi, double h, Triplets& rows, int& next_row) {
    const std::size_t N = g.size();
    const std::size_t st = g.stride(axis);
    const int n = g.nodes[axis];
    const double dx = g.spacing(axis);
    for (std::size_t id = 0; id < N; ++id) {
        int i = static_cast<int>((id / st) % n);
        if (i != 0) continue;
        // A line along `axis` starting at id; edges e = 0..n between ghost/node pairs.
        Vec p = g.point(id);
        std::vector<double> ph(n + 2);
        for (int k = -1; k <= n; ++k) {
            p[axis] = g.lo[axis] + (k + 1) * dx;
            ph[k + 1] = phi(p);
        }
        for (int e = 0; e <= n; ++e) {
            int a = e - 1, b = e;
            double dphi = (ph[b + 1] - ph[a + 1]) / (2 * h);
            int row = next_row++;
            if (b < n) rows.emplace_back(row, static_cast<int>(id + b * st), h / dx * std::exp(dphi));
            if (a >= 0) rows.emplace_back(row, static_cast<int>(id + a * st), -h / dx * std::exp(-dphi));
        }
    }
}

SpMat gram_of_rows(const Triplets& rows, int nrows, std::size_t ncols) {
    SpMat D(nrows, static_cast<int>(ncols));
    D.setFromTriplets(rows.begin(), rows.end());
    SpMat G = SpMat(D.transpose()) * D;
    // Symmetrize bitwise: the product is symmetric up to summation order.
    SpMat Gt = G.transpose();
    return SpMat(0.5 * (G + Gt));
}

}  // namespace

GridBox automatic_grid(const CoefficientSystem& sys, double h, const GridOptions& opt) {
    const PotentialSpec& V = sys.V;
    if (V.d != sys.d) throw std::invalid_argument("automatic_grid: potential dimension differs from d");
    CriticalSearchOptions so;
    so.seeds_per_axis = sys.d == 1 ? 81 : (sys.d == 2 ? 41 : 15);
    auto crit = find_critical_points(V, Box::cube(sys.d, -opt.search_radius, opt.search_radius, so.seeds_per_axis), so);
    if (crit.empty()) throw std::runtime_error("automatic_grid: no critical points in the search cube");
    double level = -std::numeric_limits<double>::infinity();
    Vec cmin = crit[0].location, cmax = crit[0].location;
    for (const auto& c : crit) {
        level = std::max(level, c.value);
        cmin = cmin.cwiseMin(c.location);
        cmax = cmax.cwiseMax(c.location);
    }
    level += opt.margin;

    GridBox g;
    g.d = sys.d;
    g.dp = sys.dp;
    g.lo.resize(sys.d + sys.dp);
    g.hi.resize(sys.d + sys.dp);
    const double step = 0.01;
    if (sys.d == 1) {
        double a = cmin[0], b = cmax[0];
        while (V.value(Vec::Constant(1, a)) < level) a -= step;
        while (V.value(Vec::Constant(1, b)) < level) b += step;
        g.lo[0] = a;
        g.hi[0] = b;
    } else {
        Vec c = 0.5 * (cmin + cmax);
        double r = 0.5 * (cmax - cmin).maxCoeff() + step;
        while (min_on_cube_surface(V, c, r, 41) < level) r += 2 * step;
        for (int k = 0; k < sys.d; ++k) {
            g.lo[k] = c[k] - r;
            g.hi[k] = c[k] + r;
        }
    }
    Mat S = sys.S();
    double w = std::max(3.0, std::sqrt(60 * h));
    for (int k = 0; k < sys.dp; ++k) {
        double half = w / std::sqrt(2 * S(k, k));
        g.lo[sys.d + k] = -half;
        g.hi[sys.d + k] = half;
    }
    g.nodes.assign(sys.d + sys.dp, opt.nv);
    for (int k = 0; k < sys.d; ++k) g.nodes[k] = opt.nx;
    if (g.size() > opt.max_unknowns)
        throw std::length_error("automatic_grid: " + std::to_string(g.size()) + " unknowns exceed the guard of " + std::to_string(opt.max_unknowns));
    return g;
}

OperatorMatrix discretize_P(const CoefficientSystem& sys, double h, const GridBox& grid, const DiscretizationOptions& opt, std::size_t max_unknowns) {
    if (sys.d + sys.dp > 3) throw std::invalid_argument("discretize_P: d + d' > 3 is not supported");
    if (grid.d != sys.d || grid.dp != sys.dp) throw std::invalid_argument("discretize_P: grid dimensions differ from the system");
    const std::size_t N = grid.size();
    // Rough LU footprint: fill grows like N^{3/2} in 2-D; report the nonzero estimate.
    if (N > max_unknowns) {
        double est = 16.0 * N * std::pow(static_cast<double>(N), sys.d + sys.dp >= 3 ? 2.0 / 3.0 : 0.5);
        throw std::length_error("discretize_P: " + std::to_string(N) + " unknowns exceed the guard of " + std::to_string(max_unknowns) +
                                " (estimated factor size " + std::to_string(est / 1e9) + " GB)");
    }
    const int dim = sys.d + sys.dp;
    OperatorMatrix out;
    out.grid = grid;
    out.h = h;

    // Coefficient fields at the nodes.
    std::vector<CompiledPolynomial> field;
    for (int i = 0; i < sys.d; ++i) field.emplace_back(sys.alpha[i]);
    for (int k = 0; k < sys.dp; ++k) field.emplace_back(sys.beta[k]);
    std::vector<std::vector<double>> gamma(dim, std::vector<double>(N));
    std::vector<double> gmul(N, 1.0);
    CompiledPolynomial gpoly(sys.noise_multiplier);
    std::vector<double> pt(sys.nvars());
    for (std::size_t id = 0; id < N; ++id) {
        Vec p = grid.point(id);
        for (int a = 0; a < dim; ++a) pt[a] = p[a];
        pt[dim] = h;
        for (int a = 0; a < dim; ++a) gamma[a][id] = field[a](pt.data());
        if (sys.has_noise_multiplier()) gmul[id] = gpoly(pt.data());
    }

    // Transport part: split form 1/2 (c h d + h d c) with central differences, assembled edge by edge.
    Triplets tx;
    for (int a = 0; a < dim; ++a) {
        const std::size_t st = grid.stride(a);
        const int n = grid.nodes[a];
        const double c0 = h / (4 * grid.spacing(a));
        for (std::size_t id = 0; id < N; ++id) {
            int i = static_cast<int>((id / st) % n);
            if (i + 1 >= n) continue;
            std::size_t jd = id + st;
            double c = c0 * (gamma[a][id] + gamma[a][jd]);
            if (c == 0.0) continue;
            tx.emplace_back(static_cast<int>(id), static_cast<int>(jd), c);
            tx.emplace_back(static_cast<int>(jd), static_cast<int>(id), -c);
        }
    }
    out.X.resize(static_cast<int>(N), static_cast<int>(N));
    out.X.setFromTriplets(tx.begin(), tx.end());

    // Velocity part: sum over v axes of D^T D for the weight exp(-|Sigma v|^2/h).
    Mat S = sys.S();
    auto phi_v = [&](const Vec& p) {
        Vec v = p.tail(sys.dp);
        return v.dot(S * v);
    };
    Triplets rows;
    int nrows = 0;
    for (int k = 0; k < sys.dp; ++k) fitted_difference(grid, sys.d + k, phi_v, h, rows, nrows);
    SpMat Nv = gram_of_rows(rows, nrows, N);
    if (sys.has_noise_multiplier()) {
        Eigen::VectorXd gv = Eigen::Map<Eigen::VectorXd>(gmul.data(), static_cast<Eigen::Index>(N));
        // g depends on x only, so diag(g) commutes with the velocity operator; split the factor to keep symmetry exact.
        Eigen::VectorXd sq = gv.cwiseSqrt();
        Nv = sq.asDiagonal() * Nv * sq.asDiagonal();
        SpMat Nt = Nv.transpose();
        Nv = SpMat(0.5 * (Nv + Nt));
    }

    // Fourth-order x-stabilization: eps (Q_x)^2 with Q_x the fitted Witten operator for exp(-V/h).
    SpMat Nx(static_cast<int>(N), static_cast<int>(N));
    if (opt.stabilization_factor > 0.0) {
        double dxmax = 0.0;
        for (int i = 0; i < sys.d; ++i) dxmax = std::max(dxmax, grid.spacing(i));
        out.stabilization = opt.stabilization_factor * std::pow(dxmax, 4) / (h * h * h);
        auto phi_x = [&](const Vec& p) { return sys.V.value(p.head(sys.d)); };
        for (int i = 0; i < sys.d; ++i) {
            Triplets rx;
            int nr = 0;
            fitted_difference(grid, i, phi_x, h, rx, nr);
            SpMat Q = gram_of_rows(rx, nr, N);
            SpMat Q2 = Q * Q;
            SpMat Q2t = Q2.transpose();
            Nx += out.stabilization * SpMat(0.5 * (Q2 + Q2t));
        }
    }
    out.N = Nv + Nx;
    out.P = out.X + out.N;
    out.norm1 = max_abs_col_sum(out.P);
    return out;
}

SpMat discretize_witten(const PotentialSpec& V, double h, double lo, double hi, int n) {
    if (V.d != 1) throw std::invalid_argument("discretize_witten: 1-D potentials only");
    GridBox g;
    g.d = 1;
    g.dp = 0;
    g.lo = Vec::Constant(1, lo);
    g.hi = Vec::Constant(1, hi);
    g.nodes = {n};
    Triplets rows;
    int nr = 0;
    fitted_difference(g, 0, [&](const Vec& p) { return V.value(p); }, h, rows, nr);
    return gram_of_rows(rows, nr, g.size());
}

Vec equilibrium_vector(const CoefficientSystem& sys, const GridBox& grid, double h) {
    const std::size_t N = grid.size();
    Vec f(N);
    for (std::size_t id = 0; id < N; ++id) {
        Vec p = grid.point(id);
        f[id] = eval_f(sys, p.head(sys.d), p.tail(sys.dp));
    }
    double fmin = f.minCoeff();
    return (-(f.array() - fmin) / h).exp().matrix();
}

SpectrumResult small_eigs(const SpMat& P, int k, double cluster_threshold, double tol, unsigned seed) {
    const Eigen::Index N = P.rows();
    if (k < 1 || k >= N) throw std::invalid_argument("small_eigs: k out of range");
    SpectrumResult res;
    res.norm = max_abs_col_sum(P);
    res.threshold = cluster_threshold;

    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    SpMat A = P;
    A.makeCompressed();
    lu.compute(A);
    if (lu.info() != Eigen::Success) {
        res.shift = 1e-14 * res.norm;
        SpMat I(N, N);
        I.setIdentity();
        A = P - res.shift * I;
        lu.compute(A);
        if (lu.info() != Eigen::Success) throw std::runtime_error("small_eigs: factorization failed after the singular shift");
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Vec start(N);
    for (Eigen::Index i = 0; i < N; ++i) start[i] = nd(rng);

    int m = std::max(2 * k + 10, 40);
    const int m_cap = 400;
    for (int attempt = 0; attempt < 6; ++attempt) {
        m = std::min<int>(m, static_cast<int>(N) - 1);
        Mat Vb(N, m + 1);
        Mat H = Mat::Zero(m + 1, m);
        Vb.col(0) = start / start.norm();
        int built = m;
        for (int j = 0; j < m; ++j) {
            Vec w = lu.solve(Vb.col(j));
            // Two passes of classical Gram-Schmidt.
            for (int pass = 0; pass < 2; ++pass) {
                Vec c = Vb.leftCols(j + 1).transpose() * w;
                w -= Vb.leftCols(j + 1) * c;
                H.col(j).head(j + 1) += c;
            }
            double beta = w.norm();
            H(j + 1, j) = beta;
            if (beta < 1e-300) {
                built = j + 1;
                break;
            }
            Vb.col(j + 1) = w / beta;
        }
        Eigen::EigenSolver<Mat> es(H.topLeftCorner(built, built));
        Eigen::VectorXcd theta = es.eigenvalues();
        Eigen::MatrixXcd Y = es.eigenvectors();
        std::vector<int> order(built);
        for (int i = 0; i < built; ++i) order[i] = i;
        auto lam = [&](int i) { return std::complex<double>(res.shift, 0.0) + 1.0 / theta[i]; };
        std::sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(lam(a)) < std::abs(lam(b)); });
        int kk = std::min(k, built);
        res.eigenvalues.resize(kk);
        res.eigenvectors.resize(N, kk);
        res.residuals.assign(kk, 0.0);
        bool ok = true;
        Vec next = Vec::Zero(N);
        for (int r = 0; r < kk; ++r) {
            int i = order[r];
            Eigen::VectorXcd u = Vb.leftCols(built).cast<std::complex<double>>() * Y.col(i);
            u /= u.norm();
            std::complex<double> l = lam(i);
            Eigen::VectorXcd Pu = P.cast<std::complex<double>>() * u;
            double rn = (Pu - l * u).norm();
            res.eigenvalues[r] = l;
            res.eigenvectors.col(r) = u;
            res.residuals[r] = rn;
            if (rn > tol * res.norm) ok = false;
            next += u.real() + u.imag();
        }
        res.krylov_dim = built;
        res.converged = ok;
        if (ok) break;
        if (attempt == 5) throw std::runtime_error("small_eigs: Arnoldi did not reach the residual target at Krylov dimension " + std::to_string(m));
        m = std::min(2 * m, m_cap);
        for (Eigen::Index i = 0; i < N; ++i) next[i] += 1e-3 * nd(rng) * next.norm() / std::sqrt(double(N));
        start = next;
    }
    res.cluster_size = 0;
    res.gap = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < res.eigenvalues.size(); ++i) {
        if (std::abs(res.eigenvalues[i]) <= cluster_threshold)
            ++res.cluster_size;
        else
            res.gap = std::min(res.gap, std::abs(res.eigenvalues[i].real()));
    }
    return res;
}

double resolvent_norm(const SpMat& P, std::complex<double> z, int iterations) {
    using CMat = Eigen::SparseMatrix<std::complex<double>>;
    const Eigen::Index N = P.rows();
    CMat I(N, N);
    I.setIdentity();
    CMat A = P.cast<std::complex<double>>() - z * I;
    CMat Ah = A.adjoint();
    A.makeCompressed();
    Ah.makeCompressed();
    Eigen::SparseLU<CMat, Eigen::COLAMDOrdering<int>> lu, luh;
    lu.compute(A);
    if (lu.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    luh.compute(Ah);
    if (luh.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    CVec x(N);
    for (Eigen::Index i = 0; i < N; ++i) x[i] = {nd(rng), nd(rng)};
    x /= x.norm();
    double est = 0.0;
    for (int it = 0; it < iterations; ++it) {
        CVec y = lu.solve(x);
        CVec w = luh.solve(y);
        double nw = w.norm();
        if (!std::isfinite(nw)) return std::numeric_limits<double>::infinity();
        double prev = est;
        est = std::sqrt(nw);
        x = w / nw;
        if (it > 3 && std::abs(est - prev) <= 1e-10 * est) break;
    }
    return est;
}

SemigroupTrace evolve(const SpMat& P, const Vec& u0, double h, double t_start, double t_end, const Vec& kernel, const std::vector<Vec>& observers,
                      int per_decade) {
    if (!(t_start > 0 && t_end > t_start)) throw std::invalid_argument("evolve: need 0 < t_start < t_end");
    const Eigen::Index N = P.rows();
    SemigroupTrace tr;
    tr.limit = kernel * (kernel.dot(u0) / kernel.squaredNorm());
    tr.projections.resize(observers.size());
    const double u0n = u0.norm();
    auto record = [&](double t, const Vec& u) {
        tr.times.push_back(t);
        tr.distance_to_limit.push_back((u - tr.limit).norm() / u0n);
        for (std::size_t i = 0; i < observers.size(); ++i) tr.projections[i].push_back(observers[i].dot(u));
    };
    const double ratio = std::pow(10.0, 1.0 / per_decade) - 1.0;
    const double dt0 = t_start * ratio;
    SpMat I(N, N);
    I.setIdentity();
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    double factored_dt = -1.0;
    auto factor = [&](double dt) {
        SpMat A = I + (dt / (2 * h)) * P;
        A.makeCompressed();
        lu.compute(A);
        if (lu.info() != Eigen::Success) throw std::runtime_error("evolve: factorization failed");
        factored_dt = dt;
    };
    Vec u = u0;
    double t = 0.0;
    record(0.0, u);
    while (t < t_end * (1 - 1e-12)) {
        int level = t < t_start ? 0 : static_cast<int>(std::floor(std::log2(t / t_start)));
        double dt = dt0 * std::ldexp(1.0, level);
        if (t + dt > t_end) dt = t_end - t;
        for (int halving = 0;; ++halving) {
            if (dt != factored_dt) factor(dt);
            Vec rhs = u - (dt / (2 * h)) * (P * u);
            Vec un = lu.solve(rhs);
            // The Cayley transform of an accretive matrix is a contraction; growth signals a lost step.
            if (un.norm() <= u.norm() * (1 + 1e-9) || halving >= 10) {
                u = un;
                t += dt;
                break;
            }
            dt *= 0.5;
            ++tr.halvings;
        }
        record(t, u);
    }
    tr.final_state = u;
    return tr;
}

std::string to_coordinate_text(const SpMat& A) {
    std::ostringstream os;
    os.precision(17);
    for (int k = 0; k < A.outerSize(); ++k)
        for (SpMat::InnerIterator it(A, k); it; ++it) os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
    return os.str();
}

}  // namespace kfp
