#include "kfp/wkb.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <boost/multiprecision/float128.hpp>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

namespace kfp {

using Q = boost::multiprecision::float128;
using QPoly = BasicPolynomial<Q>;

struct PreciseSeries {
    QPoly ell_full;  // every computed coefficient
    QPoly ell;       // stored to the caps
};

namespace {

int x_degree(const MultiIndex& m, int nX) {
    int s = 0;
    for (int i = 0; i < nX; ++i) s += m[i];
    return s;
}

// Dense Gaussian elimination with partial pivoting; A is row-major n x n.
template <class T>
std::vector<T> lu_solve(std::vector<T> A, std::vector<T> b, int n) {
    using std::abs;
    for (int c = 0; c < n; ++c) {
        int p = c;
        for (int r = c + 1; r < n; ++r)
            if (abs(A[r * n + c]) > abs(A[p * n + c])) p = r;
        if (A[p * n + c] == T(0)) throw WkbFailure("singular linear block in the series recursion");
        if (p != c) {
            for (int k = 0; k < n; ++k) std::swap(A[c * n + k], A[p * n + k]);
            std::swap(b[c], b[p]);
        }
        for (int r = c + 1; r < n; ++r) {
            T f = A[r * n + c] / A[c * n + c];
            if (f == T(0)) continue;
            for (int k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
            b[r] -= f * b[c];
        }
    }
    std::vector<T> x(n);
    for (int r = n - 1; r >= 0; --r) {
        T s = b[r];
        for (int k = r + 1; k < n; ++k) s -= A[r * n + k] * x[k];
        x[r] = s / A[r * n + r];
    }
    return x;
}

// The system recentered at the saddle, in quad precision.
struct Shifted {
    int d = 0, dp = 0, nX = 0, n = 0;
    std::vector<Q> s;
    std::vector<QPoly> alpha, beta, drift_v;  // drift_v = beta + 4 S v
    QPoly V;                                  // in x only
    Mat S;
    Q constant_drift = 0;                     // largest h^0 constant of the drift before clearing
    Q coefficient_scale = 1;
};

std::vector<Q> refine_critical(const Polynomial& V, const Vec& s0) {
    int d = V.nvars();
    QPoly Vq = V.cast<Q>();
    std::vector<QPoly> g(d);
    std::vector<std::vector<QPoly>> H(d, std::vector<QPoly>(d));
    for (int i = 0; i < d; ++i) {
        g[i] = Vq.diff(i);
        for (int j = 0; j < d; ++j) H[i][j] = g[i].diff(j);
    }
    std::vector<Q> x(d);
    for (int i = 0; i < d; ++i) x[i] = Q(s0[i]);
    for (int it = 0; it < 12; ++it) {
        std::vector<Q> r(d), A(d * d);
        Q gn = 0;
        for (int i = 0; i < d; ++i) {
            r[i] = -g[i].eval(x);
            gn += abs(r[i]);
            for (int j = 0; j < d; ++j) A[i * d + j] = H[i][j].eval(x);
        }
        if (gn == 0) break;
        std::vector<Q> dx;
        try {
            dx = lu_solve(A, r, d);
        } catch (const WkbFailure&) {
            break;  // degenerate Hessian: keep the double estimate
        }
        for (int i = 0; i < d; ++i) x[i] += dx[i];
    }
    return x;
}

Shifted shift_system(const CoefficientSystem& sys, const Vec& s) {
    if (sys.V.has_tail()) throw WkbFailure("series construction needs a polynomial potential");
    if (s.size() != sys.d) throw std::invalid_argument("wkb: saddle dimension must equal d");
    Shifted sh;
    sh.d = sys.d;
    sh.dp = sys.dp;
    sh.nX = sys.d + sys.dp;
    sh.n = sh.nX + 1;
    sh.S = sys.S();
    // V lives on the first V.d coordinates of x.
    Polynomial Vfull = sys.V.poly.embed(sys.d, [&] {
        std::vector<int> m(sys.V.d);
        for (int i = 0; i < sys.V.d; ++i) m[i] = i;
        return m;
    }());
    sh.s = refine_critical(Vfull, s);
    std::vector<Q> shift(sh.n, Q(0)), xs(sh.s);
    for (int i = 0; i < sh.d; ++i) shift[i] = sh.s[i];
    sh.V = Vfull.cast<Q>().shifted(xs);
    for (const auto& a : sys.alpha) sh.alpha.push_back(a.cast<Q>().shifted(shift));
    for (int k = 0; k < sh.dp; ++k) {
        QPoly b = sys.beta[k].cast<Q>().shifted(shift);
        sh.beta.push_back(b);
        QPoly dv = b;
        for (int l = 0; l < sh.dp; ++l)
            if (sh.S(k, l) != 0.0) dv += QPoly::variable(sh.n, sh.d + l, Q(4.0 * sh.S(k, l)));
        sh.drift_v.push_back(dv);
    }
    // Coefficients stored in double put the drift zero within rounding of the quad critical point: clear that constant.
    MultiIndex zero(sh.n, 0);
    for (const auto& a : sys.alpha)
        for (const auto& [m, c] : a.terms()) sh.coefficient_scale = std::max(sh.coefficient_scale, Q(std::abs(c)));
    for (const auto& b : sys.beta)
        for (const auto& [m, c] : b.terms()) sh.coefficient_scale = std::max(sh.coefficient_scale, Q(std::abs(c)));
    for (auto* list : {&sh.alpha, &sh.beta, &sh.drift_v})
        for (auto& p : *list) {
            Q c = p.coeff(zero);
            sh.constant_drift = std::max(sh.constant_drift, Q(abs(c)));
            if (abs(c) <= Q(1e-13) * sh.coefficient_scale) p.set_coeff(zero, Q(0));
        }
    return sh;
}

QPoly h0_part(const QPoly& p, int n) {
    return p.filtered([n](const MultiIndex& m) { return m[n - 1] == 0; });
}

// Jacobian at 0 of the h^0 drift (alpha^0, beta^0 + 4 S v) in phase variables.
std::vector<Q> drift_jacobian(const Shifted& sh) {
    int nX = sh.nX;
    std::vector<Q> J(nX * nX, Q(0));
    for (int r = 0; r < nX; ++r) {
        const QPoly& F = r < sh.d ? sh.alpha[r] : sh.drift_v[r - sh.d];
        for (int c = 0; c < nX; ++c) {
            MultiIndex e(sh.n, 0);
            e[c] = 1;
            J[r * nX + c] = F.coeff(e);
        }
    }
    return J;
}

void check_vanishing_drift(const Shifted& sh) {
    Q worst = sh.constant_drift;
    if (worst > Q(1e-13) * sh.coefficient_scale) {
        std::ostringstream os;
        os << "alpha^0 and beta^0 must vanish at the saddle (max " << static_cast<double>(worst) << ")";
        throw WkbFailure(os.str());
    }
}

// w = alpha.d_x ell + (beta + 4 S v).d_v ell + ell |d_v ell|^2 - h Lap_v ell, keeping monomials accepted by keep.
template <class Keep>
QPoly compute_w(const Shifted& sh, const QPoly& ell, Keep keep) {
    QPoly w(sh.n), grad2(sh.n), lap(sh.n);
    for (int i = 0; i < sh.d; ++i) w += sh.alpha[i].mul_truncated(ell.diff(i), keep);
    for (int k = 0; k < sh.dp; ++k) {
        QPoly dv = ell.diff(sh.d + k);
        w += sh.drift_v[k].mul_truncated(dv, keep);
        grad2 += dv.mul_truncated(dv, keep);
        lap += dv.diff(sh.d + k);
    }
    w += ell.mul_truncated(grad2, keep);
    w -= QPoly::variable(sh.n, sh.n - 1).mul_truncated(lap, keep);
    return w;
}

QPoly compute_w_full(const Shifted& sh, const QPoly& ell) {
    return compute_w(sh, ell, [](const MultiIndex&) { return true; });
}

auto block_keep(int nX, int j, int k) {
    return [nX, j, k](const MultiIndex& m) { return m[nX] <= j && x_degree(m, nX) <= k; };
}

MultiIndex with_h(const MultiIndex& X, int j) {
    MultiIndex m = X;
    m.push_back(j);
    return m;
}

struct QuadFrame {
    std::vector<Q> B;  // nX x nX, row-major
    Q mu;
    std::vector<Q> xi;
};

// Refines (xi, mu) in quad precision by Newton on the bordered system and assembles B = J + 2 [0; xi_v] xi^T.
QuadFrame quad_frame(const Shifted& sh, const SaddleFrame& frame) {
    int nX = sh.nX, N = nX + 1;
    std::vector<Q> J = drift_jacobian(sh);
    std::vector<Q> xi(nX), c(nX);
    for (int i = 0; i < nX; ++i) c[i] = xi[i] = Q(frame.xi[i]);
    Q mu = frame.mu;
    // Lambda = J^T; solve (J^T + mu) xi = 0 with c.xi = c.c.
    Q cc = 0;
    for (int i = 0; i < nX; ++i) cc += c[i] * c[i];
    for (int it = 0; it < 8; ++it) {
        std::vector<Q> A(N * N, Q(0)), r(N, Q(0));
        for (int i = 0; i < nX; ++i) {
            Q s = mu * xi[i];
            for (int k = 0; k < nX; ++k) {
                s += J[k * nX + i] * xi[k];
                A[i * N + k] = J[k * nX + i] + (i == k ? mu : Q(0));
            }
            A[i * N + nX] = xi[i];
            r[i] = -s;
            A[nX * N + i] = c[i];
        }
        Q cs = -cc;
        for (int i = 0; i < nX; ++i) cs += c[i] * xi[i];
        r[nX] = -cs;
        auto dx = lu_solve(A, r, N);
        for (int i = 0; i < nX; ++i) xi[i] += dx[i];
        mu += dx[nX];
    }
    Q nv = 0;
    for (int k = sh.d; k < nX; ++k) nv += xi[k] * xi[k];
    Q scale = sqrt(mu / nv);
    if (frame.xi.dot(frame.xi) > 0) {
        Q dot = 0;
        for (int i = 0; i < nX; ++i) dot += xi[i] * Q(frame.xi[i]);
        if (dot < 0) scale = -scale;
    }
    for (auto& x : xi) x *= scale;
    QuadFrame qf;
    qf.mu = mu;
    qf.xi = xi;
    qf.B = J;
    for (int k = sh.d; k < nX; ++k)
        for (int l = 0; l < nX; ++l) qf.B[k * nX + l] += 2 * xi[k] * xi[l];
    return qf;
}

std::map<MultiIndex, int> basis_index(const std::vector<MultiIndex>& basis) {
    std::map<MultiIndex, int> idx;
    for (int i = 0; i < static_cast<int>(basis.size()); ++i) idx[basis[i]] = i;
    return idx;
}

// (B X).grad + mu on degree-k monomials; column c is the image of basis[c].
template <class T>
std::vector<T> assemble_degree_operator(const std::vector<T>& B, T mu, int nX, const std::vector<MultiIndex>& basis) {
    int m = static_cast<int>(basis.size());
    auto idx = basis_index(basis);
    std::vector<T> L(m * m, T(0));
    for (int c = 0; c < m; ++c) {
        const MultiIndex& a = basis[c];
        L[c * m + c] += mu;
        for (int i = 0; i < nX; ++i) {
            if (a[i] == 0) continue;
            for (int l = 0; l < nX; ++l) {
                T coef = B[i * nX + l];
                if (coef == T(0)) continue;
                MultiIndex b = a;
                b[i] -= 1;
                b[l] += 1;
                L[idx.at(b) * m + c] += coef * T(a[i]);
            }
        }
    }
    return L;
}

double min_real_part(const std::vector<Q>& L, int m) {
    Mat A(m, m);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) A(r, c) = static_cast<double>(L[r * m + c]);
    Eigen::EigenSolver<Mat> es(A, false);
    return es.eigenvalues().real().minCoeff();
}

std::size_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return static_cast<std::size_t>(std::llround(r));
}

// Shrinks caps until the largest homogeneous block stays dense-solvable.
SeriesCaps effective_caps(SeriesCaps caps, int nX, std::string& note) {
    const std::size_t limit = 600;
    SeriesCaps c = caps;
    while (binomial(c.K + 2 * c.J + nX - 1, nX - 1) > limit && (c.J > 0 || c.K > 2)) {
        if (c.J > 0)
            --c.J;
        else
            --c.K;
    }
    if (c.K != caps.K || c.J != caps.J) {
        std::ostringstream os;
        os << "caps reduced from (K=" << caps.K << ", J=" << caps.J << ") to (K=" << c.K << ", J=" << c.J << ") for block size";
        note = os.str();
    }
    return c;
}

void finish_series(SaddleSeries& out, const QPoly& full, SeriesCaps stored) {
    int nX = out.ell.d() + out.ell.dp();
    auto pr = std::make_shared<PreciseSeries>();
    pr->ell_full = full;
    pr->ell = full.filtered([&](const MultiIndex& m) { return m[nX] <= stored.J && x_degree(m, nX) <= stored.K; });
    out.ell = MonomialSeries(out.ell.d(), out.ell.dp(), stored);
    for (const auto& [a, c] : pr->ell.terms()) {
        MultiIndex x(a.begin(), a.begin() + out.ell.d()), v(a.begin() + out.ell.d(), a.begin() + nX);
        out.ell.set(a[nX], x, v, static_cast<double>(c));
    }
    out.precise = pr;
}

std::vector<Vec> sphere_directions(int n, int count) {
    std::mt19937_64 rng(20240611);
    std::normal_distribution<double> N(0, 1);
    std::vector<Vec> dirs;
    for (int i = 0; i < n; ++i) {
        Vec e = Vec::Zero(n);
        e[i] = 1;
        dirs.push_back(e);
    }
    while (static_cast<int>(dirs.size()) < count) {
        Vec e(n);
        for (int i = 0; i < n; ++i) e[i] = N(rng);
        dirs.push_back(e / e.norm());
    }
    return dirs;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    int n = static_cast<int>(x.size());
    for (int i = 0; i < n; ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0;
    for (int i = 0; i < n; ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

}  // namespace

// ---------------------------------------------------------------- MonomialSeries

MonomialSeries::MonomialSeries(int d, int dp, SeriesCaps caps) : d_(d), dp_(dp), caps_(caps), poly_(d + dp + 1) {}

bool MonomialSeries::admits(const MultiIndex& m) const {
    int nX = d_ + dp_;
    return m[nX] <= caps_.J && x_degree(m, nX) <= caps_.K;
}

void MonomialSeries::absorb(const Polynomial& p) {
    poly_ = p.filtered([this](const MultiIndex& m) { return admits(m); });
}

double MonomialSeries::coeff(int j, const MultiIndex& a, const MultiIndex& b) const {
    MultiIndex m = a;
    m.insert(m.end(), b.begin(), b.end());
    m.push_back(j);
    return poly_.coeff(m);
}

void MonomialSeries::set(int j, const MultiIndex& a, const MultiIndex& b, double c) {
    if (static_cast<int>(a.size()) != d_ || static_cast<int>(b.size()) != dp_) throw std::invalid_argument("series: multi-index arity");
    MultiIndex m = a;
    m.insert(m.end(), b.begin(), b.end());
    m.push_back(j);
    if (!admits(m)) throw std::out_of_range("series: coefficient beyond caps");
    poly_.set_coeff(m, c);
}

MonomialSeries MonomialSeries::operator+(const MonomialSeries& o) const {
    MonomialSeries r = *this;
    r.absorb(poly_ + o.poly_);
    return r;
}

MonomialSeries MonomialSeries::operator-(const MonomialSeries& o) const {
    MonomialSeries r = *this;
    r.absorb(poly_ - o.poly_);
    return r;
}

MonomialSeries MonomialSeries::operator*(const MonomialSeries& o) const {
    MonomialSeries r = *this;
    r.poly_ = poly_.mul_truncated(o.poly_, [this](const MultiIndex& m) { return admits(m); });
    return r;
}

MonomialSeries MonomialSeries::scaled(double s) const {
    MonomialSeries r = *this;
    r.poly_ = poly_ * s;
    return r;
}

MonomialSeries MonomialSeries::diff(int var) const {
    if (var < 0 || var >= d_ + dp_) throw std::invalid_argument("series: derivative variable out of range");
    MonomialSeries r = *this;
    r.poly_ = poly_.diff(var);
    return r;
}

Polynomial MonomialSeries::order(int j) const {
    int nX = d_ + dp_;
    Polynomial r(nX);
    for (const auto& [m, c] : poly_.terms())
        if (m[nX] == j) r.add_term(MultiIndex(m.begin(), m.begin() + nX), c);
    return r;
}

double MonomialSeries::eval(const Vec& X, double h) const {
    std::vector<double> z(X.data(), X.data() + X.size());
    z.push_back(h);
    return poly_.eval(z);
}

Vec MonomialSeries::gradient_order0(const Vec& X) const {
    Polynomial l0 = order(0);
    std::vector<double> z(X.data(), X.data() + X.size());
    Vec g(d_ + dp_);
    for (int i = 0; i < d_ + dp_; ++i) g[i] = l0.diff(i).eval(z);
    return g;
}

Mat MonomialSeries::hessian_order0(const Vec& X) const {
    Polynomial l0 = order(0);
    std::vector<double> z(X.data(), X.data() + X.size());
    int n = d_ + dp_;
    Mat H(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) H(i, j) = l0.diff(i).diff(j).eval(z);
    return H;
}

std::string MonomialSeries::to_csv() const {
    int nX = d_ + dp_;
    std::vector<std::pair<MultiIndex, double>> rows;
    for (const auto& [m, c] : poly_.terms()) {
        MultiIndex key;
        key.push_back(m[nX]);
        key.insert(key.end(), m.begin(), m.begin() + nX);
        rows.emplace_back(key, c);
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::ostringstream os;
    os.precision(17);
    os << "j,a,b,coefficient\n";
    for (const auto& [k, c] : rows) {
        os << k[0] << ',';
        for (int i = 0; i < d_; ++i) os << (i ? " " : "") << k[1 + i];
        os << ',';
        for (int i = 0; i < dp_; ++i) os << (i ? " " : "") << k[1 + d_ + i];
        os << ',' << c << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------- frame

std::vector<MultiIndex> homogeneous_basis(int n, int k) {
    std::vector<MultiIndex> out;
    MultiIndex cur(n, 0);
    std::function<void(int, int)> rec = [&](int i, int left) {
        if (i == n - 1) {
            cur[i] = left;
            out.push_back(cur);
            return;
        }
        for (int e = left; e >= 0; --e) {
            cur[i] = e;
            rec(i + 1, left - e);
        }
    };
    if (n == 0) return out;
    rec(0, k);
    return out;
}

SaddleFrame build_lambda(const CoefficientSystem& sys, const Vec& s) {
    Shifted sh = shift_system(sys, s);
    check_vanishing_drift(sh);
    int d = sh.d, dp = sh.dp, nX = sh.nX;
    SaddleFrame F;
    F.s.resize(d);
    for (int i = 0; i < d; ++i) F.s[i] = static_cast<double>(sh.s[i]);
    F.V_s = static_cast<double>(sh.V.coeff(MultiIndex(d, 0)));
    F.H.resize(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) F.H(i, j) = static_cast<double>(sh.V.diff(i).diff(j).coeff(MultiIndex(d, 0)));
    std::vector<Q> J = drift_jacobian(sh);
    Mat Jd(nX, nX);
    for (int r = 0; r < nX; ++r)
        for (int c = 0; c < nX; ++c) Jd(r, c) = static_cast<double>(J[r * nX + c]);
    F.M = Jd.block(0, d, d, dp);
    if (F.M.cwiseAbs().maxCoeff() == 0.0) throw WkbFailure("alpha^0 has no v-linear part at the saddle: use the degenerate solver");
    Mat S = sys.S();
    Mat Si = S.inverse();
    F.M_beta = -0.5 * Si * F.M.transpose() * F.H;
    F.Lambda = Jd.transpose();
    F.Lambda_block = Mat::Zero(nX, nX);
    F.Lambda_block.block(0, d, d, dp) = -0.5 * F.H * F.M * Si;
    F.Lambda_block.block(d, 0, dp, d) = F.M.transpose();
    F.Lambda_block.block(d, d, dp, dp) = 4.0 * S;
    F.block_deviation = (F.Lambda - F.Lambda_block).norm();

    Eigen::EigenSolver<Mat> es(F.Lambda);
    F.eigenvalues = es.eigenvalues();
    double scale = std::max(1.0, F.Lambda.norm());
    double tol = 1e-10 * scale;
    std::vector<int> negative;
    for (int i = 0; i < nX; ++i)
        if (F.eigenvalues[i].real() < -tol) negative.push_back(i);
    auto describe = [&]() {
        std::ostringstream os;
        os << "eigenvalues of Lambda:";
        for (int i = 0; i < nX; ++i) os << ' ' << F.eigenvalues[i];
        return os.str();
    };
    if (negative.size() != 1)
        throw WkbFailure("simplicity condition fails: " + std::to_string(negative.size()) + " eigenvalues with negative real part; " + describe());
    std::complex<double> lam = F.eigenvalues[negative[0]];
    if (std::abs(lam.imag()) > tol) throw WkbFailure("simplicity condition fails: the negative eigenvalue is not real; " + describe());
    for (int i = 0; i < nX; ++i)
        if (i != negative[0] && std::abs(F.eigenvalues[i] - lam) < 1e-8 * scale)
            throw WkbFailure("simplicity condition fails: the negative eigenvalue is not simple; " + describe());
    F.mu = -lam.real();
    Vec xi = es.eigenvectors().col(negative[0]).real();
    double nv = xi.tail(dp).squaredNorm();
    if (nv == 0.0) throw WkbFailure("eigenvector has zero velocity part");
    xi *= std::sqrt(F.mu / nv);
    int big = 0;
    xi.cwiseAbs().maxCoeff(&big);
    if (xi[big] < 0) xi = -xi;
    F.xi = xi;
    // Quad refinement fixes mu and xi to the precision used by the series.
    QuadFrame qf = quad_frame(sh, F);
    F.mu = static_cast<double>(qf.mu);
    for (int i = 0; i < nX; ++i) F.xi[i] = static_cast<double>(qf.xi[i]);
    F.eigen_residual = (F.Lambda * F.xi + F.mu * F.xi).norm();
    return F;
}

Mat degree_operator(const SaddleFrame& frame, int k) {
    int nX = static_cast<int>(frame.xi.size());
    int d = static_cast<int>(frame.s.size());
    Mat B = frame.Lambda.transpose();
    for (int r = d; r < nX; ++r)
        for (int c = 0; c < nX; ++c) B(r, c) += 2.0 * frame.xi[r] * frame.xi[c];
    std::vector<double> Bv(nX * nX);
    for (int r = 0; r < nX; ++r)
        for (int c = 0; c < nX; ++c) Bv[r * nX + c] = B(r, c);
    auto basis = homogeneous_basis(nX, k);
    auto L = assemble_degree_operator(Bv, frame.mu, nX, basis);
    int m = static_cast<int>(basis.size());
    Mat out(m, m);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) out(r, c) = L[r * m + c];
    return out;
}

// ---------------------------------------------------------------- linear situation

SaddleSeries solve_eikonal_s1(const CoefficientSystem& sys, const SaddleFrame& frame, SeriesCaps caps) {
    Shifted sh = shift_system(sys, frame.s);
    check_vanishing_drift(sh);
    QuadFrame qf = quad_frame(sh, frame);
    SaddleSeries out;
    out.situation = Situation::linear;
    out.frame = frame;
    out.requested = caps;
    SeriesCaps c = effective_caps(caps, sh.nX, out.note);
    out.s = frame.s;
    out.V_s = frame.V_s;
    out.ell = MonomialSeries(sh.d, sh.dp, c);
    QPoly ell(sh.n);
    for (int i = 0; i < sh.nX; ++i) {
        MultiIndex e(sh.n, 0);
        e[i] = 1;
        ell.add_term(e, qf.xi[i]);
    }
    int top = c.K + 2 * c.J;
    out.operator_min_real.assign(top + 1, 0.0);
    for (int k = 2; k <= top; ++k) {
        auto basis = homogeneous_basis(sh.nX, k);
        int m = static_cast<int>(basis.size());
        auto L = assemble_degree_operator(qf.B, qf.mu, sh.nX, basis);
        out.operator_min_real[k] = min_real_part(L, m);
        QPoly w = compute_w(sh, ell, block_keep(sh.nX, 0, k));
        std::vector<Q> rhs(m);
        for (int i = 0; i < m; ++i) rhs[i] = -w.coeff(with_h(basis[i], 0));
        auto sol = lu_solve(L, rhs, m);
        for (int i = 0; i < m; ++i) ell.add_term(with_h(basis[i], 0), sol[i]);
    }
    {
        auto L0 = assemble_degree_operator(qf.B, qf.mu, sh.nX, homogeneous_basis(sh.nX, 0));
        out.operator_min_real[0] = min_real_part(L0, 1);
        auto b1 = homogeneous_basis(sh.nX, 1);
        out.operator_min_real[1] = min_real_part(assemble_degree_operator(qf.B, qf.mu, sh.nX, b1), static_cast<int>(b1.size()));
    }
    finish_series(out, ell, c);
    return out;
}

SaddleSeries solve_transport_s1(const CoefficientSystem& sys, const SaddleSeries& eik) {
    if (eik.situation != Situation::linear || !eik.precise) throw std::invalid_argument("solve_transport_s1: needs a linear-situation eikonal series");
    Shifted sh = shift_system(sys, eik.frame.s);
    QuadFrame qf = quad_frame(sh, eik.frame);
    SaddleSeries out = eik;
    SeriesCaps c = eik.ell.caps();
    QPoly ell = eik.precise->ell_full;
    for (int j = 1; j <= c.J; ++j) {
        int top = c.K + 2 * (c.J - j);
        for (int k = 0; k <= top; ++k) {
            auto basis = homogeneous_basis(sh.nX, k);
            int m = static_cast<int>(basis.size());
            auto L = assemble_degree_operator(qf.B, qf.mu, sh.nX, basis);
            QPoly w = compute_w(sh, ell, block_keep(sh.nX, j, k));
            std::vector<Q> rhs(m);
            for (int i = 0; i < m; ++i) rhs[i] = -w.coeff(with_h(basis[i], j));
            auto sol = lu_solve(L, rhs, m);
            for (int i = 0; i < m; ++i) ell.add_term(with_h(basis[i], j), sol[i]);
        }
    }
    finish_series(out, ell, c);
    return out;
}

// ---------------------------------------------------------------- degenerate situation

SaddleSeries solve_situation2(const CoefficientSystem& sys, const Vec& s, SeriesCaps caps) {
    if (sys.d != 1 || sys.dp != 1) throw WkbFailure("degenerate solver: requires d = d' = 1");
    if (std::abs(sys.S()(0, 0) - 0.25) > 1e-15) throw WkbFailure("degenerate solver: requires Sigma = 1/2");
    Shifted sh = shift_system(sys, s);
    check_vanishing_drift(sh);
    std::vector<Q> J = drift_jacobian(sh);
    // Only the 4 S v friction may be linear.
    if (abs(J[0]) + abs(J[1]) + abs(J[2]) + abs(J[3] - 1) > Q(1e-24)) throw WkbFailure("degenerate solver: alpha^0 or beta^0 has a linear part");
    Q theta1 = 2 * sh.V.diff(0).diff(0).coeff({0});
    if (!(theta1 < 0)) throw WkbFailure("degenerate solver: V''(s) >= 0, not a saddle");
    Q xi = sqrt(-theta1);

    SaddleSeries out;
    out.situation = Situation::degenerate;
    out.requested = caps;
    out.s = Vec::Constant(1, static_cast<double>(sh.s[0]));
    out.V_s = static_cast<double>(sh.V.coeff({0}));
    out.xi_x = static_cast<double>(xi);
    out.ell = MonomialSeries(1, 1, caps);
    QPoly ell(3);
    ell.add_term({1, 0, 0}, xi);
    ell.add_term({0, 2, 0}, -xi / 2);

    auto row = [&](const QPoly& l, int j, int a, int b) {
        QPoly w = compute_w(sh, l, block_keep(2, j, a + b));
        return w.coeff({a, b, j});
    };
    // Adds c x^a h^j together with its partner -(a c/2) x^{a-1} v^2 h^j.
    auto with_unknown = [&](QPoly l, int j, int a, int b, Q c) {
        l.add_term({a, b, j}, c);
        if (b == 0 && a >= 1) l.add_term({a - 1, 2, j}, -Q(a) * c / 2);
        return l;
    };
    auto solve_row = [&](int j, int a, int b) {
        // x^a alone is fixed by the x^a v^2 row; higher even v-powers by their own row.
        int rb = b == 0 ? 2 : b;
        Q base = row(ell, j, a, rb);
        Q probe = row(with_unknown(ell, j, a, b, Q(1)), j, a, rb);
        Q slope = probe - base;
        if (abs(slope) < Q(1e-28)) throw WkbFailure("degenerate solver: vanishing pivot");
        ell = with_unknown(ell, j, a, b, -base / slope);
    };
    for (int j = 0; j <= caps.J; ++j) {
        int D = caps.K + 1 + 4 * (caps.J - j);
        for (int a = (j == 0 ? 2 : 0); a <= D - 1; ++a) solve_row(j, a, 0);
        for (int b = 4; b <= D; b += 2)
            for (int a = 0; a + b <= D; ++a) solve_row(j, a, b);
    }
    SeriesCaps stored{caps.K + 1, caps.J};
    out.note = "degenerate situation: stored space degree K + 1";
    finish_series(out, ell, stored);
    return out;
}

SaddleSeries solve_saddle(const CoefficientSystem& sys, const Vec& s, SeriesCaps caps) {
    Shifted sh = shift_system(sys, s);
    check_vanishing_drift(sh);
    std::vector<Q> J = drift_jacobian(sh);
    bool linear = false;
    for (int i = 0; i < sh.d; ++i)
        for (int k = 0; k < sh.dp; ++k)
            if (J[i * sh.nX + sh.d + k] != 0) linear = true;
    if (!linear) return solve_situation2(sys, s, caps);
    SaddleFrame F = build_lambda(sys, s);
    return solve_transport_s1(sys, solve_eikonal_s1(sys, F, caps));
}

Vec w_block(const CoefficientSystem& sys, const SaddleSeries& series, int j, int k) {
    Shifted sh = shift_system(sys, series.s);
    QPoly w = compute_w(sh, series.precise->ell_full, block_keep(sh.nX, j, k));
    auto basis = homogeneous_basis(sh.nX, k);
    Vec out(basis.size());
    for (std::size_t i = 0; i < basis.size(); ++i) out[i] = static_cast<double>(w.coeff(with_h(basis[i], j)));
    return out;
}

Mat probe_degree_operator(const CoefficientSystem& sys, const SaddleSeries& series, int j, int k) {
    Shifted sh = shift_system(sys, series.s);
    QPoly base = series.precise->ell_full.filtered([&](const MultiIndex& m) { return !(m[sh.nX] == j && x_degree(m, sh.nX) == k); });
    auto basis = homogeneous_basis(sh.nX, k);
    int m = static_cast<int>(basis.size());
    auto block = [&](const QPoly& l) {
        QPoly w = compute_w(sh, l, block_keep(sh.nX, j, k));
        std::vector<Q> out(m);
        for (int i = 0; i < m; ++i) out[i] = w.coeff(with_h(basis[i], j));
        return out;
    };
    auto r0 = block(base);
    Mat L(m, m);
    for (int c = 0; c < m; ++c) {
        QPoly l = base;
        l.add_term(with_h(basis[c], j), Q(1));
        auto r1 = block(l);
        for (int i = 0; i < m; ++i) L(i, c) = static_cast<double>(r1[i] - r0[i]);
    }
    return L;
}

SaddleSeries SaddleSeries::negated() const {
    SaddleSeries r = *this;
    r.ell = ell.scaled(-1.0);
    if (precise) {
        auto pr = std::make_shared<PreciseSeries>(*precise);
        pr->ell_full *= Q(-1);
        pr->ell *= Q(-1);
        r.precise = pr;
    }
    if (situation == Situation::linear) r.frame.xi = -frame.xi;
    r.xi_x = -xi_x;
    return r;
}

double SaddleSeries::eval(const Vec& x, const Vec& v, double h) const {
    Vec X(x.size() + v.size());
    X << x - s, v;
    return ell.eval(X, h);
}

// ---------------------------------------------------------------- checks

IdentityVerdict hessian_identity_check(const MonomialSeries& ell, const Mat& Hf, double tol) {
    IdentityVerdict v;
    int n = ell.d() + ell.dp();
    if (Hf.rows() != n) throw std::invalid_argument("hessian_identity_check: Hessian size mismatch");
    Vec eta = ell.gradient_order0(Vec::Zero(n));
    Mat Hm = Hf + eta * eta.transpose();
    v.det_modified = Hm.determinant();
    v.det_f = Hf.determinant();
    v.relative_error = std::abs(v.det_modified + v.det_f) / std::max(std::abs(v.det_f), 1e-300);
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (Hm + Hm.transpose()));
    v.positive_definite = es.eigenvalues().minCoeff() > 0;
    v.pass = v.relative_error <= tol && v.positive_definite;
    std::ostringstream os;
    os << "det Hess(f + l0^2/2) = " << v.det_modified << ", det Hess f = " << v.det_f << ", relative error " << v.relative_error
       << (v.positive_definite ? ", positive definite" : ", not positive definite");
    v.detail = os.str();
    return v;
}

ABPair extract_a_b(const SaddleSeries& series, const Mat& Hf) {
    const MonomialSeries& ell = series.ell;
    int d = ell.d(), dp = ell.dp(), n = d + dp;
    Vec eta = ell.gradient_order0(Vec::Zero(n));
    double dv2 = eta.tail(dp).squaredNorm();
    ABPair r;
    if (dv2 > 1e-12 * std::max(1.0, eta.squaredNorm())) {
        r.a = dv2;
        r.b = 0;
        r.branch = "|d_v l0(s)|^2";
        return r;
    }
    Polynomial l0 = ell.order(0);
    Polynomial g(n);
    for (int k = 0; k < dp; ++k) {
        Polynomial dvk = l0.diff(d + k);
        g += dvk * dvk;
    }
    std::vector<double> z(n, 0.0);
    Mat Qm(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Qm(i, j) = 0.5 * g.diff(i).diff(j).eval(z);
    Mat Hphi = Hf + eta * eta.transpose();
    r.a = 0.5 * (Qm * Hphi.inverse()).trace();
    r.b = 1;
    r.branch = "1/2 Tr(Q Hphi^-1)";
    if (!(r.a > 1e-14)) throw WkbFailure("saddle contributes at higher order: both branches of (a, b) vanish");
    return r;
}

ResidualProfile eikonal_residual_profile(const CoefficientSystem& sys, const SaddleSeries& series, const std::vector<double>& radii,
                                         int directions) {
    Shifted sh = shift_system(sys, series.s);
    QPoly l0 = series.precise->ell.filtered([&](const MultiIndex& m) { return m[sh.nX] == 0; });
    QPoly w0 = h0_part(compute_w_full(sh, l0), sh.n);
    ResidualProfile P;
    P.radii = radii;
    auto dirs = sphere_directions(sh.nX, directions);
    for (double r : radii) {
        Q worst = 0;
        for (const Vec& e : dirs) {
            std::vector<Q> z(sh.n, Q(0));
            for (int i = 0; i < sh.nX; ++i) z[i] = Q(r) * Q(e[i]);
            worst = std::max(worst, Q(abs(w0.eval(z))));
        }
        P.max_residual.push_back(std::max(static_cast<double>(worst), 1e-300));
    }
    P.slope = fit_slope(P.radii, P.max_residual);
    return P;
}

double residual_ratio(const CoefficientSystem& sys, const SaddleSeries& series, const std::vector<double>& radii, const std::vector<double>& hs,
                      int directions) {
    Shifted sh = shift_system(sys, series.s);
    QPoly w = compute_w_full(sh, series.precise->ell);
    auto dirs = sphere_directions(sh.nX, directions);
    const SeriesCaps& c = series.ell.caps();
    double worst = 0;
    for (double r : radii)
        for (double h : hs) {
            double denom = std::pow(r, c.K + 1) + std::pow(h, c.J + 1);
            for (const Vec& e : dirs) {
                std::vector<Q> z(sh.n);
                for (int i = 0; i < sh.nX; ++i) z[i] = Q(r) * Q(e[i]);
                z[sh.nX] = Q(h);
                worst = std::max(worst, static_cast<double>(abs(w.eval(z))) / denom);
            }
        }
    return worst;
}

bool odd_v_coefficients_vanish(const MonomialSeries& ell) {
    int d = ell.d(), nX = ell.d() + ell.dp();
    for (const auto& [m, c] : ell.polynomial().terms()) {
        int vb = 0;
        for (int i = d; i < nX; ++i) vb += m[i];
        if (vb % 2 == 1 && c != 0.0) return false;
    }
    return true;
}

}  // namespace kfp
