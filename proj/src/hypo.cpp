#include "kfp/hypo.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace kfp {

namespace {

// Sum over perfect matchings of the index list (Isserlis).
double isserlis(std::vector<int>& idx, const Mat& C) {
    if (idx.empty()) return 1.0;
    if (idx.size() % 2) return 0.0;
    int first = idx.back();
    idx.pop_back();
    double s = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        double c = C(first, idx[k]);
        if (c == 0.0) continue;
        int other = idx[k];
        idx.erase(idx.begin() + static_cast<long>(k));
        s += c * isserlis(idx, C);
        idx.insert(idx.begin() + static_cast<long>(k), other);
    }
    idx.push_back(first);
    return s;
}

// Moment at h = 1; the h-dependence is h^{|gamma|/2}.
double unit_moment(const Mat& C1, const MultiIndex& gamma) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(gamma.size()); ++i)
        for (int k = 0; k < gamma[i]; ++k) idx.push_back(i);
    if (idx.size() % 2) return 0.0;
    // Diagonal covariance: product of 1-D double factorial moments.
    if (C1.isDiagonal(0.0)) {
        double r = 1.0;
        for (int i = 0; i < static_cast<int>(gamma.size()); ++i) {
            if (gamma[i] % 2) return 0.0;
            for (int k = gamma[i] - 1; k > 0; k -= 2) r *= k;
            r *= std::pow(C1(i, i), gamma[i] / 2);
        }
        return r;
    }
    return isserlis(idx, C1);
}

Mat unit_covariance(const Mat& Sigma) {
    Mat S = Sigma.transpose() * Sigma;
    if (S.isDiagonal(0.0)) {
        Mat C = Mat::Zero(S.rows(), S.cols());
        for (int i = 0; i < S.rows(); ++i) C(i, i) = 0.25 / S(i, i);
        return C;
    }
    return 0.25 * S.inverse();
}

}  // namespace

double gaussian_constant(const Mat& Sigma) {
    int dp = static_cast<int>(Sigma.rows());
    return 0.5 * M_PI * std::pow(std::abs(1.0 / Sigma.determinant()), 2.0 / dp);
}

double gaussian_moment(const Mat& Sigma, double h, const MultiIndex& gamma) {
    if (static_cast<int>(gamma.size()) != Sigma.rows()) throw std::invalid_argument("gaussian_moment: multi-index arity mismatch");
    int deg = total_degree(gamma);
    if (deg > 8) throw std::invalid_argument("gaussian_moment: total degree capped at 8");
    if (!(h > 0)) throw std::invalid_argument("gaussian_moment: h must be positive");
    if (deg % 2) return 0.0;
    return unit_moment(unit_covariance(Sigma), gamma) * std::pow(h, deg / 2);
}

Polynomial velocity_average(const Polynomial& p, int d, const Mat& Sigma) {
    int dp = static_cast<int>(Sigma.rows());
    if (p.nvars() != d + dp + 1) throw std::invalid_argument("velocity_average: polynomial must be in (x, v, h)");
    Mat C1 = unit_covariance(Sigma);
    std::map<MultiIndex, double> cache;
    Polynomial r(d + 1);
    for (const auto& [a, c] : p.terms()) {
        MultiIndex g(a.begin() + d, a.begin() + d + dp);
        int deg = total_degree(g);
        if (deg % 2) continue;
        auto it = cache.find(g);
        if (it == cache.end()) it = cache.emplace(g, unit_moment(C1, g)).first;
        if (it->second == 0.0) continue;
        MultiIndex b(d + 1);
        for (int i = 0; i < d; ++i) b[i] = a[i];
        b[d] = a[d + dp] + deg / 2;
        r.add_term(b, c * it->second);
    }
    return r;
}

// ---------------------------------------------------------------- G

static std::vector<double> xh_point(const Vec& x, double h) {
    std::vector<double> z(x.data(), x.data() + x.size());
    z.push_back(h);
    return z;
}

Mat GMatrixField::eval(const Vec& x, double h) const {
    Mat M(d, d);
    auto z = xh_point(x, h);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) M(i, j) = entries[i * d + j].eval(z);
    return M;
}

Mat GMatrixField::eval_fourth(const Vec& x, double h) const {
    Mat M(d, d);
    auto z = xh_point(x, h);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) M(i, j) = fourth[i * d + j].eval(z);
    return M;
}

Mat GMatrixField::eval_derivative(const Vec& x, double h, int k) const {
    Mat M(d, d);
    auto z = xh_point(x, h);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) M(i, j) = entries[i * d + j].diff(k).eval(z);
    return M;
}

GMatrixField compute_G(const CoefficientSystem& sys) {
    GMatrixField G;
    G.d = sys.d;
    for (int i = 0; i < sys.d; ++i)
        for (int j = 0; j < sys.d; ++j) {
            G.entries.push_back(velocity_average(sys.alpha[i] * sys.alpha[j], sys.d, sys.Sigma));
            Polynomial ai2 = sys.alpha[i] * sys.alpha[i];
            Polynomial aj2 = sys.alpha[j] * sys.alpha[j];
            G.fourth.push_back(velocity_average(ai2 * aj2, sys.d, sys.Sigma));
        }
    return G;
}

// ---------------------------------------------------------------- fits and bounds

double MonomialFit::operator()(double h) const { return c * std::pow(h, p); }

MonomialFit fit_monomial(const std::vector<double>& h, const std::vector<double>& y) {
    if (h.size() != y.size() || h.size() < 2) throw std::invalid_argument("fit_monomial: need at least two points");
    std::size_t n = h.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(h[i] > 0 && y[i] > 0)) throw std::invalid_argument("fit_monomial: values must be positive");
        mx += std::log(h[i]);
        my += std::log(y[i]);
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = std::log(h[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    MonomialFit f;
    f.raw_p = sxy / sxx;
    f.p = std::round(4.0 * f.raw_p) / 4.0;
    double lc = 0;
    for (std::size_t i = 0; i < n; ++i) lc += std::log(y[i]) - f.p * std::log(h[i]);
    f.c = std::exp(lc / n);
    return f;
}

std::vector<double> default_h_grid() { return {0.01, 0.0178, 0.0316, 0.0562, 0.1}; }

G1G2Bounds bound_g1_g2(const GMatrixField& G, const Box& box, const std::vector<double>& h_grid) {
    G1G2Bounds B;
    B.h_grid = h_grid;
    auto pts = box.lattice();
    double worst_deriv = 0.0;
    std::vector<double> fourth_ratio;
    for (double h : h_grid) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0, f4 = 0.0;
        for (const Vec& x : pts) {
            Mat M = G.eval(x, h);
            Mat Ms = 0.5 * (M + M.transpose());
            if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + M.cwiseAbs().maxCoeff())) {
                B.psd.pass = false;
                B.psd.detail = "G not symmetric";
                B.psd.witness = x;
            }
            Eigen::SelfAdjointEigenSolver<Mat> es(Ms);
            double emin = es.eigenvalues().minCoeff();
            double emax = es.eigenvalues().maxCoeff();
            if (emin < -1e-12 * std::max(1.0, emax) && B.psd.pass) {
                B.psd.pass = false;
                B.psd.value = emin;
                B.psd.detail = "negative eigenvalue of G";
                B.psd.witness = x;
            }
            lo = std::min(lo, emin);
            hi = std::max(hi, emax);
            f4 = std::max(f4, G.eval_fourth(x, h).maxCoeff());
            if (emin > 0) {
                Eigen::MatrixXd Wi = es.operatorInverseSqrt();
                for (int k = 0; k < G.d; ++k) {
                    Mat D = Wi * G.eval_derivative(x, h, k) * Wi;
                    Eigen::SelfAdjointEigenSolver<Mat> ed(0.5 * (D + D.transpose()));
                    worst_deriv = std::max(worst_deriv, ed.eigenvalues().cwiseAbs().maxCoeff());
                }
            }
        }
        B.min_eig.push_back(lo);
        B.max_eig.push_back(hi);
        fourth_ratio.push_back(f4);
    }
    if (B.psd.pass) {
        bool positive = std::all_of(B.min_eig.begin(), B.min_eig.end(), [](double v) { return v > 0; });
        if (!positive) {
            B.psd.pass = false;
            B.psd.detail = "G degenerate on the box: no positive lower bound g1";
        } else {
            B.g1 = fit_monomial(h_grid, B.min_eig);
            B.g2 = fit_monomial(h_grid, B.max_eig);
            B.psd.value = B.min_eig.front();
            B.psd.detail = "G symmetric positive definite on all samples";
        }
    }
    B.derivative.value = worst_deriv;
    B.derivative.pass = B.psd.pass && std::isfinite(worst_deriv);
    B.derivative.detail = "sup over box and h of |G^{-1/2} dG G^{-1/2}|";
    if (B.psd.pass) {
        std::vector<double> ratio;
        for (std::size_t i = 0; i < h_grid.size(); ++i) {
            double g2 = B.g2(h_grid[i]);
            ratio.push_back(std::max(fourth_ratio[i], 1e-300) / (g2 * g2));
        }
        double mx = *std::max_element(ratio.begin(), ratio.end());
        MonomialFit rf = fit_monomial(h_grid, ratio);
        B.fourth_moment.value = mx;
        B.fourth_moment.pass = rf.raw_p >= -0.1;
        B.fourth_moment.detail = "max ratio " + std::to_string(mx) + ", fitted exponent " + std::to_string(rf.raw_p);
    } else {
        B.fourth_moment.pass = false;
    }
    return B;
}

double gap_function(const MonomialFit& g1, const MonomialFit& g2, int nu_bar, double h) {
    if (!(h > 0)) throw std::invalid_argument("gap_function: h must be positive");
    double a = g1(h), b = g2(h);
    double nb = nu_bar;
    double denom = 1.0 + std::pow(h, 4.0 / nb - 2.0) * std::pow(b / a, 3) + std::pow(h, 1.0 / nb) / std::sqrt(a);
    return h / denom;
}

Verdict check_centering(const CoefficientSystem& sys, double h, const std::vector<Vec>& x_samples) {
    Verdict v;
    double scale = 0.0;
    for (const auto& a : sys.alpha)
        for (const auto& [m, c] : a.terms()) scale = std::max(scale, std::abs(c));
    for (int i = 0; i < sys.d; ++i) {
        Polynomial avg = velocity_average(sys.alpha[i], sys.d, sys.Sigma);
        for (const auto& [m, c] : avg.terms()) v.value = std::max(v.value, std::abs(c));
        for (const Vec& x : x_samples) {
            double r = std::abs(avg.eval(xh_point(x, h)));
            if (r > v.value) {
                v.value = r;
                v.witness = x;
            }
        }
    }
    v.pass = v.value <= 1e-13 * std::max(1.0, scale);
    v.detail = v.value == 0.0 ? "velocity average of alpha vanishes identically" : "max |<alpha rho, rho>| = " + std::to_string(v.value);
    return v;
}

bool HypoReport::all_pass() const {
    return bounds.psd.pass && bounds.derivative.pass && bounds.fourth_moment.pass && centering.pass && hypocoer_ii.pass;
}

HypoReport hypo_report(const CoefficientSystem& sys, const Box& x_box, const std::vector<double>& h_grid, int nu_bar) {
    HypoReport R;
    R.nu_bar = nu_bar;
    GMatrixField G = compute_G(sys);
    R.bounds = bound_g1_g2(G, x_box, h_grid);
    auto pts = x_box.lattice();
    R.centering = check_centering(sys, h_grid.front(), pts);

    // (hypocoer) ii: q in {h Jx(alpha) alpha, h Jv(alpha) beta, h Jv(alpha) S v, h^2 Lap_v alpha}.
    int n = sys.nvars(), d = sys.d, dp = sys.dp;
    Polynomial hvar = Polynomial::variable(n, sys.h_var());
    Mat S = sys.S();
    std::vector<std::vector<Polynomial>> qs(4, std::vector<Polynomial>(d, Polynomial(n)));
    for (int i = 0; i < d; ++i) {
        for (int k = 0; k < d; ++k) qs[0][i] += sys.alpha[i].diff(k) * sys.alpha[k];
        for (int k = 0; k < dp; ++k) {
            Polynomial dav = sys.alpha[i].diff(d + k);
            qs[1][i] += dav * sys.beta[k];
            Polynomial svk(n);
            for (int l = 0; l < dp; ++l)
                if (S(k, l) != 0.0) svk += Polynomial::variable(n, d + l, S(k, l));
            qs[2][i] += dav * svk;
            qs[3][i] += dav.diff(d + k) * hvar;
        }
        for (int t = 0; t < 4; ++t) qs[t][i] = qs[t][i] * hvar;
    }
    double worst = 0.0;
    std::optional<Vec> wit;
    if (R.bounds.psd.pass) {
        for (int t = 0; t < 4; ++t)
            for (int i = 0; i < d; ++i) {
                Polynomial avg = velocity_average(qs[t][i] * qs[t][i], d, sys.Sigma);
                if (avg.is_zero()) continue;
                for (double h : h_grid) {
                    double g2 = R.bounds.g2(h);
                    for (const Vec& x : pts) {
                        Vec xl = x.head(sys.V.d);
                        double rhs = g2 * g2 * (sys.V.gradient(xl).squaredNorm() + h);
                        double c = avg.eval(xh_point(x, h)) / rhs;
                        if (c > worst) {
                            worst = c;
                            wit = x;
                        }
                    }
                }
            }
        R.hypocoer_ii.value = worst;
        R.hypocoer_ii.witness = wit;
        R.hypocoer_ii.pass = std::isfinite(worst);
        R.hypocoer_ii.detail = "minimal sampled c with <q_i^2> <= c g2^2 (|grad V|^2 + h)";

        for (double h : h_grid) R.gap_values.push_back(R.gap(h));
        R.gap_fit = fit_monomial(h_grid, R.gap_values);
        R.polynomial_gap.pass = std::all_of(R.gap_values.begin(), R.gap_values.end(), [](double g) { return g > 0; });
        R.polynomial_gap.value = R.gap_fit.raw_p;
        R.polynomial_gap.detail = "g(h) ~ c h^p with fitted p = " + std::to_string(R.gap_fit.raw_p);
    } else {
        R.hypocoer_ii.pass = false;
        R.hypocoer_ii.detail = "skipped: G bounds unavailable";
        R.polynomial_gap.pass = false;
    }
    return R;
}

}  // namespace kfp
