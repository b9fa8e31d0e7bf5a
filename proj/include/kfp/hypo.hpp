#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kfp/model.hpp"

namespace kfp {

/// Normalization constant of rho(v) = (C h)^{-d'/4} exp(-|Sigma v|^2/h).
double gaussian_constant(const Mat& Sigma);

/// Exact moment of v^gamma against rho^2 (a centered Gaussian with covariance (h/4) S^{-1}).
double gaussian_moment(const Mat& Sigma, double h, const MultiIndex& gamma);

/// Averages a polynomial in (x, v, h) over v against rho^2. The result is a polynomial in (x, h).
Polynomial velocity_average(const Polynomial& p, int d, const Mat& Sigma);

/// G(x) = <alpha alpha^T rho, rho> with entries polynomials in (x, h); also the fourth-moment table <alpha_i^2 alpha_j^2 rho, rho>.
struct GMatrixField {
    int d = 0;
    std::vector<Polynomial> entries;  // row-major d x d
    std::vector<Polynomial> fourth;   // row-major d x d
    Mat eval(const Vec& x, double h) const;
    Mat eval_fourth(const Vec& x, double h) const;
    Mat eval_derivative(const Vec& x, double h, int k) const;
    const Polynomial& entry(int i, int j) const { return entries.at(i * d + j); }
};

GMatrixField compute_G(const CoefficientSystem& sys);

/// c h^p.
struct MonomialFit {
    double c = 0.0;
    double p = 0.0;
    double raw_p = 0.0;
    double operator()(double h) const;
};

/// Least-squares fit of log y against log h; p rounded to the nearest quarter, c refit at that p.
MonomialFit fit_monomial(const std::vector<double>& h, const std::vector<double>& y);

struct Verdict {
    bool pass = true;
    double value = 0.0;
    std::string detail;
    std::optional<Vec> witness;
};

struct G1G2Bounds {
    MonomialFit g1;
    MonomialFit g2;
    std::vector<double> h_grid;
    std::vector<double> min_eig;
    std::vector<double> max_eig;
    Verdict psd;           // hard failure when G has a negative eigenvalue
    Verdict derivative;    // (G) ii: sup |G^{-1/2} dG G^{-1/2}|
    Verdict fourth_moment; // (G) iii: sup <alpha_i^2 alpha_j^2> / g2^2, bounded in h
};

G1G2Bounds bound_g1_g2(const GMatrixField& G, const Box& box, const std::vector<double>& h_grid);

double gap_function(const MonomialFit& g1, const MonomialFit& g2, int nu_bar, double h);

Verdict check_centering(const CoefficientSystem& sys, double h, const std::vector<Vec>& x_samples);

struct HypoReport {
    G1G2Bounds bounds;
    int nu_bar = 2;
    Verdict centering;         // (hypocoer) i
    Verdict hypocoer_ii;       // minimal c with E[q_i q_j] <= c g2^2 (|grad V|^2 + h)
    Verdict polynomial_gap;    // g(h) >= h^c
    MonomialFit gap_fit;
    std::vector<double> gap_values;
    double gap(double h) const { return gap_function(bounds.g1, bounds.g2, nu_bar, h); }
    bool all_pass() const;
};

HypoReport hypo_report(const CoefficientSystem& sys, const Box& x_box, const std::vector<double>& h_grid, int nu_bar = 2);

std::vector<double> default_h_grid();

}  // namespace kfp
