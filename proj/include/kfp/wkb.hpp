#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "kfp/hypo.hpp"
#include "kfp/model.hpp"

namespace kfp {

/// Truncation caps of a phase series: h-order J and total space degree K.
struct SeriesCaps {
    int K = 6;
    int J = 2;
};

/// Truncated series sum_j h^j sum_{a,b} c_{j,a,b} x^a v^b in coordinates relative to a saddle.
/// Stored as a polynomial in (x, v, h); every operation enforces the caps.
class MonomialSeries {
public:
    MonomialSeries() = default;
    MonomialSeries(int d, int dp, SeriesCaps caps);

    int d() const { return d_; }
    int dp() const { return dp_; }
    const SeriesCaps& caps() const { return caps_; }
    const Polynomial& polynomial() const { return poly_; }

    double coeff(int j, const MultiIndex& a, const MultiIndex& b) const;
    /// Throws std::out_of_range beyond the caps.
    void set(int j, const MultiIndex& a, const MultiIndex& b, double c);
    bool admits(const MultiIndex& full) const;

    MonomialSeries operator+(const MonomialSeries& o) const;
    MonomialSeries operator-(const MonomialSeries& o) const;
    MonomialSeries operator*(const MonomialSeries& o) const;
    MonomialSeries scaled(double s) const;
    /// Derivative in phase variable `var` (0..d+d'-1).
    MonomialSeries diff(int var) const;

    /// h^j coefficient as a polynomial in (x, v).
    Polynomial order(int j) const;
    double eval(const Vec& X, double h) const;
    Vec gradient_order0(const Vec& X) const;
    Mat hessian_order0(const Vec& X) const;

    /// Rows "j,a,b,coefficient" sorted by (j, a, b); multi-indices space-separated.
    std::string to_csv() const;

private:
    void absorb(const Polynomial& p);
    int d_ = 0;
    int dp_ = 0;
    SeriesCaps caps_;
    Polynomial poly_;
};

/// Linearization at a saddle: Lambda is the transpose of the Jacobian of (alpha^0, beta^0 + 4 S v).
struct SaddleFrame {
    Vec s;                  // saddle in x (v = 0)
    double V_s = 0.0;
    Mat H;                  // Hess V(s)
    Mat M;                  // d_v alpha^0 at s, d x d'
    Mat M_beta;             // -1/2 S^{-1} M^T H
    Mat Lambda;
    Mat Lambda_block;       // [[0, -1/2 H M S^{-1}], [M^T, 4 S]]
    double block_deviation = 0.0;
    Eigen::VectorXcd eigenvalues;
    double mu = 0.0;
    Vec xi;                 // (xi_x, xi_v) with |xi_v|^2 = mu
    double eigen_residual = 0.0;  // |Lambda xi + mu xi|
};

struct WkbFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Builds Lambda at the saddle and checks that exactly one eigenvalue has negative real part and that it is simple.
/// Throws WkbFailure naming the offending eigenvalues otherwise.
SaddleFrame build_lambda(const CoefficientSystem& sys, const Vec& s);

enum class Situation { linear, degenerate };

struct PreciseSeries;  // quad-precision coefficients, internal

struct SaddleSeries {
    Situation situation = Situation::linear;
    Vec s;
    double V_s = 0.0;
    SaddleFrame frame;       // linear situation only
    double xi_x = 0.0;       // degenerate situation only
    MonomialSeries ell;      // stored to the caps
    SeriesCaps requested;
    std::string note;        // cap reductions and similar remarks
    /// Per degree: smallest real part of the spectrum of the assembled degree operator (linear situation).
    std::vector<double> operator_min_real;
    std::shared_ptr<const PreciseSeries> precise;

    /// -ell, which solves the same equations.
    SaddleSeries negated() const;
    /// ell at absolute phase coordinates.
    double eval(const Vec& x, const Vec& v, double h) const;
    /// eta = grad ell_0 at the saddle.
    Vec eta() const { return ell.gradient_order0(Vec::Zero(ell.d() + ell.dp())); }
};

SaddleSeries solve_eikonal_s1(const CoefficientSystem& sys, const SaddleFrame& frame, SeriesCaps caps = {});
SaddleSeries solve_transport_s1(const CoefficientSystem& sys, const SaddleSeries& eikonal);
SaddleSeries solve_situation2(const CoefficientSystem& sys, const Vec& s, SeriesCaps caps = {});
/// Routes by the linear part of alpha^0 at s.
SaddleSeries solve_saddle(const CoefficientSystem& sys, const Vec& s, SeriesCaps caps = {});

/// Assembled degree-k operator (grad-direction transport plus mu) on the monomial basis of degree k.
Mat degree_operator(const SaddleFrame& frame, int k);
/// Monomials of total degree k in n variables, in the basis order used by degree_operator.
std::vector<MultiIndex> homogeneous_basis(int n, int k);

/// The h^j, degree-k block of w for the given series (coefficients on homogeneous_basis), in double.
Vec w_block(const CoefficientSystem& sys, const SaddleSeries& series, int j, int k);

/// The same operator recovered by affine probing: column c is w_block(ell + e_c) - w_block(ell) with the (j, k) block of ell cleared.
Mat probe_degree_operator(const CoefficientSystem& sys, const SaddleSeries& series, int j, int k);

struct IdentityVerdict {
    bool pass = false;
    double det_modified = 0.0;
    double det_f = 0.0;
    double relative_error = 0.0;
    bool positive_definite = false;
    std::string detail;
};

/// det Hess(f + ell_0^2/2) = -det Hess f at the saddle, and positivity of the modified Hessian.
IdentityVerdict hessian_identity_check(const MonomialSeries& ell, const Mat& f_hessian_at_s, double tol = 1e-8);

struct ABPair {
    double a = 0.0;
    int b = 0;
    std::string branch;
};

/// (a, b) = (|d_v ell_0(s)|^2, 0) when nonzero; otherwise (1/2 Tr(Q Hphi^{-1}), 1) with Q = 1/2 Hess |d_v ell_0|^2
/// and Hphi = Hess(f + ell_0^2/2), both at s. Throws WkbFailure when both vanish.
ABPair extract_a_b(const SaddleSeries& series, const Mat& f_hessian_at_s);

struct ResidualProfile {
    std::vector<double> radii;
    std::vector<double> max_residual;
    double slope = 0.0;  // least-squares slope of log max_residual vs log r
};

/// Max over sphere samples |X| = r of |w_0| for the stored ell_0, evaluated in quad precision.
ResidualProfile eikonal_residual_profile(const CoefficientSystem& sys, const SaddleSeries& series, const std::vector<double>& radii,
                                         int directions = 64);

/// Max over samples of |w(X, h)| / (r^{K+1} + h^{J+1}) for the stored ell.
double residual_ratio(const CoefficientSystem& sys, const SaddleSeries& series, const std::vector<double>& radii, const std::vector<double>& hs,
                      int directions = 32);

/// True when every stored coefficient of odd total v-degree is exactly zero.
bool odd_v_coefficients_vanish(const MonomialSeries& ell);

}  // namespace kfp
