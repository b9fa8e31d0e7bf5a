#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "kfp/poly.hpp"

namespace kfp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Potential V on R^d: polynomial part plus an optional confining tail
/// kappa * (sqrt(R^2 + |x|^2) - R)^2, which is quadratic at infinity.
struct PotentialSpec {
    int d = 1;
    Polynomial poly{1};
    int derivative_order_cap = 8;
    double tail_kappa = 0.0;
    double tail_radius = 1.0;

    static PotentialSpec from_polynomial(const Polynomial& p);

    bool has_tail() const { return tail_kappa != 0.0; }
    double value(const Vec& x) const;
    Vec gradient(const Vec& x) const;
    Mat hessian(const Vec& x) const;
    /// Exact partial derivative of the polynomial part. Rejects potentials with a tail.
    Polynomial derivative(const MultiIndex& order) const;
};

/// Kinetic system: the SDE dx = alpha dt, dv = (beta - 4 S v) dt + sqrt(2 h g) dB with S = Sigma^T Sigma.
/// alpha and beta are polynomials in the variables (x_1..x_d, v_1..v_d', h), h last.
struct CoefficientSystem {
    std::string name = "custom";
    int d = 1;
    int dp = 1;
    PotentialSpec V;
    Mat Sigma;
    std::vector<Polynomial> alpha;
    std::vector<Polynomial> beta;
    /// Multiplier of N and of the noise (rescaled preset); a polynomial in x, 1 otherwise.
    Polynomial noise_multiplier;
    /// Number of leading x coordinates that carry the potential landscape (adaptive preset: d/2).
    int landscape_dim = -1;

    int nvars() const { return d + dp + 1; }
    int h_var() const { return d + dp; }
    Mat S() const { return Sigma.transpose() * Sigma; }
    int landscape_d() const { return landscape_dim < 0 ? d : landscape_dim; }
    bool has_noise_multiplier() const;

    /// Variable vector (x, v, h) for polynomial evaluation.
    std::vector<double> point(const Vec& x, const Vec& v, double h) const;

    void validate() const;
    /// h^j part of alpha_i or beta_k, as polynomials in (x, v) (h variable removed).
    Polynomial alpha_order(int i, int j) const;
    Polynomial beta_order(int k, int j) const;
    /// Divergence div_x alpha + div_v beta as a polynomial in (x, v, h).
    Polynomial divergence() const;
    /// Residual alpha.dV + 2 beta.Sv - (h/2) div, as a polynomial in (x, v, h).
    Polynomial stationarity_polynomial() const;
    /// V as a polynomial in (x, v, h).
    Polynomial potential_in_phase_space() const;
    /// f = V + |Sigma v|^2 as a polynomial in (x, v, h).
    Polynomial f_polynomial() const;
    /// Hessian of f at (x, v) in phase-space coordinates.
    Mat f_hessian(const Vec& x, const Vec& v) const;
};

double eval_f(const CoefficientSystem& sys, const Vec& x, const Vec& v);

struct StationarityReport {
    double max_residual = 0.0;
    double max_scaled_residual = 0.0;  // residual / (1 + |f|)
    std::vector<std::pair<Vec, Vec>> sample_points;
    std::vector<double> residual_field;
};

/// Axis-aligned box with a per-axis sample count.
struct Box {
    Vec lo;
    Vec hi;
    int samples_per_axis = 64;
    static Box cube(int dim, double lo, double hi, int n = 64);
    int dim() const { return static_cast<int>(lo.size()); }
    /// All lattice points of the box (tensor grid, endpoints included).
    std::vector<Vec> lattice() const;
};

StationarityReport stationarity_residual(const CoefficientSystem& sys, double h, const std::vector<std::pair<Vec, Vec>>& samples);
/// Samples (x, v) on a tensor lattice of a phase-space box of dimension d + d'.
std::vector<std::pair<Vec, Vec>> phase_samples(const CoefficientSystem& sys, const Box& phase_box);

struct ConfinementReport {
    bool pass = true;
    double C = 0.0;
    double inner_radius = 0.0;
    std::string failed_condition;
    std::optional<Vec> witness;
    double witness_value = 0.0;
    /// Tightest b with V(x) >= |x|/C + b over all samples.
    double tightest_b = 0.0;
    int samples_checked = 0;
};

/// Checks V >= -C, |grad V| >= 1/C, max|Hess V| <= C on box samples with |x| >= inner_radius.
ConfinementReport check_confinement(const PotentialSpec& V, const Box& box, double C_candidate, double inner_radius);

struct AccretivityReport {
    bool pass = true;
    double minimal_C = 0.0;
    std::optional<std::pair<Vec, Vec>> witness;
    std::string note;
};

/// Minimal C with |div_x alpha + div_v beta| <= C f on phase-box samples outside the inner radius.
AccretivityReport check_accretivity_bound(const CoefficientSystem& sys, const Box& phase_box, double h, double inner_radius);

struct PresetParams {
    PotentialSpec V;
    Mat Sigma;
    /// Rescaled preset: g as a polynomial in x (d variables).
    std::optional<Polynomial> g;
    /// Bounds checked for g on this box (rescaled preset).
    std::optional<Box> g_box;
    /// Magnetic preset: field components, polynomials in x (3 variables).
    std::vector<Polynomial> field;
};

/// Presets: "standard", "adaptive", "rescaled", "magnetic", "situation2".
/// The adaptive preset takes V on R^n and returns a system with d = 2n, d' = n.
CoefficientSystem preset(const std::string& name, const PresetParams& params);

/// The degenerate model with alpha = v^2 - h, beta = -2 v V', Sigma = 1/2 (d = d' = 1).
CoefficientSystem situation2_system(const PotentialSpec& V);

/// Double-well polynomial x^4/4 - x^2/2 + tilt x.
PotentialSpec double_well(double tilt);
PotentialSpec polynomial_1d(const std::vector<double>& coeffs_low_to_high);

/// Parses a model file of key = value lines grouped in [sections].
CoefficientSystem parse_model_text(const std::string& text);
CoefficientSystem load_model_file(const std::string& path);
std::string model_to_text(const CoefficientSystem& sys);

}  // namespace kfp
