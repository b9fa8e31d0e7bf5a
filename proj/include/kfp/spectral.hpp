#pragma once

#include <Eigen/Sparse>
#include <complex>
#include <string>
#include <vector>

#include "kfp/model.hpp"

namespace kfp {

using SpMat = Eigen::SparseMatrix<double>;
using CVec = Eigen::VectorXcd;

/// Tensor grid of interior nodes over a phase-space box; the box faces carry homogeneous Dirichlet data.
struct GridBox {
    int d = 1;
    int dp = 1;
    Vec lo, hi;               // size d + d'
    std::vector<int> nodes;   // interior nodes per axis
    double spacing(int axis) const { return (hi[axis] - lo[axis]) / (nodes[axis] + 1); }
    double coordinate(int axis, int i) const { return lo[axis] + (i + 1) * spacing(axis); }
    std::size_t size() const;
    std::size_t stride(int axis) const;
    /// Phase point (x, v) of a node.
    Vec point(std::size_t id) const;
    double cell_volume() const;
};

struct GridOptions {
    int nx = 400;               // interior nodes per x axis
    int nv = 200;               // interior nodes per v axis
    double margin = 2.0;        // x-box: V >= max critical value + margin on the faces
    double search_radius = 10;  // critical point search cube
    std::size_t max_unknowns = 1500000;
};

/// x-box from the critical values; v half-width max(3, sqrt(60 h)) / sqrt(2 S_kk).
GridBox automatic_grid(const CoefficientSystem& sys, double h, const GridOptions& opt = {});

struct OperatorMatrix {
    GridBox grid;
    double h = 0.0;
    SpMat X;   // antisymmetric transport part
    SpMat N;   // symmetric part: velocity Gummel operator times g, plus x-stabilization
    SpMat P;   // X + N
    double stabilization = 0.0;
    double norm1 = 0.0;  // max column sum of |P|
};

struct DiscretizationOptions {
    /// Multiplier of the x-stabilization Dx^4/h^3 sum Q_x^T Q_x; 0 disables it.
    double stabilization_factor = 1.0;
};

/// P = X + N on the grid. Throws std::length_error when the grid exceeds the memory guard.
OperatorMatrix discretize_P(const CoefficientSystem& sys, double h, const GridBox& grid, const DiscretizationOptions& opt = {},
                            std::size_t max_unknowns = 1500000);

/// Symmetric discretization of -h^2 Lap + |V'|^2 - h V'' on n interior nodes of [lo, hi] (1-D).
SpMat discretize_witten(const PotentialSpec& V, double h, double lo, double hi, int n);

/// Samples exp(-(f - f_min)/h) on the grid nodes.
Vec equilibrium_vector(const CoefficientSystem& sys, const GridBox& grid, double h);

struct SpectrumResult {
    CVec eigenvalues;                 // sorted by modulus
    Eigen::MatrixXcd eigenvectors;    // unit columns
    std::vector<double> residuals;    // |(P - lambda) u| for unit u
    double shift = 0.0;
    int krylov_dim = 0;
    bool converged = false;
    double threshold = 0.0;
    int cluster_size = 0;             // eigenvalues with |lambda| <= threshold
    double gap = 0.0;                 // smallest |Re lambda| outside the cluster
    double norm = 0.0;
};

/// Shift-invert Arnoldi at 0 for the k eigenvalues of smallest modulus; residual target tol * |P|_1.
SpectrumResult small_eigs(const SpMat& P, int k, double cluster_threshold, double tol = 1e-8, unsigned seed = 1);

/// Estimate of |(P - z)^{-1}| by power iteration on R^* R.
double resolvent_norm(const SpMat& P, std::complex<double> z, int iterations = 40);

struct SemigroupTrace {
    std::vector<double> times;
    std::vector<double> distance_to_limit;       // |u(t) - Pi_0 u0| / |u0|
    std::vector<std::vector<double>> projections; // <w_i, u(t)> per observer
    Vec final_state;
    Vec limit;                                    // Pi_0 u0 = <e, u0>/|e|^2 e
    int halvings = 0;
};

/// Crank-Nicolson for h du/dt + P u = 0 on log-spaced times in [t_start, t_end], `per_decade` steps per decade.
/// The step doubles every block; each block reuses one factorization.
SemigroupTrace evolve(const SpMat& P, const Vec& u0, double h, double t_start, double t_end, const Vec& kernel,
                      const std::vector<Vec>& observers = {}, int per_decade = 64);

/// Coordinate text export "row col value".
std::string to_coordinate_text(const SpMat& A);

}  // namespace kfp
