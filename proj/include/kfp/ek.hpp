#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kfp/landscape.hpp"
#include "kfp/spectral.hpp"
#include "kfp/wkb.hpp"

namespace kfp {

/// WKB output attached to one separating saddle.
struct SaddleData {
    std::size_t saddle = 0;  // index into the critical list
    Vec location;
    double a = 0.0;
    int b = 0;
    Mat f_hessian;
    std::shared_ptr<const SaddleSeries> series;
};

struct MinimumPrediction {
    std::size_t minimum = 0;  // index into the critical list
    Vec location;
    bool global = false;
    double S = 0.0;           // +inf for the global minimum
    int mu = 0;
    double v = 0.0;
    std::vector<std::size_t> contributing;  // saddles attaining the smallest b
    std::string refused;                    // reason when no prediction could be made (partial mode)
    /// v h^mu exp(-2 S / h); zero for the global minimum.
    double lambda(double h) const;
};

struct EKPrediction {
    std::vector<MinimumPrediction> rows;  // in labeling order, global minimum first
    /// Rows "minimum,x,S,mu,v,h,lambda", one per (minimum, h).
    std::string to_csv(const std::vector<double>& hs) const;
};

struct PredictionRefused : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Assembles the prefactor and exponent per minimum. Throws PredictionRefused when a boundary saddle has no data,
/// unless `partial` is set, in which case the row carries the reason and a NaN prefactor.
EKPrediction predict(const Labeling& lab, const std::map<std::size_t, SaddleData>& saddles, const std::map<std::size_t, Mat>& f_hessian_at_minima,
                     bool partial = false);

/// Runs the saddle solver and the (a, b) extraction for every saddle on a minimum's boundary.
std::map<std::size_t, SaddleData> saddle_data_for(const CoefficientSystem& sys, const Labeling& lab, SeriesCaps caps = {});
std::map<std::size_t, Mat> minimum_hessians(const CoefficientSystem& sys, const Labeling& lab);

/// Even C^2 cutoff: 1 on [-1, 1], 0 outside [-2, 2], degree-7 blend in between.
double cutoff_profile(double r);

/// C_{s,h} = int_0^inf cutoff(r / tau) exp(-r^2 / 2h) dr.
double channel_normalization(double tau, double h);

struct QuasimodeOptions {
    double tau_factor = 0.3;    // tau = factor * min over adjacent minima |eta . (m - s)|
    double delta_factor = 0.1;  // see default_delta
    std::optional<double> tau;
    std::optional<double> delta;
};

struct Quasimode {
    std::size_t minimum = 0;
    bool global = false;
    double tau = 0.0;
    double delta = 0.0;
    Vec psi;                 // unnormalized grid function
    Vec phi;                 // psi / |psi|
    double norm = 0.0;       // |psi| with the grid quadrature weight
    double laplace_norm = 0.0;  // 2 (h pi)^{n/4} det(Hess_m f)^{-1/4}
    std::vector<double> channel_constants;  // C_{s,h} per boundary saddle
    std::vector<unsigned char> support;     // psi != 0
    std::vector<signed char> region;        // 1: E+, -1: E-, 2: saddle channel, 0: outside the cutoff set
    std::string diagnostic;
};

/// Grid quasimode of the minimum at labeling position `position`.
Quasimode build_quasimode(const CoefficientSystem& sys, const Labeling& lab, std::size_t position, const std::map<std::size_t, SaddleData>& saddles,
                          double h, const GridBox& grid, const QuasimodeOptions& opt = {});

/// delta = factor * smallest gap between consecutive levels of {saddle levels, lowest f on the x-faces of the box}.
double default_delta(const CoefficientSystem& sys, const Labeling& lab, const GridBox& grid, double factor = 0.1);

/// Pairwise inner products of the normalized quasimodes.
Mat gram(const std::vector<Quasimode>& q, const GridBox& grid);

/// <P phi, phi> with the grid quadrature weight.
double rayleigh(const OperatorMatrix& op, const Quasimode& q);

struct QuasimodeResiduals {
    double rayleigh = 0.0;
    double residual_ratio = 0.0;  // |P phi|^2 / <P phi, phi>
    double adjoint_ratio = 0.0;   // |P^T phi|^2 / <P phi, phi>
};
QuasimodeResiduals quasimode_residuals(const OperatorMatrix& op, const Quasimode& q);

/// Binary raster: int32 rank, int32 nodes per axis, float64 lower corner and spacing per axis, then row-major float64 data
/// (first axis slowest).
void write_raster(const std::string& path, const GridBox& grid, const Vec& values);

}  // namespace kfp
