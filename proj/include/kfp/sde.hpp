#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kfp/landscape.hpp"
#include "kfp/model.hpp"

namespace kfp {

struct SdeConfig {
    double h = 0.1;
    double dt = 1e-3;
    double T_max = 10.0;
    int n_traj = 1;
    std::uint64_t seed = 1;
    std::string scheme = "euler-maruyama";
    int record_every = 0;  // keep every k-th state; 0 keeps only the endpoint
    int threads = 1;
    /// dt <= min(h, 1)/50 (dt <= 1/50 when h = 0) and a known scheme.
    void validate() const;
};

struct Trajectory {
    std::vector<double> t;
    std::vector<Vec> states;  // (x, v) at the recorded times
    Vec x, v;                 // final state
    double time = 0.0;        // final time (stopping time when stopped)
    long steps = 0;
    bool stopped = false;
    bool aborted = false;
    long abort_step = -1;
    std::string reason;
};

/// Per-trajectory stream seed from (seed, index) by SplitMix64; schedule independent.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

/// Stop predicate on (x, v); returning true ends the trajectory.
using StopRule = std::function<bool(const Vec&, const Vec&)>;

/// x += alpha dt, v += (beta - 4 S v) dt + sqrt(2 h g dt) xi. Aborts on a non-finite or overflowing state.
Trajectory simulate(const CoefficientSystem& sys, const SdeConfig& cfg, const Vec& x0, const Vec& v0, std::uint64_t index = 0,
                    const StopRule& stop = {});

/// n_traj trajectories, results in index order regardless of the thread count.
std::vector<Trajectory> simulate_ensemble(const CoefficientSystem& sys, const SdeConfig& cfg, const Vec& x0, const Vec& v0, const StopRule& stop = {});

struct HistogramReport {
    double tv = 1.0;              // total variation distance to exp(-2f/h) on the bins
    long samples = 0;
    int bins_per_axis = 0;
    int undersampled_bins = 0;    // reference mass above 1e-4 but fewer than 5 expected samples
    double outside_fraction = 0.0;
};

/// Histogram of the recorded states with t >= burn_in on a tensor grid of `bins` per axis over [lo, hi].
HistogramReport invariant_histogram(const CoefficientSystem& sys, double h, const std::vector<Trajectory>& trajectories, const Vec& lo, const Vec& hi,
                                    int bins, double burn_in = 0.0);

struct MfptStats {
    std::size_t start = 0;             // critical index of the start minimum
    std::vector<std::size_t> targets;  // critical indices of the lower minima
    long escapes = 0;
    long censored = 0;
    long aborted = 0;
    double mean = 0.0;                 // 1 / rate
    double standard_error = 0.0;       // mean / sqrt(escapes)
    double rate = 0.0;                 // escapes / total observed time
    double rate_error = 0.0;
    double censored_fraction = 0.0;
    std::string note;
    std::string to_json() const;
};

/// Escape: x enters the component of {V < (sigma(m) + V(m'))/2} containing a lower minimum m' across a boundary saddle.
/// Sublevel components are resolved on a lattice over `box` (default resolution as in analyze_landscape).
MfptStats mfpt(const CoefficientSystem& sys, const SdeConfig& cfg, const Labeling& lab, std::size_t position, const Box& box, int nodes_per_axis = 0);

}  // namespace kfp
