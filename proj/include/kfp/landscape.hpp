#pragma once

#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kfp/model.hpp"

namespace kfp {

struct CriticalPoint {
    Vec location;
    double value = 0.0;
    /// Number of negative Hessian eigenvalues (Morse case); -1 when degenerate without order data.
    int index = -1;
    Mat hessian;
    bool degenerate = false;
    std::vector<int> orders;      // nu_i (user-supplied in the degenerate case, 2 otherwise)
    std::vector<double> weights;  // t_i
    std::string flag;
    double grad_norm = 0.0;
    bool is_minimum() const { return index == 0; }
    bool is_saddle() const { return index == 1; }
};

/// Local normal-form data for a degenerate critical point.
struct DegenerateData {
    Vec location;
    std::vector<double> weights;
    std::vector<int> orders;
};

struct CriticalSearchOptions {
    int seeds_per_axis = 41;
    double merge_radius = 1e-6;
    double newton_tol = 1e-12;
    double degeneracy_tol = 1e-8;
    std::vector<DegenerateData> degenerate_data;
};

std::vector<CriticalPoint> find_critical_points(const PotentialSpec& V, const Box& box, const CriticalSearchOptions& opt = {});

/// Uniform lattice over a box with V sampled at the nodes; sublevel components by union-find.
class SublevelGraph {
public:
    SublevelGraph(const PotentialSpec& V, const Box& box, int nodes_per_axis);
    int dim() const { return dim_; }
    int nodes_per_axis() const { return n_; }
    std::size_t size() const { return values_.size(); }
    const std::vector<double>& values() const { return values_; }
    double spacing(int axis) const { return (box_.hi[axis] - box_.lo[axis]) / (n_ - 1); }
    const Box& box() const { return box_; }
    Vec node_position(std::size_t id) const;
    std::size_t nearest_node(const Vec& x) const;
    std::vector<std::size_t> neighbors(std::size_t id) const;
    /// Component label per node for {V < threshold}; -1 for nodes at or above the threshold.
    std::vector<int> components(double threshold) const;
    /// Largest |V(p) - V(q)| over neighboring nodes: the grid value resolution.
    double value_resolution() const;

private:
    int dim_;
    int n_;
    Box box_;
    std::vector<double> values_;
};

struct SaddleDiagnostic {
    std::size_t saddle = 0;
    std::string message;
};

struct SeparatingResult {
    std::vector<std::size_t> separating;  // indices into the critical list
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> descent_minima;  // saddle -> (m+, m-)
    std::vector<SaddleDiagnostic> diagnostics;
    double eps_level = 0.0;
};

double level_epsilon(const std::vector<CriticalPoint>& crit);

/// Gradient descent endpoint from x, matched to the nearest listed minimum.
std::optional<std::size_t> descend_to_minimum(const PotentialSpec& V, const std::vector<CriticalPoint>& crit, const Vec& x0);

SeparatingResult separating_saddles(const PotentialSpec& V, const std::vector<CriticalPoint>& crit, const SublevelGraph& graph);

struct Labeling {
    std::vector<std::size_t> minima;               // ordered m_{i,j}; minima[0] is the global minimum
    std::vector<int> level_index;                  // i of m_{i,j} (1-based, 1 for the global minimum)
    std::vector<double> sigma;                     // sigma(m), +inf for the global minimum
    std::vector<double> S;                         // S(m) = sigma(m) - V(m)
    std::vector<std::vector<std::size_t>> j_map;   // separating saddles on the boundary of E(m); empty means fictive s1
    std::vector<int> E_component;                  // component label of E(m) at threshold sigma(m) - eps (-1: whole space)
    std::vector<double> sigma_levels;              // sigma_2 > sigma_3 > ...
    std::vector<CriticalPoint> critical;
    SeparatingResult separating;
    double eps_level = 0.0;
    std::size_t position_of(std::size_t crit_index) const;
};

struct GenerVerdict {
    bool pass = true;
    std::string detail;
    std::vector<std::pair<std::size_t, std::size_t>> tied_minima;  // critical indices
    std::vector<std::size_t> shared_saddles;                        // critical indices
};

struct LabelingError : std::runtime_error {
    GenerVerdict verdict;
    LabelingError(const std::string& what, GenerVerdict v) : std::runtime_error(what), verdict(std::move(v)) {}
};

/// Recursive labeling of minima by separating-saddle levels. Throws LabelingError when enforce_gener is set and (Gener) fails.
Labeling label_minima(const PotentialSpec& V, const std::vector<CriticalPoint>& crit, const SublevelGraph& graph, bool enforce_gener = true,
                      double gener_tol = 1e-9);

GenerVerdict check_gener(const Labeling& lab, const SublevelGraph& graph, double gener_tol = 1e-9);

/// One-shot analysis: critical points, grid, separating saddles and labeling on a box.
struct LandscapeOptions {
    CriticalSearchOptions search;
    int grid_nodes_per_axis = 0;  // 0: 2001 in 1-D, 301 in 2-D, 61 in 3-D
    bool enforce_gener = true;
};
Labeling analyze_landscape(const PotentialSpec& V, const Box& box, const LandscapeOptions& opt = {});

std::string labeling_json(const Labeling& lab);
std::string disconnectivity_csv(const Labeling& lab);

}  // namespace kfp
