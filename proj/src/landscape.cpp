#include "kfp/landscape.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace kfp {

namespace {

Vec newton_polish(const PotentialSpec& V, Vec x, int iters, double tol) {
    for (int it = 0; it < iters; ++it) {
        Vec g = V.gradient(x);
        double gn = g.norm();
        if (gn <= tol * 1e-3) break;
        Mat H = V.hessian(x);
        Vec step = H.completeOrthogonalDecomposition().solve(g);
        if (!step.allFinite()) break;
        // Backtrack on |grad V| to keep far seeds from wandering off.
        double t = 1.0;
        Vec xn = x - step;
        while (t > 1e-6 && V.gradient(xn).norm() > gn) {
            t *= 0.5;
            xn = x - t * step;
        }
        if (t <= 1e-6) xn = x - step;
        if ((xn - x).norm() == 0.0) break;
        x = xn;
    }
    return x;
}

}  // namespace

std::vector<CriticalPoint> find_critical_points(const PotentialSpec& V, const Box& box, const CriticalSearchOptions& opt) {
    if (box.dim() != V.d) throw std::invalid_argument("find_critical_points: box dimension mismatch");
    Box seeds = box;
    int per_axis = opt.seeds_per_axis;
    while (per_axis > 5 && std::pow(per_axis, V.d) > 30000) per_axis = per_axis * 2 / 3;
    seeds.samples_per_axis = per_axis;
    std::vector<CriticalPoint> out;
    for (const Vec& s : seeds.lattice()) {
        Vec x = newton_polish(V, s, 200, opt.newton_tol);
        if (!x.allFinite()) continue;
        bool inside = true;
        for (int i = 0; i < V.d; ++i)
            if (x[i] < box.lo[i] - 1e-9 || x[i] > box.hi[i] + 1e-9) inside = false;
        if (!inside) continue;
        double gn = V.gradient(x).norm();
        if (gn > opt.newton_tol) continue;
        // Newton converges only linearly onto a degenerate point, so its endpoints scatter more widely.
        Eigen::SelfAdjointEigenSolver<Mat> hs(V.hessian(x));
        bool flat = hs.eigenvalues().cwiseAbs().minCoeff() < 1e-6 * std::max(1.0, hs.eigenvalues().cwiseAbs().maxCoeff());
        double radius = flat ? std::max(opt.merge_radius, 1e-3) : opt.merge_radius;
        bool dup = false;
        for (auto& c : out)
            if ((c.location - x).norm() <= radius) {
                if (gn < c.grad_norm) {
                    c.location = x;
                    c.grad_norm = gn;
                }
                dup = true;
                break;
            }
        if (dup) continue;
        CriticalPoint c;
        c.location = x;
        c.grad_norm = gn;
        out.push_back(c);
    }
    for (auto& c : out) {
        c.value = V.value(c.location);
        c.hessian = V.hessian(c.location);
        Eigen::SelfAdjointEigenSolver<Mat> es(c.hessian);
        const Vec& ev = es.eigenvalues();
        double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
        bool degenerate = ev.cwiseAbs().minCoeff() < opt.degeneracy_tol * scale;
        c.degenerate = degenerate;
        if (!degenerate) {
            c.index = static_cast<int>((ev.array() < 0).count());
            c.orders.assign(V.d, 2);
            c.weights.assign(ev.data(), ev.data() + ev.size());
            continue;
        }
        const DegenerateData* data = nullptr;
        for (const auto& dd : opt.degenerate_data)
            if (dd.location.size() == V.d && (dd.location - c.location).norm() < 1e-5) data = &dd;
        if (!data) {
            c.index = -1;
            c.flag = "degenerate: local orders and weights required";
            continue;
        }
        c.orders = data->orders;
        c.weights = data->weights;
        for (int nu : c.orders)
            if (nu < 2) throw std::invalid_argument("find_critical_points: orders must be >= 2");
        bool even = std::all_of(c.orders.begin(), c.orders.end(), [](int nu) { return nu % 2 == 0; });
        if (even) {
            c.index = static_cast<int>(std::count_if(c.weights.begin(), c.weights.end(), [](double t) { return t < 0; }));
        } else {
            c.index = -1;
            c.flag = "odd";
        }
    }
    std::sort(out.begin(), out.end(), [](const CriticalPoint& a, const CriticalPoint& b) {
        for (int i = 0; i < a.location.size(); ++i)
            if (a.location[i] != b.location[i]) return a.location[i] < b.location[i];
        return false;
    });
    return out;
}

// ---------------------------------------------------------------- grid

SublevelGraph::SublevelGraph(const PotentialSpec& V, const Box& box, int nodes_per_axis) : dim_(box.dim()), n_(nodes_per_axis), box_(box) {
    if (n_ < 3) throw std::invalid_argument("SublevelGraph: need at least 3 nodes per axis");
    std::size_t total = 1;
    for (int i = 0; i < dim_; ++i) total *= static_cast<std::size_t>(n_);
    if (total > 50'000'000) throw std::invalid_argument("SublevelGraph: grid too large");
    values_.resize(total);
    for (std::size_t id = 0; id < total; ++id) values_[id] = V.value(node_position(id));
}

Vec SublevelGraph::node_position(std::size_t id) const {
    Vec x(dim_);
    for (int i = 0; i < dim_; ++i) {
        int k = static_cast<int>(id % n_);
        id /= n_;
        x[i] = box_.lo[i] + spacing(i) * k;
    }
    return x;
}

std::size_t SublevelGraph::nearest_node(const Vec& x) const {
    std::size_t id = 0, stride = 1;
    for (int i = 0; i < dim_; ++i) {
        long k = std::lround((x[i] - box_.lo[i]) / spacing(i));
        k = std::clamp<long>(k, 0, n_ - 1);
        id += static_cast<std::size_t>(k) * stride;
        stride *= n_;
    }
    return id;
}

std::vector<std::size_t> SublevelGraph::neighbors(std::size_t id) const {
    std::vector<std::size_t> nb;
    std::size_t stride = 1, rest = id;
    for (int i = 0; i < dim_; ++i) {
        int k = static_cast<int>(rest % n_);
        rest /= n_;
        if (k > 0) nb.push_back(id - stride);
        if (k < n_ - 1) nb.push_back(id + stride);
        stride *= n_;
    }
    return nb;
}

namespace {
struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};
}  // namespace

std::vector<int> SublevelGraph::components(double threshold) const {
    std::size_t N = values_.size();
    UnionFind uf(N);
    std::size_t stride = 1;
    for (int ax = 0; ax < dim_; ++ax) {
        for (std::size_t id = 0; id < N; ++id) {
            if (!(values_[id] < threshold)) continue;
            int k = static_cast<int>((id / stride) % n_);
            if (k == n_ - 1) continue;
            std::size_t nb = id + stride;
            if (values_[nb] < threshold) uf.unite(id, nb);
        }
        stride *= n_;
    }
    std::vector<int> label(N, -1);
    std::map<std::size_t, int> root_label;
    for (std::size_t id = 0; id < N; ++id) {
        if (!(values_[id] < threshold)) continue;
        std::size_t r = uf.find(id);
        auto it = root_label.find(r);
        if (it == root_label.end()) it = root_label.emplace(r, static_cast<int>(root_label.size())).first;
        label[id] = it->second;
    }
    return label;
}

double SublevelGraph::value_resolution() const {
    double r = 0.0;
    for (std::size_t id = 0; id < values_.size(); ++id)
        for (std::size_t nb : neighbors(id)) r = std::max(r, std::abs(values_[id] - values_[nb]));
    return r;
}

// ---------------------------------------------------------------- separating saddles

double level_epsilon(const std::vector<CriticalPoint>& crit) {
    std::vector<double> saddle_vals, all_vals;
    for (const auto& c : crit) {
        if (c.is_saddle()) saddle_vals.push_back(c.value);
        if (c.is_saddle() || c.is_minimum()) all_vals.push_back(c.value);
    }
    auto min_gap = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        double g = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < v.size(); ++i) {
            double d = v[i] - v[i - 1];
            if (d > 1e-10 * std::max(1.0, std::abs(v[i]))) g = std::min(g, d);
        }
        return g;
    };
    double g = std::min(min_gap(saddle_vals), min_gap(all_vals));
    if (!std::isfinite(g)) g = 1.0;
    return 0.5 * g;
}

std::optional<std::size_t> descend_to_minimum(const PotentialSpec& V, const std::vector<CriticalPoint>& crit, const Vec& x0) {
    Vec x = x0;
    double eta = 1e-2;
    double fx = V.value(x);
    for (int it = 0; it < 200000; ++it) {
        Vec g = V.gradient(x);
        if (g.norm() < 1e-7) break;
        // Short steps follow the flow; a long accepted step can hop a barrier into a deeper well.
        Vec step = eta * g;
        double cap = 1e-2 * (1.0 + x.norm());
        if (step.norm() > cap) step *= cap / step.norm();
        Vec xn = x - step;
        double fn = V.value(xn);
        if (fn < fx) {
            x = xn;
            fx = fn;
            eta = std::min(eta * 1.2, 1.0);
        } else {
            eta *= 0.5;
            if (eta < 1e-14) break;
        }
    }
    x = newton_polish(V, x, 50, 1e-12);
    std::optional<std::size_t> best;
    double bd = 1e-4;
    for (std::size_t i = 0; i < crit.size(); ++i) {
        if (!crit[i].is_minimum()) continue;
        double dd = (crit[i].location - x).norm();
        if (dd < bd) {
            bd = dd;
            best = i;
        }
    }
    return best;
}

static Vec unstable_direction(const CriticalPoint& s) {
    Eigen::SelfAdjointEigenSolver<Mat> es(s.hessian);
    return es.eigenvectors().col(0);
}

SeparatingResult separating_saddles(const PotentialSpec& V, const std::vector<CriticalPoint>& crit, const SublevelGraph& graph) {
    SeparatingResult R;
    R.eps_level = level_epsilon(crit);
    double min_spacing = std::numeric_limits<double>::infinity();
    for (int i = 0; i < graph.dim(); ++i) min_spacing = std::min(min_spacing, graph.spacing(i));
    std::map<double, std::vector<int>> comp_cache;
    for (std::size_t si = 0; si < crit.size(); ++si) {
        const auto& s = crit[si];
        if (!s.is_saddle()) continue;
        Vec e = unstable_direction(s);
        double delta = 1e-3;
        auto mp = descend_to_minimum(V, crit, s.location + delta * e);
        auto mm = descend_to_minimum(V, crit, s.location - delta * e);
        if (!mp || !mm) {
            R.diagnostics.push_back({si, "descent from saddle did not reach a listed minimum"});
            continue;
        }
        R.descent_minima[si] = {*mp, *mm};
        double t = s.value - R.eps_level;
        // Neck width along the unstable direction, in cells.
        double width = 0.0;
        for (int sign : {1, -1}) {
            double r = 0.0;
            while (r < 10.0 && V.value(s.location + sign * r * e) >= t) r += 0.25 * min_spacing;
            width += r;
        }
        if (width / min_spacing < 8.0)
            R.diagnostics.push_back({si, "resolution insufficient: neck " + std::to_string(width / min_spacing) + " cells"});
        if (*mp == *mm) continue;
        auto it = comp_cache.find(t);
        if (it == comp_cache.end()) it = comp_cache.emplace(t, graph.components(t)).first;
        const auto& lab = it->second;
        int a = lab[graph.nearest_node(crit[*mp].location)];
        int b = lab[graph.nearest_node(crit[*mm].location)];
        if (a < 0 || b < 0) {
            R.diagnostics.push_back({si, "resolution insufficient: a descent minimum is not below the level on the grid"});
            continue;
        }
        if (a != b) R.separating.push_back(si);
    }
    return R;
}

// ---------------------------------------------------------------- labeling

std::size_t Labeling::position_of(std::size_t crit_index) const {
    for (std::size_t k = 0; k < minima.size(); ++k)
        if (minima[k] == crit_index) return k;
    throw std::out_of_range("labeling: critical point is not a labeled minimum");
}

Labeling label_minima(const PotentialSpec& V, const std::vector<CriticalPoint>& crit, const SublevelGraph& graph, bool enforce_gener,
                      double gener_tol) {
    Labeling L;
    L.critical = crit;
    L.separating = separating_saddles(V, crit, graph);
    L.eps_level = L.separating.eps_level;
    std::vector<std::size_t> mins;
    for (std::size_t i = 0; i < crit.size(); ++i)
        if (crit[i].is_minimum()) mins.push_back(i);
    if (mins.empty()) throw std::runtime_error("label_minima: no minima found");
    std::size_t global = *std::min_element(mins.begin(), mins.end(), [&](auto a, auto b) { return crit[a].value < crit[b].value; });
    L.minima.push_back(global);
    L.level_index.push_back(1);
    L.sigma.push_back(std::numeric_limits<double>::infinity());
    L.S.push_back(std::numeric_limits<double>::infinity());
    L.j_map.push_back({});
    L.E_component.push_back(-1);

    std::vector<double> levels;
    for (std::size_t s : L.separating.separating) levels.push_back(crit[s].value);
    std::sort(levels.begin(), levels.end(), std::greater<>());
    for (double v : levels)
        if (L.sigma_levels.empty() || L.sigma_levels.back() - v > 1e-10 * std::max(1.0, std::abs(v))) L.sigma_levels.push_back(v);

    std::set<std::size_t> labeled = {global};
    for (std::size_t li = 0; li < L.sigma_levels.size(); ++li) {
        double sigma = L.sigma_levels[li];
        auto comp = graph.components(sigma - L.eps_level);
        std::map<int, std::vector<std::size_t>> by_comp;
        for (std::size_t m : mins) {
            int c = comp[graph.nearest_node(crit[m].location)];
            if (c >= 0) by_comp[c].push_back(m);
        }
        for (auto& [c, ms] : by_comp) {
            bool has_labeled = std::any_of(ms.begin(), ms.end(), [&](auto m) { return labeled.count(m) > 0; });
            if (has_labeled) continue;
            std::size_t m = *std::min_element(ms.begin(), ms.end(), [&](auto a, auto b) { return crit[a].value < crit[b].value; });
            std::vector<std::size_t> js;
            for (std::size_t s : L.separating.separating) {
                if (std::abs(crit[s].value - sigma) > 1e-10 * std::max(1.0, std::abs(sigma))) continue;
                auto [mp, mm] = L.separating.descent_minima.at(s);
                int cp = comp[graph.nearest_node(crit[mp].location)];
                int cm = comp[graph.nearest_node(crit[mm].location)];
                if (cp == c || cm == c) js.push_back(s);
            }
            if (js.empty()) throw std::runtime_error("label_minima: critical component without boundary saddle (grid too coarse?)");
            L.minima.push_back(m);
            L.level_index.push_back(static_cast<int>(li) + 2);
            L.sigma.push_back(sigma);
            L.S.push_back(sigma - crit[m].value);
            L.j_map.push_back(js);
            L.E_component.push_back(c);
            labeled.insert(m);
        }
    }
    for (std::size_t m : mins)
        if (!labeled.count(m)) throw std::runtime_error("label_minima: a minimum was left unlabeled (grid resolution?)");
    if (enforce_gener) {
        GenerVerdict v = check_gener(L, graph, gener_tol);
        if (!v.pass) throw LabelingError("genericity condition violated: " + v.detail, v);
    }
    return L;
}

GenerVerdict check_gener(const Labeling& L, const SublevelGraph& graph, double gener_tol) {
    GenerVerdict v;
    const auto& crit = L.critical;
    std::vector<std::size_t> mins;
    for (std::size_t i = 0; i < crit.size(); ++i)
        if (crit[i].is_minimum()) mins.push_back(i);
    std::ostringstream os;
    for (std::size_t k = 0; k < L.minima.size(); ++k) {
        std::size_t m = L.minima[k];
        std::vector<int> comp;
        if (L.E_component[k] >= 0) comp = graph.components(L.sigma[k] - L.eps_level);
        for (std::size_t o : mins) {
            if (o == m) continue;
            bool inside = L.E_component[k] < 0 || comp[graph.nearest_node(crit[o].location)] == L.E_component[k];
            if (inside && crit[o].value <= crit[m].value + gener_tol) {
                v.pass = false;
                v.tied_minima.emplace_back(m, o);
                os << "minimum at " << crit[m].location.transpose() << " is not the unique global minimum of E(m) (tie with "
                   << crit[o].location.transpose() << "); ";
            }
        }
    }
    std::map<std::size_t, int> use;
    for (const auto& js : L.j_map)
        for (std::size_t s : js) ++use[s];
    for (auto [s, n] : use)
        if (n > 1) {
            v.pass = false;
            v.shared_saddles.push_back(s);
            os << "saddle at " << crit[s].location.transpose() << " belongs to " << n << " j-sets; ";
        }
    v.detail = v.pass ? "ok" : os.str();
    return v;
}

Labeling analyze_landscape(const PotentialSpec& V, const Box& box, const LandscapeOptions& opt) {
    auto crit = find_critical_points(V, box, opt.search);
    int n = opt.grid_nodes_per_axis;
    if (n <= 0) n = V.d == 1 ? 2001 : (V.d == 2 ? 301 : 61);
    SublevelGraph graph(V, box, n);
    return label_minima(V, crit, graph, opt.enforce_gener);
}

std::string labeling_json(const Labeling& L) {
    nlohmann::json j;
    auto vec = [](const Vec& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json("inf"); };
    j["eps_level"] = L.eps_level;
    j["sigma_levels"] = L.sigma_levels;
    for (std::size_t k = 0; k < L.minima.size(); ++k) {
        const auto& c = L.critical[L.minima[k]];
        nlohmann::json r;
        r["location"] = vec(c.location);
        r["value"] = c.value;
        r["S"] = num(L.S[k]);
        r["sigma"] = num(L.sigma[k]);
        r["level"] = L.level_index[k];
        nlohmann::json sl = nlohmann::json::array();
        for (std::size_t s : L.j_map[k]) sl.push_back(vec(L.critical[s].location));
        r["saddle_locations"] = sl;
        j["minima"].push_back(r);
    }
    for (std::size_t s : L.separating.separating) j["separating_saddles"].push_back(vec(L.critical[s].location));
    for (const auto& d : L.separating.diagnostics) j["diagnostics"].push_back(d.message);
    return j.dump(2);
}

std::string disconnectivity_csv(const Labeling& L) {
    std::ostringstream os;
    os.precision(17);
    os << "minimum,minimum_value,saddle,saddle_value\n";
    for (std::size_t k = 0; k < L.minima.size(); ++k)
        for (std::size_t s : L.j_map[k]) os << L.minima[k] << ',' << L.critical[L.minima[k]].value << ',' << s << ',' << L.critical[s].value << '\n';
    return os.str();
}

}  // namespace kfp
