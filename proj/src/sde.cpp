#include "kfp/sde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace kfp {

void SdeConfig::validate() const {
    if (scheme != "euler-maruyama") throw std::invalid_argument("unknown scheme '" + scheme + "'");
    if (!(h >= 0)) throw std::invalid_argument("h must be nonnegative");
    if (!(dt > 0)) throw std::invalid_argument("dt must be positive");
    double cap = (h > 0 ? std::min(h, 1.0) : 1.0) / 50;
    if (dt > cap * (1 + 1e-12)) throw std::invalid_argument("dt = " + std::to_string(dt) + " exceeds min(h, 1)/50 = " + std::to_string(cap));
    if (!(T_max > 0)) throw std::invalid_argument("T_max must be positive");
    if (n_traj < 1) throw std::invalid_argument("n_traj must be at least 1");
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(seed) ^ index);
}

namespace {

struct Drift {
    int d, dp;
    std::vector<CompiledPolynomial> alpha, beta;
    CompiledPolynomial g;
    bool has_g;
    Mat S4;
    explicit Drift(const CoefficientSystem& sys) : d(sys.d), dp(sys.dp), has_g(sys.has_noise_multiplier()), S4(4 * sys.S()) {
        for (const auto& a : sys.alpha) alpha.emplace_back(a);
        for (const auto& b : sys.beta) beta.emplace_back(b);
        if (has_g) g = CompiledPolynomial(sys.noise_multiplier);
    }
};

}  // namespace

Trajectory simulate(const CoefficientSystem& sys, const SdeConfig& cfg, const Vec& x0, const Vec& v0, std::uint64_t index, const StopRule& stop) {
    cfg.validate();
    if (x0.size() != sys.d || v0.size() != sys.dp) throw std::invalid_argument("simulate: initial state has the wrong dimension");
    Drift D(sys);
    const int d = sys.d, dp = sys.dp;
    std::mt19937_64 rng(stream_seed(cfg.seed, index));
    std::normal_distribution<double> nd;
    std::vector<double> pt(sys.nvars());
    std::vector<double> ax(d), bv(dp);
    Trajectory tr;
    Vec x = x0, v = v0;
    const long nsteps = static_cast<long>(std::ceil(cfg.T_max / cfg.dt - 1e-9));
    const double sq = std::sqrt(2 * cfg.h * cfg.dt);
    auto record = [&](double t) {
        Vec s(d + dp);
        s << x, v;
        tr.t.push_back(t);
        tr.states.push_back(s);
    };
    if (cfg.record_every > 0) record(0.0);
    long n = 0;
    for (; n < nsteps; ++n) {
        for (int i = 0; i < d; ++i) pt[i] = x[i];
        for (int k = 0; k < dp; ++k) pt[d + k] = v[k];
        pt[d + dp] = cfg.h;
        for (int i = 0; i < d; ++i) ax[i] = D.alpha[i](pt.data());
        for (int k = 0; k < dp; ++k) {
            double s = 0.0;
            for (int l = 0; l < dp; ++l) s += D.S4(k, l) * v[l];
            bv[k] = D.beta[k](pt.data()) - s;
        }
        double amp = D.has_g ? sq * std::sqrt(std::max(0.0, D.g(pt.data()))) : sq;
        for (int i = 0; i < d; ++i) x[i] += ax[i] * cfg.dt;
        for (int k = 0; k < dp; ++k) v[k] += bv[k] * cfg.dt + amp * nd(rng);
        bool bad = !x.allFinite() || !v.allFinite() || x.cwiseAbs().maxCoeff() > 1e8 || v.cwiseAbs().maxCoeff() > 1e8;
        if (bad) {
            tr.aborted = true;
            tr.abort_step = n + 1;
            tr.reason = "non-finite or overflowing state at step " + std::to_string(n + 1) + " (dt too large or V not confining)";
            ++n;
            break;
        }
        double t = (n + 1) * cfg.dt;
        if (cfg.record_every > 0 && (n + 1) % cfg.record_every == 0) record(t);
        if (stop && stop(x, v)) {
            tr.stopped = true;
            ++n;
            break;
        }
    }
    tr.steps = n;
    tr.time = n * cfg.dt;
    tr.x = x;
    tr.v = v;
    return tr;
}

std::vector<Trajectory> simulate_ensemble(const CoefficientSystem& sys, const SdeConfig& cfg, const Vec& x0, const Vec& v0, const StopRule& stop) {
    cfg.validate();
    std::vector<Trajectory> out(cfg.n_traj);
    int nt = std::max(1, std::min(cfg.threads, cfg.n_traj));
    if (nt == 1) {
        for (int i = 0; i < cfg.n_traj; ++i) out[i] = simulate(sys, cfg, x0, v0, i, stop);
        return out;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < nt; ++w)
        pool.emplace_back([&, w] {
            for (int i = w; i < cfg.n_traj; i += nt) out[i] = simulate(sys, cfg, x0, v0, i, stop);
        });
    for (auto& t : pool) t.join();
    return out;
}

HistogramReport invariant_histogram(const CoefficientSystem& sys, double h, const std::vector<Trajectory>& trajectories, const Vec& lo, const Vec& hi,
                                    int bins, double burn_in) {
    const int n = sys.d + sys.dp;
    if (lo.size() != n || hi.size() != n) throw std::invalid_argument("invariant_histogram: box dimension differs from d + d'");
    if (bins < 1) throw std::invalid_argument("invariant_histogram: bins must be positive");
    std::size_t total = 1;
    for (int a = 0; a < n; ++a) total *= bins;
    HistogramReport rep;
    rep.bins_per_axis = bins;
    std::vector<double> emp(total, 0.0), ref(total, 0.0);
    long outside = 0;
    for (const auto& tr : trajectories)
        for (std::size_t k = 0; k < tr.states.size(); ++k) {
            if (tr.t[k] < burn_in) continue;
            ++rep.samples;
            std::size_t id = 0, stride = 1;
            bool in = true;
            for (int a = 0; a < n; ++a) {
                double u = (tr.states[k][a] - lo[a]) / (hi[a] - lo[a]);
                if (!(u >= 0 && u < 1)) {
                    in = false;
                    break;
                }
                id += static_cast<std::size_t>(u * bins) * stride;
                stride *= bins;
            }
            if (in)
                emp[id] += 1;
            else
                ++outside;
        }
    if (rep.samples == 0) throw std::invalid_argument("invariant_histogram: no samples after burn-in");
    // Reference bin masses of exp(-2 f / h) by a 4-point midpoint rule per axis.
    const int sub = 4;
    std::size_t subtotal = 1;
    for (int a = 0; a < n; ++a) subtotal *= sub;
    double fmin = std::numeric_limits<double>::infinity();
    std::vector<std::pair<std::size_t, double>> pts;
    pts.reserve(total * subtotal);
    for (std::size_t b = 0; b < total; ++b)
        for (std::size_t s = 0; s < subtotal; ++s) {
            Vec p(n);
            std::size_t bb = b, ss = s;
            for (int a = 0; a < n; ++a) {
                int bi = static_cast<int>(bb % bins), si = static_cast<int>(ss % sub);
                bb /= bins;
                ss /= sub;
                double w = (hi[a] - lo[a]) / bins;
                p[a] = lo[a] + w * (bi + (si + 0.5) / sub);
            }
            double f = eval_f(sys, p.head(sys.d), p.tail(sys.dp));
            fmin = std::min(fmin, f);
            pts.emplace_back(b, f);
        }
    double z = 0.0;
    for (const auto& [b, f] : pts) {
        double w = std::exp(-2 * (f - fmin) / h);
        ref[b] += w;
        z += w;
    }
    double tv = static_cast<double>(outside) / rep.samples;
    for (std::size_t b = 0; b < total; ++b) {
        ref[b] /= z;
        double pe = emp[b] / rep.samples;
        tv += std::abs(pe - ref[b]);
        if (ref[b] > 1e-4 && ref[b] * rep.samples < 5) ++rep.undersampled_bins;
    }
    rep.tv = 0.5 * tv;
    rep.outside_fraction = static_cast<double>(outside) / rep.samples;
    return rep;
}

std::string MfptStats::to_json() const {
    nlohmann::json j;
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
    j["start"] = start;
    j["targets"] = targets;
    j["escapes"] = escapes;
    j["censored"] = censored;
    j["aborted"] = aborted;
    j["censored_fraction"] = censored_fraction;
    if (escapes > 0) {
        j["mean"] = num(mean);
        j["standard_error"] = num(standard_error);
        j["rate"] = num(rate);
        j["rate_error"] = num(rate_error);
    } else {
        j["mean"] = nullptr;
        j["rate"] = nullptr;
    }
    j["note"] = note;
    return j.dump(2);
}

MfptStats mfpt(const CoefficientSystem& sys, const SdeConfig& cfg, const Labeling& lab, std::size_t position, const Box& box, int nodes_per_axis) {
    cfg.validate();
    MfptStats st;
    st.start = lab.minima.at(position);
    if (sys.landscape_d() != sys.d) st.note = "escape measured on x-barrier crossings only; the auxiliary coordinates carry no barrier";
    if (position == 0) {
        st.censored = cfg.n_traj;
        st.censored_fraction = 1.0;
        st.note += std::string(st.note.empty() ? "" : "; ") + "global minimum: no lower well, all trajectories censored";
        st.mean = std::numeric_limits<double>::infinity();
        return st;
    }
    const double sigma = lab.sigma[position];
    for (std::size_t s : lab.j_map[position]) {
        auto it = lab.separating.descent_minima.find(s);
        if (it == lab.separating.descent_minima.end()) continue;
        for (std::size_t m : {it->second.first, it->second.second})
            if (m != st.start && std::find(st.targets.begin(), st.targets.end(), m) == st.targets.end()) st.targets.push_back(m);
    }
    if (st.targets.empty()) throw std::runtime_error("mfpt: no lower minimum adjacent to the start well");

    int n = nodes_per_axis > 0 ? nodes_per_axis : (sys.V.d == 1 ? 2001 : (sys.V.d == 2 ? 301 : 61));
    SublevelGraph graph(sys.V, box, n);
    struct Target {
        std::vector<int> comp;
        int label;
    };
    std::vector<Target> targets;
    for (std::size_t m : st.targets) {
        double level = 0.5 * (sigma + lab.critical[m].value);
        Target t{graph.components(level), -1};
        t.label = t.comp[graph.nearest_node(lab.critical[m].location)];
        if (t.label < 0) throw std::runtime_error("mfpt: target minimum not resolved on the lattice");
        targets.push_back(std::move(t));
    }
    StopRule stop = [&](const Vec& x, const Vec&) {
        std::size_t id = graph.nearest_node(x);
        for (const auto& t : targets)
            if (t.comp[id] == t.label) return true;
        return false;
    };
    SdeConfig c = cfg;
    c.record_every = 0;
    Vec x0 = Vec::Zero(sys.d);
    x0.head(lab.critical[st.start].location.size()) = lab.critical[st.start].location;
    auto runs = simulate_ensemble(sys, c, x0, Vec::Zero(sys.dp), stop);
    double observed = 0.0;
    for (const auto& r : runs) {
        if (r.aborted) {
            ++st.aborted;
            continue;
        }
        observed += r.time;
        if (r.stopped)
            ++st.escapes;
        else
            ++st.censored;
    }
    st.censored_fraction = static_cast<double>(st.censored) / cfg.n_traj;
    if (st.escapes > 0) {
        st.rate = st.escapes / observed;
        st.rate_error = st.rate / std::sqrt(static_cast<double>(st.escapes));
        st.mean = 1.0 / st.rate;
        st.standard_error = st.mean / std::sqrt(static_cast<double>(st.escapes));
    } else {
        st.mean = std::numeric_limits<double>::infinity();
        st.note += std::string(st.note.empty() ? "" : "; ") + "no escapes within T_max: censored-only report";
    }
    return st;
}

}  // namespace kfp
