#include "kfp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "kfp/hypo.hpp"
#include "kfp/landscape.hpp"
#include "kfp/wkb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kfp {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t hsh = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        hsh ^= c;
        hsh *= 0x100000001b3ULL;
    }
    return hsh;
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"label", "hypo", "wkb", "ek", "spectrum", "sde"};
    return names;
}

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    return it == j.end() || it->is_null() ? fallback : it->get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
    }
}

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::string fmt(double x) {
    if (!std::isfinite(x)) return "NA";
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

std::string loc_text(const Vec& v) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    return os.str();
}

json verdict_json(const Verdict& v) {
    json j{{"pass", v.pass}, {"value", num(v.value)}, {"detail", v.detail}};
    j["witness"] = v.witness ? vec_json(*v.witness) : json(nullptr);
    return j;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::string& base_dir) {
    reject_unknown(j, {"format_version", "model", "h_sweep", "landscape", "grid", "wkb", "ek", "sde", "seed", "threads", "out"}, "the top level");
    ExperimentConfig c;
    c.format_version = get_or(j, "format_version", kReportFormat);
    if (c.format_version != kReportFormat) throw std::invalid_argument("config: unsupported format_version " + std::to_string(c.format_version));
    if (!j.contains("model")) throw std::invalid_argument("config: 'model' is required");
    const json& m = j.at("model");
    reject_unknown(m, {"file", "text", "preset", "potential", "sigma"}, "model");
    if (m.contains("file")) {
        fs::path p = m.at("file").get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
        c.model_file = p.lexically_normal().string();
    }
    c.model_text = get_or<std::string>(m, "text", "");
    c.preset = get_or<std::string>(m, "preset", "standard");
    if (m.contains("potential")) {
        const json& p = m.at("potential");
        reject_unknown(p, {"dim", "terms"}, "model.potential");
        c.potential_dim = get_or(p, "dim", 1);
        for (const auto& t : p.at("terms")) c.potential_terms.emplace_back(t.at(0).get<std::vector<int>>(), t.at(1).get<double>());
    }
    c.sigma = get_or(m, "sigma", std::vector<double>{});
    c.h_sweep = get_or(j, "h_sweep", c.h_sweep);
    if (j.contains("landscape")) {
        const json& l = j.at("landscape");
        reject_unknown(l, {"box", "nodes", "nu_bar"}, "landscape");
        auto box = get_or(l, "box", std::vector<double>{c.box_lo, c.box_hi});
        if (box.size() != 2) throw std::invalid_argument("config: landscape.box is [lo, hi]");
        c.box_lo = box[0];
        c.box_hi = box[1];
        c.landscape_nodes = get_or(l, "nodes", 0);
        c.nu_bar = get_or(l, "nu_bar", 2);
    }
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        reject_unknown(g, {"nx", "nv", "margin", "stabilization", "k_eigs", "max_unknowns"}, "grid");
        c.grid.nx = get_or(g, "nx", c.grid.nx);
        c.grid.nv = get_or(g, "nv", c.grid.nv);
        c.grid.margin = get_or(g, "margin", c.grid.margin);
        c.grid.max_unknowns = get_or<std::size_t>(g, "max_unknowns", c.grid.max_unknowns);
        c.stabilization_factor = get_or(g, "stabilization", 1.0);
        c.k_eigs = get_or(g, "k_eigs", 0);
    }
    if (j.contains("wkb")) {
        const json& w = j.at("wkb");
        reject_unknown(w, {"K", "J"}, "wkb");
        c.caps.K = get_or(w, "K", c.caps.K);
        c.caps.J = get_or(w, "J", c.caps.J);
    }
    if (j.contains("ek")) {
        const json& e = j.at("ek");
        reject_unknown(e, {"tau_factor", "delta_factor", "tau", "delta"}, "ek");
        c.quasimode.tau_factor = get_or(e, "tau_factor", c.quasimode.tau_factor);
        c.quasimode.delta_factor = get_or(e, "delta_factor", c.quasimode.delta_factor);
        if (e.contains("tau") && !e["tau"].is_null()) c.quasimode.tau = e["tau"].get<double>();
        if (e.contains("delta") && !e["delta"].is_null()) c.quasimode.delta = e["delta"].get<double>();
    }
    if (j.contains("sde")) {
        const json& s = j.at("sde");
        reject_unknown(s, {"h_sweep", "dt", "n_traj", "tmax", "max_steps"}, "sde");
        c.sde.h_sweep = get_or(s, "h_sweep", std::vector<double>{});
        c.sde.dt = get_or(s, "dt", 0.0);
        c.sde.n_traj = get_or(s, "n_traj", c.sde.n_traj);
        c.sde.T_max = get_or(s, "tmax", 0.0);
        c.sde.max_steps = get_or(s, "max_steps", c.sde.max_steps);
    }
    c.seed = get_or<std::uint64_t>(j, "seed", 1);
    c.threads = get_or(j, "threads", 1);
    c.out_dir = get_or<std::string>(j, "out", "out");
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::invalid_argument("config " + path + ": " + e.what());
    }
    return from_json(j, fs::path(path).parent_path().string());
}

json ExperimentConfig::to_json() const {
    json m;
    if (!model_file.empty()) m["file"] = model_file;
    if (!model_text.empty()) m["text"] = model_text;
    m["preset"] = preset;
    if (!potential_terms.empty()) {
        json terms = json::array();
        for (const auto& [e, c] : potential_terms) terms.push_back(json::array({e, c}));
        m["potential"] = {{"dim", potential_dim}, {"terms", terms}};
    }
    if (!sigma.empty()) m["sigma"] = sigma;
    json ek{{"tau_factor", quasimode.tau_factor}, {"delta_factor", quasimode.delta_factor}};
    ek["tau"] = quasimode.tau ? json(*quasimode.tau) : json(nullptr);
    ek["delta"] = quasimode.delta ? json(*quasimode.delta) : json(nullptr);
    return json{{"format_version", format_version},
                {"model", m},
                {"h_sweep", h_sweep},
                {"landscape", {{"box", {box_lo, box_hi}}, {"nodes", landscape_nodes}, {"nu_bar", nu_bar}}},
                {"grid",
                 {{"nx", grid.nx},
                  {"nv", grid.nv},
                  {"margin", grid.margin},
                  {"stabilization", stabilization_factor},
                  {"k_eigs", k_eigs},
                  {"max_unknowns", grid.max_unknowns}}},
                {"wkb", {{"K", caps.K}, {"J", caps.J}}},
                {"ek", ek},
                {"sde", {{"h_sweep", sde.h_sweep}, {"dt", sde.dt}, {"n_traj", sde.n_traj}, {"tmax", sde.T_max}, {"max_steps", sde.max_steps}}},
                {"seed", seed},
                {"threads", threads},
                {"out", out_dir}};
}

std::string ExperimentConfig::hash() const {
    json j = to_json();
    // Neither the output location nor the thread count changes any result.
    j.erase("out");
    j.erase("threads");
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
    return os.str();
}

CoefficientSystem ExperimentConfig::system() const {
    if (!model_file.empty()) return load_model_file(model_file);
    if (!model_text.empty()) return parse_model_text(model_text);
    if (potential_terms.empty()) throw std::invalid_argument("config: model needs 'file', 'text' or 'potential'");
    std::ostringstream os;
    os << std::setprecision(17) << "[model]\npreset = " << preset << '\n';
    if (!sigma.empty()) {
        os << "sigma =";
        for (double s : sigma) os << ' ' << s;
        os << '\n';
    }
    os << "[potential]\ndim = " << potential_dim << '\n';
    for (const auto& [e, c] : potential_terms) {
        if (static_cast<int>(e.size()) != potential_dim) throw std::invalid_argument("config: potential term with the wrong number of exponents");
        os << "term =";
        for (int k : e) os << ' ' << k;
        os << " : " << c << '\n';
    }
    return parse_model_text(os.str());
}

Box ExperimentConfig::landscape_box(int d) const {
    int n = d == 1 ? 201 : (d == 2 ? 41 : (d == 3 ? 15 : 7));
    return Box::cube(d, box_lo, box_hi, n);
}

void ExperimentConfig::validate() const {
    int sources = !model_file.empty() + !model_text.empty() + !potential_terms.empty();
    if (sources != 1) throw std::invalid_argument("config: give exactly one of model.file, model.text, model.potential");
    if (h_sweep.empty()) throw std::invalid_argument("config: h_sweep is empty");
    for (double h : h_sweep)
        if (!(h > 0)) throw std::invalid_argument("config: h values must be positive");
    if (!(box_lo < box_hi)) throw std::invalid_argument("config: landscape.box needs lo < hi");
    for (double h : sde.h_sweep)
        if (std::find(h_sweep.begin(), h_sweep.end(), h) == h_sweep.end()) {
            std::ostringstream os;
            os << "config: sde.h_sweep is not a subset of h_sweep; sde [";
            for (double x : sde.h_sweep) os << ' ' << x;
            os << " ] vs [";
            for (double x : h_sweep) os << ' ' << x;
            os << " ]";
            throw std::invalid_argument(os.str());
        }
    if (sde.n_traj < 1) throw std::invalid_argument("config: sde.n_traj must be positive");
    if (threads < 1) throw std::invalid_argument("config: threads must be positive");
}

namespace {

struct Run {
    const ExperimentConfig& cfg;
    std::set<std::string> stages;
    fs::path out;
    PipelineResult res;
    bool assumption_failed = false;
    bool numerical_failed = false;

    bool emit(const std::string& stage) const { return stages.empty() || stages.count(stage); }

    void write(const std::string& stage, const std::string& name, const std::string& content) {
        if (!emit(stage)) return;
        std::ofstream os(out / name, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + (out / name).string());
        os << content;
        res.written.push_back(name);
    }

    void gap(const std::string& what) { res.gaps.push_back(what); }
};

json hypo_json(const HypoReport& R, const std::vector<double>& hs) {
    json j;
    j["g1"] = {{"c", R.bounds.g1.c}, {"p", R.bounds.g1.p}, {"raw_p", R.bounds.g1.raw_p}};
    j["g2"] = {{"c", R.bounds.g2.c}, {"p", R.bounds.g2.p}, {"raw_p", R.bounds.g2.raw_p}};
    j["nu_bar"] = R.nu_bar;
    j["h_grid"] = R.bounds.h_grid;
    j["min_eig"] = R.bounds.min_eig;
    j["max_eig"] = R.bounds.max_eig;
    j["verdicts"] = {{"G_psd", verdict_json(R.bounds.psd)},
                     {"G_derivative", verdict_json(R.bounds.derivative)},
                     {"G_fourth_moment", verdict_json(R.bounds.fourth_moment)},
                     {"centering", verdict_json(R.centering)},
                     {"hypocoercive_bound", verdict_json(R.hypocoer_ii)},
                     {"polynomial_gap", verdict_json(R.polynomial_gap)}};
    j["gap_fit"] = {{"c", R.gap_fit.c}, {"p", R.gap_fit.p}};
    json g = json::array();
    for (double h : hs) g.push_back({{"h", h}, {"gap", num(R.gap(h))}});
    j["gap"] = g;
    j["all_pass"] = R.all_pass();
    return j;
}

struct SpectralRow {
    double lambda = std::numeric_limits<double>::quiet_NaN();
    double rayleigh = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::set<std::string>& stages) {
    for (const auto& s : stages)
        if (std::find(stage_names().begin(), stage_names().end(), s) == stage_names().end())
            throw std::invalid_argument("unknown stage '" + s + "'");
    cfg.validate();
    Run run{cfg, stages, fs::path(cfg.out_dir), {}};
    fs::create_directories(run.out);
    auto need = [&](const std::string& s) {
        if (stages.empty()) return true;
        const auto& names = stage_names();
        auto pos = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) - names.begin(); };
        // hypo feeds the cluster threshold; every later stage needs the labeling.
        for (const auto& want : stages) {
            if (want == s) return true;
            if (s == "label" && want != "hypo") return true;
            if (s == "hypo" && want == "spectrum") return true;
            if ((s == "wkb" || s == "ek") && pos(want) > pos(s)) return true;
        }
        return false;
    };

    json report;
    report["tool_version"] = kToolVersion;
    report["format_version"] = kReportFormat;
    report["config_hash"] = cfg.hash();
    json verdicts;

    CoefficientSystem sys;
    try {
        sys = cfg.system();
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("model: ") + e.what());
    }
    if (stages.empty()) {
        run.write("", "config.json", cfg.to_json().dump(2) + "\n");
        run.write("", "model.txt", model_to_text(sys));
    }

    // Labeling.
    std::optional<Labeling> lab;
    const Box box = cfg.landscape_box(sys.V.d);
    if (need("label")) {
        LandscapeOptions lo;
        lo.grid_nodes_per_axis = cfg.landscape_nodes;
        try {
            lab = analyze_landscape(sys.V, box, lo);
            verdicts["gener"] = {{"pass", true}};
            run.write("label", "labeling.json", labeling_json(*lab) + "\n");
            run.write("label", "disconnectivity.csv", disconnectivity_csv(*lab));
        } catch (const LabelingError& e) {
            json w{{"pass", false}, {"detail", e.what()}};
            json ties = json::array();
            json where = json::array();
            auto crit = find_critical_points(sys.V, box, lo.search);
            for (auto [a, b] : e.verdict.tied_minima) {
                ties.push_back({a, b});
                where.push_back({vec_json(crit.at(a).location), vec_json(crit.at(b).location)});
            }
            w["tied_minima"] = ties;
            w["tied_locations"] = where;
            w["shared_saddles"] = e.verdict.shared_saddles;
            verdicts["gener"] = w;
            run.assumption_failed = true;
            run.gap("labeling rejected: " + std::string(e.what()));
            std::ofstream(run.out / "gener.json") << w.dump(2) << "\n";
            run.res.written.push_back("gener.json");
        } catch (const std::exception& e) {
            run.numerical_failed = true;
            run.gap(std::string("labeling failed: ") + e.what());
        }
    }

    // Hypocoercivity verdicts and the gap function.
    std::optional<HypoReport> hypo;
    if (need("hypo")) {
        try {
            hypo = hypo_report(sys, cfg.landscape_box(sys.d), default_h_grid(), cfg.nu_bar);
            json hj = hypo_json(*hypo, cfg.h_sweep);
            verdicts["hypo"] = hj["verdicts"];
            if (!hypo->all_pass()) run.assumption_failed = true;
            run.write("hypo", "hypo.json", hj.dump(2) + "\n");
        } catch (const std::exception& e) {
            run.assumption_failed = true;
            run.gap(std::string("hypo failed: ") + e.what());
        }
    }

    // Saddle series and prefactor data.
    std::map<std::size_t, SaddleData> saddles;
    if (lab && need("wkb")) {
        json rows = json::array();
        std::set<std::size_t> seen;
        for (const auto& js : lab->j_map)
            for (std::size_t s : js) {
                if (!seen.insert(s).second) continue;
                json r{{"saddle", s}, {"location", vec_json(lab->critical[s].location)}};
                try {
                    SaddleData sd;
                    sd.saddle = s;
                    sd.location = lab->critical[s].location;
                    sd.f_hessian = sys.f_hessian(sd.location, Vec::Zero(sys.dp));
                    auto series = std::make_shared<SaddleSeries>(solve_saddle(sys, sd.location, cfg.caps));
                    auto ab = extract_a_b(*series, sd.f_hessian);
                    auto id = hessian_identity_check(series->ell, sd.f_hessian);
                    sd.a = ab.a;
                    sd.b = ab.b;
                    sd.series = series;
                    saddles[s] = sd;
                    r["situation"] = series->situation == Situation::linear ? "linear" : "degenerate";
                    r["mu"] = series->situation == Situation::linear ? json(series->frame.mu) : json(nullptr);
                    r["a"] = ab.a;
                    r["b"] = ab.b;
                    r["branch"] = ab.branch;
                    r["hessian_identity"] = {{"pass", id.pass}, {"relative_error", id.relative_error}};
                    r["note"] = series->note;
                    r["series_file"] = "ell_" + std::to_string(s) + ".csv";
                    run.write("wkb", "ell_" + std::to_string(s) + ".csv", series->ell.to_csv());
                } catch (const std::exception& e) {
                    r["error"] = e.what();
                    run.numerical_failed = true;
                    run.gap("wkb failed at saddle " + std::to_string(s) + ": " + e.what());
                }
                rows.push_back(r);
            }
        run.write("wkb", "wkb.json", rows.dump(2) + "\n");
    }

    std::optional<EKPrediction> ek;
    if (lab && need("ek")) {
        ek = predict(*lab, saddles, minimum_hessians(sys, *lab), true);
        for (const auto& r : ek->rows)
            if (!r.refused.empty()) run.gap("no prediction for minimum " + std::to_string(r.minimum) + ": " + r.refused);
        run.write("ek", "ek.csv", ek->to_csv(cfg.h_sweep));
    }

    // Spectrum, cluster count and quasimode Rayleigh quotients per h.
    std::map<std::pair<std::size_t, double>, SpectralRow> spectral;
    std::vector<double> spectrum_h;
    json clusters = json::array();
    if (lab && need("spectrum")) {
        std::ostringstream csv;
        csv << std::setprecision(17) << "h,index,re,im,residual,in_cluster\n";
        const std::size_t n0 = lab->minima.size();
        for (double h : cfg.h_sweep) {
            try {
                GridBox grid = automatic_grid(sys, h, cfg.grid);
                DiscretizationOptions dopt;
                dopt.stabilization_factor = cfg.stabilization_factor;
                OperatorMatrix op = discretize_P(sys, h, grid, dopt, cfg.grid.max_unknowns);
                double thr = hypo ? 0.5 * hypo->gap(h) : 0.5 * h / (2 + std::sqrt(2.0));
                int k = cfg.k_eigs > 0 ? cfg.k_eigs : static_cast<int>(n0) + 4;
                SpectrumResult sr = small_eigs(op.P, k, thr, 1e-8, static_cast<unsigned>(cfg.seed));
                for (Eigen::Index i = 0; i < sr.eigenvalues.size(); ++i)
                    csv << h << ',' << i << ',' << sr.eigenvalues[i].real() << ',' << sr.eigenvalues[i].imag() << ',' << sr.residuals[i] << ','
                        << (std::abs(sr.eigenvalues[i]) <= thr ? 1 : 0) << '\n';
                clusters.push_back({{"h", h},
                                    {"threshold", thr},
                                    {"cluster_size", sr.cluster_size},
                                    {"minima", n0},
                                    {"gap", num(sr.gap)},
                                    {"grid", grid.nodes},
                                    {"converged", sr.converged}});
                spectrum_h.push_back(h);
                if (static_cast<std::size_t>(sr.cluster_size) != n0) run.gap("cluster size " + std::to_string(sr.cluster_size) + " differs from " +
                                                                                std::to_string(n0) + " minima at h = " + fmt(h));
                // Cluster eigenvalues by modulus go to minima ordered by their predicted rate (global first).
                std::vector<std::size_t> order(n0);
                for (std::size_t p = 0; p < n0; ++p) order[p] = p;
                if (ek)
                    std::stable_sort(order.begin() + 1, order.end(), [&](std::size_t a, std::size_t b) {
                        double la = ek->rows[a].lambda(h), lb = ek->rows[b].lambda(h);
                        if (std::isnan(la)) return false;
                        if (std::isnan(lb)) return true;
                        return la < lb;
                    });
                for (std::size_t r = 0; r < n0 && static_cast<Eigen::Index>(r) < sr.eigenvalues.size(); ++r)
                    if (r < static_cast<std::size_t>(sr.cluster_size)) spectral[{lab->minima[order[r]], h}].lambda = sr.eigenvalues[r].real();
                for (std::size_t p = 0; p < n0; ++p) {
                    if (p > 0 && !std::all_of(lab->j_map[p].begin(), lab->j_map[p].end(), [&](std::size_t s) { return saddles.count(s) > 0; })) continue;
                    try {
                        Quasimode q = build_quasimode(sys, *lab, p, saddles, h, grid, cfg.quasimode);
                        spectral[{lab->minima[p], h}].rayleigh = rayleigh(op, q);
                    } catch (const std::exception& e) {
                        run.gap("quasimode for minimum " + std::to_string(lab->minima[p]) + " at h = " + fmt(h) + ": " + e.what());
                    }
                }
            } catch (const std::exception& e) {
                run.numerical_failed = true;
                run.gap("spectrum failed at h = " + fmt(h) + ": " + e.what());
            }
        }
        verdicts["cluster"] = clusters;
        run.write("spectrum", "spectrum.csv", csv.str());
        run.write("spectrum", "cluster.json", clusters.dump(2) + "\n");
    }

    // Escape rates.
    std::map<std::pair<std::size_t, double>, double> rates;
    if (lab && need("sde") && !cfg.sde.h_sweep.empty()) {
        json runs = json::array();
        for (double h : cfg.sde.h_sweep)
            for (std::size_t p = 1; p < lab->minima.size(); ++p) {
                SdeConfig sc;
                sc.h = h;
                sc.dt = cfg.sde.dt > 0 ? cfg.sde.dt : std::min(h, 1.0) / 50;
                sc.n_traj = cfg.sde.n_traj;
                sc.seed = cfg.seed;
                sc.threads = cfg.threads;
                double lam = ek ? ek->rows[p].lambda(h) : std::numeric_limits<double>::quiet_NaN();
                sc.T_max = cfg.sde.T_max > 0 ? cfg.sde.T_max : 50 * h / lam;
                json r{{"h", h}, {"minimum", lab->minima[p]}, {"dt", sc.dt}, {"n_traj", sc.n_traj}, {"tmax", num(sc.T_max)}};
                if (!(sc.T_max > 0 && std::isfinite(sc.T_max))) {
                    r["skipped"] = "no horizon: set sde.tmax or provide a prediction";
                    run.gap("sde skipped for minimum " + std::to_string(lab->minima[p]) + " at h = " + fmt(h));
                } else if (sc.T_max / sc.dt * sc.n_traj > cfg.sde.max_steps) {
                    r["skipped"] = "step budget exceeded";
                    run.gap("sde skipped for minimum " + std::to_string(lab->minima[p]) + " at h = " + fmt(h) + ": step budget exceeded");
                } else {
                    try {
                        MfptStats st = mfpt(sys, sc, *lab, p, box);
                        r["stats"] = json::parse(st.to_json());
                        if (st.escapes > 0) rates[{lab->minima[p], h}] = st.rate;
                    } catch (const std::exception& e) {
                        run.numerical_failed = true;
                        r["error"] = e.what();
                        run.gap("sde failed for minimum " + std::to_string(lab->minima[p]) + " at h = " + fmt(h) + ": " + e.what());
                    }
                }
                runs.push_back(r);
            }
        run.write("sde", "sde.json", runs.dump(2) + "\n");
    }

    // Summary table.
    if (stages.empty() && lab) {
        std::ostringstream csv;
        csv << std::setprecision(17) << "minimum,x,h,S,mu,v,lambda_ek,lambda_spectral,rayleigh,mfpt_rate\n";
        json rows = json::array();
        for (std::size_t p = 0; p < lab->minima.size(); ++p)
            for (double h : cfg.h_sweep) {
                std::size_t m = lab->minima[p];
                const MinimumPrediction* er = ek ? &ek->rows[p] : nullptr;
                bool have = er && er->refused.empty();
                double S = p == 0 ? std::numeric_limits<double>::infinity() : lab->S[p];
                double lek = have ? er->lambda(h) : std::numeric_limits<double>::quiet_NaN();
                auto sp = spectral.count({m, h}) ? spectral[{m, h}] : SpectralRow{};
                double rate = rates.count({m, h}) ? rates[{m, h}] : std::numeric_limits<double>::quiet_NaN();
                csv << m << ',' << loc_text(lab->critical[m].location) << ',' << h << ',' << (p == 0 ? "inf" : fmt(S)) << ','
                    << (have ? std::to_string(er->mu) : "NA") << ',' << (have ? fmt(er->v) : "NA") << ',' << fmt(lek) << ',' << fmt(sp.lambda) << ','
                    << fmt(sp.rayleigh) << ',' << fmt(rate) << '\n';
                rows.push_back({{"minimum", m},
                                {"x", vec_json(lab->critical[m].location)},
                                {"h", h},
                                {"S", num(S)},
                                {"mu", have ? json(er->mu) : json(nullptr)},
                                {"v", have ? num(er->v) : json(nullptr)},
                                {"lambda_ek", num(lek)},
                                {"lambda_spectral", num(sp.lambda)},
                                {"rayleigh", num(sp.rayleigh)},
                                {"mfpt_rate", num(rate)}});
            }
        report["rows"] = rows;
        report["stage_h"] = {{"ek", ek ? cfg.h_sweep : std::vector<double>{}}, {"spectrum", spectrum_h}, {"sde", cfg.sde.h_sweep}};
        run.write("", "report.csv", csv.str());
    }

    run.res.exit_code = run.assumption_failed ? exit_assumption : (run.numerical_failed ? exit_numerical : exit_ok);
    report["verdicts"] = verdicts;
    report["gaps"] = run.res.gaps;
    report["exit_code"] = run.res.exit_code;
    if (stages.empty()) run.write("", "report.json", report.dump(2) + "\n");
    run.res.report = report;
    return run.res;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_cell(const std::string& s) {
    if (s.empty() || s == "NA") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    return std::stod(s);
}

// Least-squares slope of log|r - 1| against log h; NaN with fewer than two usable points.
double convergence_exponent(const std::vector<double>& hs, const std::vector<double>& ratios) {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < hs.size(); ++i)
        if (std::isfinite(ratios[i]) && std::abs(ratios[i] - 1) > 0) {
            x.push_back(std::log(hs[i]));
            y.push_back(std::log(std::abs(ratios[i] - 1)));
        }
    if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
    mx /= x.size();
    my /= y.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my), sxx += (x[i] - mx) * (x[i] - mx);
    return sxx > 0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
}

std::string list_text(const std::vector<double>& v) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    return os.str() + ']';
}

}  // namespace

CompareResult compare_reports(const std::string& dir) {
    fs::path d(dir);
    std::ifstream rj(d / "report.json");
    if (!rj) throw std::invalid_argument("compare: no report.json in " + dir);
    json report = json::parse(rj);
    if (report.contains("stage_h")) {
        auto ekh = report["stage_h"]["ek"].get<std::vector<double>>();
        auto sph = report["stage_h"]["spectrum"].get<std::vector<double>>();
        auto sdh = report["stage_h"]["sde"].get<std::vector<double>>();
        if (!ekh.empty() && !sph.empty() && ekh != sph)
            throw std::invalid_argument("compare: spectral h-grid " + list_text(sph) + " differs from the prediction h-grid " + list_text(ekh));
        const auto& base = sph.empty() ? ekh : sph;
        for (double h : sdh)
            if (!base.empty() && std::find(base.begin(), base.end(), h) == base.end())
                throw std::invalid_argument("compare: sde h-grid " + list_text(sdh) + " is not contained in " + list_text(base));
    }
    std::ifstream in(d / "report.csv");
    if (!in) throw std::invalid_argument("compare: no report.csv in " + dir);
    std::string line;
    std::getline(in, line);
    auto header = split_csv_line(line);
    auto col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    int cm = col("minimum"), ch = col("h"), cek = col("lambda_ek"), csp = col("lambda_spectral"), cr = col("rayleigh"), cq = col("mfpt_rate");
    if (cm < 0 || ch < 0) throw std::invalid_argument("compare: report.csv lacks the minimum or h column");
    struct Row {
        double h, ek, sp, ray, rate;
    };
    std::map<std::string, std::vector<Row>> by_min;
    std::vector<std::string> order;
    auto cell = [](const std::vector<std::string>& c, int i) { return i < 0 || i >= static_cast<int>(c.size()) ? std::numeric_limits<double>::quiet_NaN() : parse_cell(c[i]); };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto c = split_csv_line(line);
        if (!by_min.count(c[cm])) order.push_back(c[cm]);
        by_min[c[cm]].push_back({cell(c, ch), cell(c, cek), cell(c, csp), cell(c, cr), cell(c, cq)});
    }
    CompareResult out;
    std::ostringstream csv, tab;
    csv << std::setprecision(17) << "minimum,h,lambda_ek,spectral_over_ek,rayleigh_over_ek,sde_over_spectral\n";
    bool any_spectral = false;
    for (const auto& [m, rows] : by_min)
        for (const auto& r : rows) any_spectral = any_spectral || std::isfinite(r.sp);
    tab << std::setprecision(4);
    for (const auto& m : order) {
        const auto& rows = by_min[m];
        tab << "minimum " << m << '\n';
        if (any_spectral)
            tab << std::setw(8) << "h" << std::setw(14) << "lambda_ek" << std::setw(14) << "spec/ek" << std::setw(14) << "rayl/ek" << std::setw(14) << "sde/spec" << '\n';
        else
            tab << std::setw(8) << "h" << std::setw(14) << "lambda_ek" << '\n';
        std::vector<double> hs, rs, rr, rq;
        for (const auto& r : rows) {
            double nan = std::numeric_limits<double>::quiet_NaN();
            bool pos = std::isfinite(r.ek) && r.ek > 0;
            double spek = pos ? r.sp / r.ek : nan;
            double ryek = pos ? r.ray / r.ek : nan;
            // The semigroup is exp(-t P / h), so an escape rate k pairs with the eigenvalue h k.
            double sdsp = std::isfinite(r.sp) && r.sp > 0 ? r.h * r.rate / r.sp : nan;
            hs.push_back(r.h);
            rs.push_back(spek);
            rr.push_back(ryek);
            rq.push_back(sdsp);
            csv << m << ',' << r.h << ',' << fmt(r.ek) << ',' << fmt(spek) << ',' << fmt(ryek) << ',' << fmt(sdsp) << '\n';
            auto show = [&](double x) {
                std::ostringstream os;
                os << std::setprecision(4);
                if (std::isfinite(x))
                    os << x;
                else
                    os << "NA";
                return os.str();
            };
            tab << std::setw(8) << r.h << std::setw(14) << show(r.ek);
            if (any_spectral) tab << std::setw(14) << show(spek) << std::setw(14) << show(ryek) << std::setw(14) << show(sdsp);
            tab << '\n';
        }
        if (any_spectral) {
            auto show = [](double p) { return std::isfinite(p) ? std::to_string(p) : std::string("NA"); };
            tab << "  |spec/ek - 1| ~ h^p, p = " << show(convergence_exponent(hs, rs)) << "; |rayl/ek - 1| ~ h^p, p = " << show(convergence_exponent(hs, rr))
                << '\n';
        }
    }
    out.csv = csv.str();
    out.table = tab.str();
    return out;
}

}  // namespace kfp
