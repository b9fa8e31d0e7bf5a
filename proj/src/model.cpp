#include "kfp/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace kfp {

std::string to_string(const Polynomial& p, const std::vector<std::string>& names) {
    std::ostringstream os;
    os << std::setprecision(17);
    bool first = true;
    for (const auto& [a, c] : p.terms()) {
        if (!first) os << " + ";
        first = false;
        os << c;
        for (int i = 0; i < p.nvars(); ++i) {
            if (a[i] == 0) continue;
            os << "*" << (i < static_cast<int>(names.size()) ? names[i] : "z" + std::to_string(i));
            if (a[i] > 1) os << "^" << a[i];
        }
    }
    if (first) os << "0";
    return os.str();
}

// ---------------------------------------------------------------- potential

PotentialSpec PotentialSpec::from_polynomial(const Polynomial& p) {
    PotentialSpec s;
    s.d = p.nvars();
    s.poly = p;
    return s;
}

double PotentialSpec::value(const Vec& x) const {
    std::vector<double> xs(x.data(), x.data() + x.size());
    double v = poly.eval(xs);
    if (has_tail()) {
        double r = std::sqrt(tail_radius * tail_radius + x.squaredNorm()) - tail_radius;
        v += tail_kappa * r * r;
    }
    return v;
}

Vec PotentialSpec::gradient(const Vec& x) const {
    std::vector<double> xs(x.data(), x.data() + x.size());
    Vec g(d);
    for (int i = 0; i < d; ++i) g[i] = poly.diff(i).eval(xs);
    if (has_tail()) {
        double q = std::sqrt(tail_radius * tail_radius + x.squaredNorm());
        double r = q - tail_radius;
        g += 2.0 * tail_kappa * r / q * x;
    }
    return g;
}

Mat PotentialSpec::hessian(const Vec& x) const {
    std::vector<double> xs(x.data(), x.data() + x.size());
    Mat H(d, d);
    for (int i = 0; i < d; ++i) {
        Polynomial di = poly.diff(i);
        for (int j = 0; j <= i; ++j) H(i, j) = H(j, i) = di.diff(j).eval(xs);
    }
    if (has_tail()) {
        double q = std::sqrt(tail_radius * tail_radius + x.squaredNorm());
        double r = q - tail_radius;
        // d/dx of 2 k r x / q
        Mat I = Mat::Identity(d, d);
        H += 2.0 * tail_kappa * ((x * x.transpose()) / (q * q) + r / q * I - r * (x * x.transpose()) / (q * q * q));
    }
    return H;
}

Polynomial PotentialSpec::derivative(const MultiIndex& order) const {
    if (has_tail()) throw std::invalid_argument("potential: exact derivatives require a pure polynomial potential");
    if (static_cast<int>(order.size()) != d) throw std::invalid_argument("potential: derivative order arity mismatch");
    if (total_degree(order) > derivative_order_cap)
        throw std::invalid_argument("potential: derivative order exceeds cap");
    Polynomial p = poly;
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < order[i]; ++k) p = p.diff(i);
    return p;
}

// ---------------------------------------------------------------- system

bool CoefficientSystem::has_noise_multiplier() const {
    if (noise_multiplier.nvars() == 0) return false;
    const auto& t = noise_multiplier.terms();
    return !(t.size() == 1 && total_degree(t.begin()->first) == 0 && t.begin()->second == 1.0);
}

std::vector<double> CoefficientSystem::point(const Vec& x, const Vec& v, double h) const {
    std::vector<double> z(nvars());
    for (int i = 0; i < d; ++i) z[i] = x[i];
    for (int k = 0; k < dp; ++k) z[d + k] = v[k];
    z[h_var()] = h;
    return z;
}

void CoefficientSystem::validate() const {
    if (d <= 0 || dp <= 0) throw std::invalid_argument("system: dimensions must be positive");
    if (Sigma.rows() != dp || Sigma.cols() != dp) throw std::invalid_argument("system: Sigma must be d' x d'");
    if (std::abs(Sigma.determinant()) <= 1e-12) throw std::invalid_argument("system: Sigma is not invertible");
    if (static_cast<int>(alpha.size()) != d || static_cast<int>(beta.size()) != dp)
        throw std::invalid_argument("system: alpha/beta lengths must be d and d'");
    for (const auto& p : alpha)
        if (p.nvars() != nvars()) throw std::invalid_argument("system: alpha variable count mismatch");
    for (const auto& p : beta)
        if (p.nvars() != nvars()) throw std::invalid_argument("system: beta variable count mismatch");
    if (V.d != landscape_d() && V.d != d) throw std::invalid_argument("system: potential dimension mismatch");
    for (const auto& p : alpha)
        if (p.degree_in(h_var()) > 2) throw std::invalid_argument("system: degree in h capped at 2");
    for (const auto& p : beta)
        if (p.degree_in(h_var()) > 2) throw std::invalid_argument("system: degree in h capped at 2");
    if (noise_multiplier.nvars() != 0 && noise_multiplier.nvars() != nvars())
        throw std::invalid_argument("system: noise multiplier variable count mismatch");
}

static Polynomial h_order(const Polynomial& p, int hv, int j) {
    int n = p.nvars() - 1;
    Polynomial r(n);
    for (const auto& [a, c] : p.terms()) {
        if (a[hv] != j) continue;
        MultiIndex b(a.begin(), a.begin() + n);
        r.add_term(b, c);
    }
    return r;
}

Polynomial CoefficientSystem::alpha_order(int i, int j) const { return h_order(alpha.at(i), h_var(), j); }
Polynomial CoefficientSystem::beta_order(int k, int j) const { return h_order(beta.at(k), h_var(), j); }

Polynomial CoefficientSystem::divergence() const {
    Polynomial r(nvars());
    for (int i = 0; i < d; ++i) r += alpha[i].diff(i);
    for (int k = 0; k < dp; ++k) r += beta[k].diff(d + k);
    return r;
}

Polynomial CoefficientSystem::potential_in_phase_space() const {
    if (V.has_tail()) throw std::invalid_argument("system: potential tail is not polynomial");
    std::vector<int> map(V.d);
    for (int i = 0; i < V.d; ++i) map[i] = i;
    return V.poly.embed(nvars(), map);
}

Polynomial CoefficientSystem::f_polynomial() const {
    Polynomial f = potential_in_phase_space();
    Mat Sm = S();
    for (int k = 0; k < dp; ++k)
        for (int l = 0; l < dp; ++l) {
            if (Sm(k, l) == 0.0) continue;
            f += Polynomial::variable(nvars(), d + k) * Polynomial::variable(nvars(), d + l) * Sm(k, l);
        }
    return f;
}

Polynomial CoefficientSystem::stationarity_polynomial() const {
    Polynomial Vp = potential_in_phase_space();
    Mat Sm = S();
    Polynomial r(nvars());
    for (int i = 0; i < d; ++i) r += alpha[i] * Vp.diff(i);
    for (int k = 0; k < dp; ++k) {
        Polynomial Svk(nvars());
        for (int l = 0; l < dp; ++l)
            if (Sm(k, l) != 0.0) Svk += Polynomial::variable(nvars(), d + l, Sm(k, l));
        r += beta[k] * Svk * 2.0;
    }
    r -= Polynomial::variable(nvars(), h_var(), 0.5) * divergence();
    return r;
}

Mat CoefficientSystem::f_hessian(const Vec& x, const Vec& v) const {
    (void)v;
    Mat H = Mat::Zero(d + dp, d + dp);
    Vec xl = x.head(V.d);
    H.topLeftCorner(V.d, V.d) = V.hessian(xl);
    H.bottomRightCorner(dp, dp) = 2.0 * S();
    return H;
}

double eval_f(const CoefficientSystem& sys, const Vec& x, const Vec& v) {
    if (x.size() != sys.d || v.size() != sys.dp) throw std::invalid_argument("eval_f: dimension mismatch");
    Vec sv = sys.Sigma * v;
    return sys.V.value(x.head(sys.V.d)) + sv.squaredNorm();
}

// ---------------------------------------------------------------- boxes and checks

Box Box::cube(int dim, double lo, double hi, int n) {
    Box b;
    b.lo = Vec::Constant(dim, lo);
    b.hi = Vec::Constant(dim, hi);
    b.samples_per_axis = n;
    return b;
}

std::vector<Vec> Box::lattice() const {
    int D = dim();
    int n = std::max(samples_per_axis, 2);
    std::vector<Vec> pts;
    std::vector<int> idx(D, 0);
    while (true) {
        Vec p(D);
        for (int i = 0; i < D; ++i) p[i] = lo[i] + (hi[i] - lo[i]) * idx[i] / (n - 1);
        pts.push_back(p);
        int i = 0;
        while (i < D && ++idx[i] == n) idx[i++] = 0;
        if (i == D) break;
    }
    return pts;
}

std::vector<std::pair<Vec, Vec>> phase_samples(const CoefficientSystem& sys, const Box& phase_box) {
    if (phase_box.dim() != sys.d + sys.dp) throw std::invalid_argument("phase_samples: box dimension must be d + d'");
    std::vector<std::pair<Vec, Vec>> out;
    for (const Vec& p : phase_box.lattice()) out.emplace_back(p.head(sys.d), p.tail(sys.dp));
    return out;
}

StationarityReport stationarity_residual(const CoefficientSystem& sys, double h, const std::vector<std::pair<Vec, Vec>>& samples) {
    if (!(h > 0)) throw std::invalid_argument("stationarity_residual: h must be positive");
    Polynomial res = sys.stationarity_polynomial();
    StationarityReport rep;
    for (const auto& [x, v] : samples) {
        if (x.size() != sys.d || v.size() != sys.dp) throw std::invalid_argument("stationarity_residual: dimension mismatch");
        double r = res.eval(sys.point(x, v, h));
        rep.sample_points.emplace_back(x, v);
        rep.residual_field.push_back(r);
        rep.max_residual = std::max(rep.max_residual, std::abs(r));
        rep.max_scaled_residual = std::max(rep.max_scaled_residual, std::abs(r) / (1.0 + std::abs(eval_f(sys, x, v))));
    }
    return rep;
}

ConfinementReport check_confinement(const PotentialSpec& V, const Box& box, double C, double inner_radius) {
    if (box.dim() != V.d) throw std::invalid_argument("check_confinement: box dimension mismatch");
    ConfinementReport rep;
    rep.C = C;
    rep.inner_radius = inner_radius;
    rep.tightest_b = std::numeric_limits<double>::infinity();
    auto fail = [&](const std::string& what, const Vec& x, double val) {
        if (!rep.pass) return;
        rep.pass = false;
        rep.failed_condition = what;
        rep.witness = x;
        rep.witness_value = val;
    };
    for (const Vec& x : box.lattice()) {
        double v = V.value(x);
        rep.tightest_b = std::min(rep.tightest_b, v - x.norm() / C);
        if (x.norm() < inner_radius) continue;
        ++rep.samples_checked;
        if (v < -C) fail("V >= -C", x, v);
        double g = V.gradient(x).norm();
        if (g < 1.0 / C) fail("|grad V| >= 1/C", x, g);
        double hn = V.hessian(x).cwiseAbs().maxCoeff();
        if (hn > C) fail("|Hess V| <= C", x, hn);
    }
    return rep;
}

AccretivityReport check_accretivity_bound(const CoefficientSystem& sys, const Box& phase_box, double h, double inner_radius) {
    AccretivityReport rep;
    Polynomial div = sys.divergence();
    if (div.is_zero()) {
        rep.note = "divergence vanishes identically";
        return rep;
    }
    for (const auto& [x, v] : phase_samples(sys, phase_box)) {
        double r2 = x.squaredNorm() + v.squaredNorm();
        if (std::sqrt(r2) < inner_radius) continue;
        double dv = std::abs(div.eval(sys.point(x, v, h)));
        double f = eval_f(sys, x, v);
        if (f <= 0.0) {
            if (dv > 0.0) {
                rep.pass = false;
                rep.witness = std::make_pair(x, v);
                rep.note = "f <= 0 where the divergence is nonzero";
            }
            continue;
        }
        if (dv / f > rep.minimal_C) {
            rep.minimal_C = dv / f;
            rep.witness = std::make_pair(x, v);
        }
    }
    rep.note = rep.pass ? "sampled bound; global validity not certified" : rep.note;
    return rep;
}

// ---------------------------------------------------------------- presets

namespace {

Polynomial var(int n, int i, double c = 1.0) { return Polynomial::variable(n, i, c); }

// (S v)_k as a polynomial in the full variable set, v starting at offset vo.
Polynomial Sv_component(const Mat& S, int k, int n, int vo) {
    Polynomial r(n);
    for (int l = 0; l < S.cols(); ++l)
        if (S(k, l) != 0.0) r += var(n, vo + l, S(k, l));
    return r;
}

Polynomial embed_x(const Polynomial& p, int n) {
    std::vector<int> map(p.nvars());
    for (int i = 0; i < p.nvars(); ++i) map[i] = i;
    return p.embed(n, map);
}

void require_sigma(const Mat& Sigma, int dp) {
    if (Sigma.rows() != dp || Sigma.cols() != dp) throw std::invalid_argument("preset: Sigma must be d' x d'");
    if (std::abs(Sigma.determinant()) <= 1e-12) throw std::invalid_argument("preset: Sigma is not invertible");
}

CoefficientSystem standard_like(const PresetParams& p, const std::string& name) {
    CoefficientSystem s;
    s.name = name;
    s.d = p.V.d;
    s.dp = p.V.d;
    s.V = p.V;
    s.Sigma = p.Sigma;
    require_sigma(p.Sigma, s.dp);
    int n = s.nvars();
    Mat S = s.S();
    for (int i = 0; i < s.d; ++i) s.alpha.push_back(Sv_component(S, i, n, s.d) * 2.0);
    if (p.V.has_tail()) throw std::invalid_argument("preset: coefficient systems need a polynomial potential (no tail)");
    for (int k = 0; k < s.dp; ++k) s.beta.push_back(-embed_x(p.V.poly.diff(k), n));
    s.noise_multiplier = Polynomial::constant(n, 1.0);
    return s;
}

}  // namespace

CoefficientSystem preset(const std::string& name, const PresetParams& p) {
    if (name == "standard") {
        auto s = standard_like(p, "standard");
        s.validate();
        return s;
    }
    if (name == "magnetic") {
        if (p.V.d != 3) throw std::invalid_argument("preset magnetic: requires d = d' = 3");
        auto s = standard_like(p, "magnetic");
        if (!p.field.empty()) {
            if (p.field.size() != 3) throw std::invalid_argument("preset magnetic: field needs 3 components");
            int n = s.nvars();
            Mat S = s.S();
            std::vector<Polynomial> b, w;
            for (int i = 0; i < 3; ++i) {
                if (p.field[i].nvars() != 3) throw std::invalid_argument("preset magnetic: field components are polynomials in x");
                b.push_back(embed_x(p.field[i], n));
                w.push_back(Sv_component(S, i, n, 3));
            }
            s.beta[0] += b[1] * w[2] - b[2] * w[1];
            s.beta[1] += b[2] * w[0] - b[0] * w[2];
            s.beta[2] += b[0] * w[1] - b[1] * w[0];
        }
        s.validate();
        return s;
    }
    if (name == "rescaled") {
        if (!p.g) throw std::invalid_argument("preset rescaled: g required");
        auto s = standard_like(p, "rescaled");
        int n = s.nvars();
        if (p.g->nvars() != s.d) throw std::invalid_argument("preset rescaled: g must be a polynomial in x");
        Polynomial g = embed_x(*p.g, n);
        Box gb = p.g_box ? *p.g_box : Box::cube(s.d, -3.0, 3.0, 33);
        for (const Vec& x : gb.lattice()) {
            std::vector<double> xs(x.data(), x.data() + x.size());
            if (!(p.g->eval(xs) > 0.0)) throw std::invalid_argument("preset rescaled: g is not bounded below by a positive constant on its box");
        }
        for (auto& a : s.alpha) a = a * g;
        for (int k = 0; k < s.dp; ++k) s.beta[k] = s.beta[k] * g + var(n, s.h_var(), 0.5) * g.diff(k);
        s.noise_multiplier = g;
        s.validate();
        return s;
    }
    if (name == "adaptive") {
        if (p.V.has_tail()) throw std::invalid_argument("preset adaptive: polynomial potential required");
        int m = p.V.d;
        require_sigma(p.Sigma, m);
        CoefficientSystem s;
        s.name = "adaptive";
        s.d = 2 * m;
        s.dp = m;
        s.landscape_dim = m;
        s.Sigma = p.Sigma;
        int n = s.nvars();
        // Landscape V(x') + |y|^2/2; the friction variables y sit at x-indices m..2m-1.
        Polynomial vhat = p.V.poly.embed(s.d, [&] {
            std::vector<int> map(m);
            for (int i = 0; i < m; ++i) map[i] = i;
            return map;
        }());
        for (int i = 0; i < m; ++i) vhat += Polynomial::variable(s.d, m + i) * Polynomial::variable(s.d, m + i) * 0.5;
        s.V = PotentialSpec::from_polynomial(vhat);
        Mat S = s.S();
        int vo = s.d;
        for (int i = 0; i < m; ++i) s.alpha.push_back(Sv_component(S, i, n, vo) * 2.0);
        for (int i = 0; i < m; ++i) {
            Polynomial w = Sv_component(S, i, n, vo);
            s.alpha.push_back(w * w * 2.0 - var(n, s.h_var(), 0.5 * S(i, i)));
        }
        for (int k = 0; k < m; ++k) {
            Polynomial b = -embed_x(p.V.poly.diff(k), n);
            b -= var(n, m + k) * Sv_component(S, k, n, vo);
            s.beta.push_back(b);
        }
        s.noise_multiplier = Polynomial::constant(n, 1.0);
        s.validate();
        return s;
    }
    if (name == "situation2") return situation2_system(p.V);
    throw std::invalid_argument("preset: unknown name '" + name + "'");
}

CoefficientSystem situation2_system(const PotentialSpec& V) {
    if (V.d != 1 || V.has_tail()) throw std::invalid_argument("situation2: requires a 1-D polynomial potential");
    CoefficientSystem s;
    s.name = "situation2";
    s.d = 1;
    s.dp = 1;
    s.V = V;
    s.Sigma = Mat::Constant(1, 1, 0.5);
    int n = s.nvars();
    s.alpha.push_back(var(n, 1) * var(n, 1) - var(n, 2));
    s.beta.push_back(var(n, 1, -2.0) * embed_x(V.poly.diff(0), n));
    s.noise_multiplier = Polynomial::constant(n, 1.0);
    s.validate();
    return s;
}

PotentialSpec polynomial_1d(const std::vector<double>& c) {
    Polynomial p(1);
    for (std::size_t k = 0; k < c.size(); ++k) p.add_term({static_cast<int>(k)}, c[k]);
    return PotentialSpec::from_polynomial(p);
}

PotentialSpec double_well(double tilt) { return polynomial_1d({0.0, tilt, -0.5, 0.0, 0.25}); }

// ---------------------------------------------------------------- model files

namespace {

struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
    std::string get(const std::string& key, const std::string& def = "") const {
        for (const auto& [k, v] : entries)
            if (k == key) return v;
        return def;
    }
    bool has(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return true;
        return false;
    }
};

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<Section> parse_sections(const std::string& text) {
    std::vector<Section> out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument("model file: bad section header at line " + std::to_string(lineno));
            out.push_back({trim(line.substr(1, line.size() - 2)), {}});
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("model file: expected key = value at line " + std::to_string(lineno));
        if (out.empty()) throw std::invalid_argument("model file: entry before any section at line " + std::to_string(lineno));
        out.back().entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

std::vector<double> parse_numbers(const std::string& s) {
    std::istringstream is(s);
    std::vector<double> r;
    std::string tok;
    while (is >> tok) r.push_back(std::stod(tok));
    return r;
}

Polynomial parse_terms(const Section& sec, int nvars) {
    Polynomial p(nvars);
    for (const auto& [k, v] : sec.entries) {
        if (k != "term") continue;
        auto colon = v.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("model file: term rows are 'exponents : coefficient'");
        auto ex = parse_numbers(v.substr(0, colon));
        auto cf = parse_numbers(v.substr(colon + 1));
        if (static_cast<int>(ex.size()) != nvars || cf.size() != 1)
            throw std::invalid_argument("model file: term in [" + sec.name + "] needs " + std::to_string(nvars) + " exponents");
        MultiIndex a;
        for (double e : ex) a.push_back(static_cast<int>(e));
        p.add_term(a, cf[0]);
    }
    return p;
}

void write_terms(std::ostream& os, const Polynomial& p) {
    for (const auto& [a, c] : p.terms()) {
        os << "term =";
        for (int e : a) os << ' ' << e;
        os << " : " << c << '\n';
    }
}

const Section* find(const std::vector<Section>& secs, const std::string& name) {
    for (const auto& s : secs)
        if (s.name == name) return &s;
    return nullptr;
}

Mat parse_sigma(const std::string& s, int dp) {
    auto nums = parse_numbers(s);
    if (static_cast<int>(nums.size()) != dp * dp) throw std::invalid_argument("model file: sigma needs d'^2 entries");
    Mat m(dp, dp);
    for (int i = 0; i < dp; ++i)
        for (int j = 0; j < dp; ++j) m(i, j) = nums[i * dp + j];
    return m;
}

PotentialSpec parse_potential(const Section& sec) {
    PotentialSpec V;
    V.d = std::stoi(sec.get("dim", "1"));
    V.poly = parse_terms(sec, V.d);
    V.tail_kappa = std::stod(sec.get("tail_kappa", "0"));
    V.tail_radius = std::stod(sec.get("tail_radius", "1"));
    V.derivative_order_cap = std::stoi(sec.get("derivative_order_cap", "8"));
    return V;
}

}  // namespace

CoefficientSystem parse_model_text(const std::string& text) {
    auto secs = parse_sections(text);
    const Section* pot = find(secs, "potential");
    if (const Section* m = find(secs, "model")) {
        if (!pot) throw std::invalid_argument("model file: [potential] section required");
        PresetParams p;
        p.V = parse_potential(*pot);
        int dp = p.V.d;
        p.Sigma = m->has("sigma") ? parse_sigma(m->get("sigma"), dp) : Mat(Mat::Identity(dp, dp) * std::sqrt(0.5));
        if (const Section* g = find(secs, "g")) {
            p.g = parse_terms(*g, p.V.d);
            if (g->has("box_lo")) {
                Box b;
                auto lo = parse_numbers(g->get("box_lo"));
                auto hi = parse_numbers(g->get("box_hi"));
                b.lo = Eigen::Map<Vec>(lo.data(), lo.size());
                b.hi = Eigen::Map<Vec>(hi.data(), hi.size());
                b.samples_per_axis = 33;
                p.g_box = b;
            }
        }
        for (int i = 0; i < 3; ++i)
            if (const Section* f = find(secs, "field." + std::to_string(i))) p.field.push_back(parse_terms(*f, 3));
        return preset(m->get("preset", "standard"), p);
    }
    const Section* sys = find(secs, "system");
    if (!sys || !pot) throw std::invalid_argument("model file: needs [model] or [system] plus [potential]");
    CoefficientSystem s;
    s.name = sys->get("name", "custom");
    s.d = std::stoi(sys->get("d", "1"));
    s.dp = std::stoi(sys->get("dprime", "1"));
    s.landscape_dim = std::stoi(sys->get("landscape_dim", "-1"));
    s.V = parse_potential(*pot);
    s.Sigma = parse_sigma(sys->get("sigma"), s.dp);
    for (int i = 0; i < s.d; ++i) {
        const Section* a = find(secs, "alpha." + std::to_string(i));
        s.alpha.push_back(a ? parse_terms(*a, s.nvars()) : Polynomial(s.nvars()));
    }
    for (int k = 0; k < s.dp; ++k) {
        const Section* b = find(secs, "beta." + std::to_string(k));
        s.beta.push_back(b ? parse_terms(*b, s.nvars()) : Polynomial(s.nvars()));
    }
    if (const Section* g = find(secs, "noise"))
        s.noise_multiplier = parse_terms(*g, s.nvars());
    else
        s.noise_multiplier = Polynomial::constant(s.nvars(), 1.0);
    s.validate();
    return s;
}

CoefficientSystem load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open model file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_model_text(ss.str());
}

std::string model_to_text(const CoefficientSystem& s) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "[system]\nname = " << s.name << "\nd = " << s.d << "\ndprime = " << s.dp << "\nlandscape_dim = " << s.landscape_dim << "\nsigma =";
    for (int i = 0; i < s.dp; ++i)
        for (int j = 0; j < s.dp; ++j) os << ' ' << s.Sigma(i, j);
    os << "\n\n[potential]\ndim = " << s.V.d << "\ntail_kappa = " << s.V.tail_kappa << "\ntail_radius = " << s.V.tail_radius
       << "\nderivative_order_cap = " << s.V.derivative_order_cap << '\n';
    write_terms(os, s.V.poly);
    for (int i = 0; i < s.d; ++i) {
        os << "\n[alpha." << i << "]\n";
        write_terms(os, s.alpha[i]);
    }
    for (int k = 0; k < s.dp; ++k) {
        os << "\n[beta." << k << "]\n";
        write_terms(os, s.beta[k]);
    }
    os << "\n[noise]\n";
    write_terms(os, s.noise_multiplier.nvars() ? s.noise_multiplier : Polynomial::constant(s.nvars(), 1.0));
    return os.str();
}

}  // namespace kfp
