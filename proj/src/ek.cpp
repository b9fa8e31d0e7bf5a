#include "kfp/ek.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

namespace kfp {

double MinimumPrediction::lambda(double h) const {
    if (global) return 0.0;
    return v * std::pow(h, mu) * std::exp(-2 * S / h);
}

std::string EKPrediction::to_csv(const std::vector<double>& hs) const {
    std::ostringstream os;
    os.precision(17);
    os << "minimum,x,S,mu,v,h,lambda\n";
    for (const auto& r : rows) {
        std::ostringstream loc;
        loc.precision(17);
        for (Eigen::Index i = 0; i < r.location.size(); ++i) loc << (i ? " " : "") << r.location[i];
        for (double h : hs) {
            os << r.minimum << ',' << loc.str() << ',';
            if (r.global)
                os << "inf";
            else
                os << r.S;
            if (r.refused.empty())
                os << ',' << r.mu << ',' << r.v << ',' << h << ',' << r.lambda(h) << '\n';
            else
                os << ",NA,NA," << h << ",NA\n";
        }
    }
    return os.str();
}

EKPrediction predict(const Labeling& lab, const std::map<std::size_t, SaddleData>& saddles, const std::map<std::size_t, Mat>& f_hessian_at_minima,
                     bool partial) {
    EKPrediction out;
    auto refuse = [&](MinimumPrediction& row, const std::string& why) {
        if (!partial) throw PredictionRefused(why);
        row.refused = why;
        row.v = std::numeric_limits<double>::quiet_NaN();
        out.rows.push_back(row);
    };
    for (std::size_t p = 0; p < lab.minima.size(); ++p) {
        MinimumPrediction row;
        row.minimum = lab.minima[p];
        row.location = lab.critical[row.minimum].location;
        row.global = p == 0;
        if (row.global) {
            row.S = std::numeric_limits<double>::infinity();
            out.rows.push_back(row);
            continue;
        }
        row.S = lab.S[p];
        const auto& js = lab.j_map[p];
        if (js.empty()) {
            refuse(row, "minimum " + std::to_string(row.minimum) + " has no boundary saddle");
            continue;
        }
        auto hm = f_hessian_at_minima.find(row.minimum);
        if (hm == f_hessian_at_minima.end()) {
            refuse(row, "missing Hessian of f at minimum " + std::to_string(row.minimum));
            continue;
        }
        int bmin = std::numeric_limits<int>::max();
        std::string missing;
        for (std::size_t s : js) {
            auto it = saddles.find(s);
            if (it == saddles.end()) {
                missing = "missing saddle data for saddle " + std::to_string(s);
                break;
            }
            bmin = std::min(bmin, it->second.b);
        }
        if (!missing.empty()) {
            refuse(row, missing);
            continue;
        }
        row.mu = 1 + bmin;
        double det_m = hm->second.determinant();
        double sum = 0.0;
        for (std::size_t s : js) {
            const auto& sd = saddles.at(s);
            if (sd.b != bmin) continue;
            row.contributing.push_back(s);
            sum += std::sqrt(det_m) / std::sqrt(std::abs(sd.f_hessian.determinant())) * sd.a;
        }
        row.v = sum / (2 * M_PI);
        out.rows.push_back(row);
    }
    return out;
}

std::map<std::size_t, SaddleData> saddle_data_for(const CoefficientSystem& sys, const Labeling& lab, SeriesCaps caps) {
    std::map<std::size_t, SaddleData> out;
    for (const auto& js : lab.j_map)
        for (std::size_t s : js) {
            if (out.count(s)) continue;
            SaddleData sd;
            sd.saddle = s;
            sd.location = lab.critical[s].location;
            sd.f_hessian = sys.f_hessian(sd.location, Vec::Zero(sys.dp));
            auto series = std::make_shared<SaddleSeries>(solve_saddle(sys, sd.location, caps));
            auto ab = extract_a_b(*series, sd.f_hessian);
            sd.a = ab.a;
            sd.b = ab.b;
            sd.series = series;
            out[s] = sd;
        }
    return out;
}

std::map<std::size_t, Mat> minimum_hessians(const CoefficientSystem& sys, const Labeling& lab) {
    std::map<std::size_t, Mat> out;
    for (std::size_t m : lab.minima) out[m] = sys.f_hessian(lab.critical[m].location, Vec::Zero(sys.dp));
    return out;
}

double cutoff_profile(double r) {
    double t = std::abs(r) - 1.0;
    if (t <= 0) return 1.0;
    if (t >= 1) return 0.0;
    double t4 = t * t * t * t;
    return 1.0 - t4 * (35 - 84 * t + 70 * t * t - 20 * t * t * t);
}

namespace {

// F(l) = int_0^l cutoff(r / tau) exp(-r^2 / 2h) dr, closed form on |l| <= tau and tabulated beyond.
class ChannelProfile {
public:
    ChannelProfile(double tau, double h) : tau_(tau), h_(h) {
        const int n = 4000;
        step_ = tau / n;
        table_.assign(n + 1, 0.0);
        auto g = [&](double r) { return cutoff_profile(r / tau) * std::exp(-r * r / (2 * h)); };
        for (int i = 0; i < n; ++i) {
            double a = tau + i * step_, b = a + step_;
            table_[i + 1] = table_[i] + step_ / 6 * (g(a) + 4 * g(0.5 * (a + b)) + g(b));
        }
    }
    double operator()(double l) const {
        double s = l < 0 ? -1.0 : 1.0;
        double x = std::abs(l);
        double core = std::sqrt(M_PI * h_ / 2) * std::erf(std::min(x, tau_) / std::sqrt(2 * h_));
        if (x <= tau_) return s * core;
        double u = std::min((x - tau_) / step_, double(table_.size() - 1));
        auto i = static_cast<std::size_t>(u);
        if (i + 1 >= table_.size()) return s * (core + table_.back());
        double w = u - i;
        return s * (core + (1 - w) * table_[i] + w * table_[i + 1]);
    }
    double total() const { return (*this)(2 * tau_); }

private:
    double tau_, h_, step_;
    std::vector<double> table_;
};

std::size_t nearest_node(const GridBox& g, const Vec& p) {
    std::size_t id = 0;
    for (int a = 0; a < g.d + g.dp; ++a) {
        long i = std::lround((p[a] - g.lo[a]) / g.spacing(a) - 1.0);
        i = std::clamp<long>(i, 0, g.nodes[a] - 1);
        id += static_cast<std::size_t>(i) * g.stride(a);
    }
    return id;
}

template <class F>
void for_neighbors(const GridBox& g, std::size_t id, F&& f) {
    for (int a = 0; a < g.d + g.dp; ++a) {
        std::size_t st = g.stride(a);
        int i = static_cast<int>((id / st) % g.nodes[a]);
        if (i > 0) f(id - st);
        if (i + 1 < g.nodes[a]) f(id + st);
    }
}

std::vector<unsigned char> flood(const GridBox& g, const std::vector<unsigned char>& mask, std::size_t seed) {
    std::vector<unsigned char> out(mask.size(), 0);
    if (!mask[seed]) return out;
    std::deque<std::size_t> q{seed};
    out[seed] = 1;
    while (!q.empty()) {
        std::size_t id = q.front();
        q.pop_front();
        for_neighbors(g, id, [&](std::size_t j) {
            if (mask[j] && !out[j]) {
                out[j] = 1;
                q.push_back(j);
            }
        });
    }
    return out;
}

// Smallest value of f on the x-faces of the box.
double face_minimum(const GridBox& grid, const std::vector<double>& f, int d) {
    double face = std::numeric_limits<double>::infinity();
    for (std::size_t id = 0; id < f.size(); ++id) {
        bool on_face = false;
        for (int a = 0; a < d; ++a) {
            int i = static_cast<int>((id / grid.stride(a)) % grid.nodes[a]);
            on_face = on_face || i == 0 || i == grid.nodes[a] - 1;
        }
        if (on_face) face = std::min(face, f[id]);
    }
    return face;
}

std::vector<double> hierarchy(std::vector<double> levels, double face) {
    levels.push_back(face);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    return levels;
}

double level_gap(const std::vector<double>& sigma_levels, double face) {
    auto levels = hierarchy(sigma_levels, face);
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < levels.size(); ++i) gap = std::min(gap, levels[i + 1] - levels[i]);
    return gap;
}

Vec phase_point(const Vec& x, int dp) {
    Vec p = Vec::Zero(x.size() + dp);
    p.head(x.size()) = x;
    return p;
}

}  // namespace

double channel_normalization(double tau, double h) { return ChannelProfile(tau, h).total(); }

double default_delta(const CoefficientSystem& sys, const Labeling& lab, const GridBox& grid, double factor) {
    std::vector<double> f(grid.size());
    for (std::size_t id = 0; id < grid.size(); ++id) {
        Vec p = grid.point(id);
        f[id] = eval_f(sys, p.head(sys.d), p.tail(sys.dp));
    }
    return factor * level_gap(lab.sigma_levels, face_minimum(grid, f, sys.d));
}

Quasimode build_quasimode(const CoefficientSystem& sys, const Labeling& lab, std::size_t position, const std::map<std::size_t, SaddleData>& saddles,
                          double h, const GridBox& grid, const QuasimodeOptions& opt) {
    const std::size_t N = grid.size();
    const int n = sys.d + sys.dp;
    Quasimode q;
    q.minimum = lab.minima.at(position);
    q.global = position == 0;
    const Vec xm = lab.critical[q.minimum].location;
    const double fm = lab.critical[q.minimum].value;

    Vec f(N);
    for (std::size_t id = 0; id < N; ++id) {
        Vec p = grid.point(id);
        f[id] = eval_f(sys, p.head(sys.d), p.tail(sys.dp));
    }
    Mat Hm = sys.f_hessian(xm, Vec::Zero(sys.dp));
    q.laplace_norm = 2 * std::pow(h * M_PI, n / 4.0) * std::pow(Hm.determinant(), -0.25);
    q.psi = Vec::Zero(N);

    if (q.global) {
        for (std::size_t id = 0; id < N; ++id) q.psi[id] = 2 * std::exp(-(f[id] - fm) / h);
        q.region.assign(N, 1);
    } else {
        const double sigma = lab.sigma[position];
        // Levels: the box-face minimum of f closes the hierarchy from above.
        std::vector<double> fv(f.data(), f.data() + N);
        const double face = face_minimum(grid, fv, sys.d);
        double upper = std::numeric_limits<double>::infinity();
        for (double l : hierarchy(lab.sigma_levels, face))
            if (l > sigma + 1e-12) upper = std::min(upper, l);
        const double gap = level_gap(lab.sigma_levels, face);
        q.delta = opt.delta ? *opt.delta : opt.delta_factor * gap;
        const double delta = q.delta;

        // E_-(m): the component of {f < next level} containing m; the whole box at the top of the hierarchy.
        std::size_t seed = nearest_node(grid, phase_point(xm, sys.dp));
        std::vector<unsigned char> below(N), Eminus;
        for (std::size_t id = 0; id < N; ++id) below[id] = f[id] < upper;
        Eminus = std::isinf(upper) || upper >= face ? std::vector<unsigned char>(N, 1) : flood(grid, below, seed);

        std::vector<unsigned char> region(N);
        for (std::size_t id = 0; id < N; ++id) region[id] = Eminus[id] && f[id] < sigma + 3 * delta;

        // Channels around each boundary saddle.
        std::vector<int> channel_of(N, -1);
        struct Channel {
            const SaddleData* sd;
            Vec s;
            Vec eta;
            double tau;
            double sign = 1.0;
        };
        std::vector<Channel> chans;
        const auto& js = lab.j_map[position];
        if (js.empty()) throw PredictionRefused("minimum has no boundary saddle");
        double tau_min = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < js.size(); ++k) {
            auto it = saddles.find(js[k]);
            if (it == saddles.end()) throw PredictionRefused("missing saddle data for saddle " + std::to_string(js[k]));
            Channel c{&it->second, phase_point(it->second.location, sys.dp), it->second.series->eta(), 0.0};
            double scale = std::numeric_limits<double>::infinity();
            auto dm = lab.separating.descent_minima.find(js[k]);
            if (dm != lab.separating.descent_minima.end()) {
                for (std::size_t mm : {dm->second.first, dm->second.second})
                    scale = std::min(scale, std::abs(c.eta.dot(phase_point(lab.critical[mm].location, sys.dp) - c.s)));
            } else {
                scale = std::abs(c.eta.dot(phase_point(xm, sys.dp) - c.s));
            }
            c.tau = opt.tau ? *opt.tau : opt.tau_factor * scale;
            tau_min = std::min(tau_min, c.tau);
            std::vector<unsigned char> slab(N);
            for (std::size_t id = 0; id < N; ++id)
                slab[id] = region[id] && std::abs(c.eta.dot(grid.point(id) - c.s)) <= 3 * c.tau;
            auto comp = flood(grid, slab, nearest_node(grid, c.s));
            for (std::size_t id = 0; id < N; ++id)
                if (comp[id]) channel_of[id] = static_cast<int>(k);
            chans.push_back(c);
        }
        q.tau = tau_min;

        // E+ is the part of the region outside the channels connected to m.
        std::vector<unsigned char> rest(N);
        for (std::size_t id = 0; id < N; ++id) rest[id] = region[id] && channel_of[id] < 0;
        if (channel_of[seed] >= 0) q.diagnostic = "minimum lies inside a saddle channel; reduce tau";
        auto Eplus = flood(grid, rest, seed);

        // Orientation: the E+ side of each channel carries positive eta . (X - s).
        std::vector<double> side(chans.size(), 0.0);
        for (std::size_t id = 0; id < N; ++id) {
            if (channel_of[id] < 0) continue;
            bool touches = false;
            for_neighbors(grid, id, [&](std::size_t j) { touches = touches || Eplus[j]; });
            if (touches) side[channel_of[id]] += chans[channel_of[id]].eta.dot(grid.point(id) - chans[channel_of[id]].s);
        }
        for (std::size_t k = 0; k < chans.size(); ++k) {
            if (side[k] == 0.0) q.diagnostic += (q.diagnostic.empty() ? "" : "; ") + std::string("channel not adjacent to the minimum side at this resolution");
            chans[k].sign = side[k] < 0 ? -1.0 : 1.0;
        }

        std::vector<ChannelProfile> profiles;
        for (const auto& c : chans) {
            profiles.emplace_back(c.tau, h);
            q.channel_constants.push_back(profiles.back().total());
        }

        q.region.assign(N, 0);
        for (std::size_t id = 0; id < N; ++id) {
            if (!region[id]) continue;
            double theta;
            int k = channel_of[id];
            q.region[id] = k >= 0 ? 2 : (Eplus[id] ? 1 : -1);
            if (k >= 0) {
                Vec p = grid.point(id);
                double l = chans[k].sign * chans[k].sd->series->eval(p.head(sys.d), p.tail(sys.dp), h);
                theta = profiles[k](l) / q.channel_constants[k];
            } else {
                theta = Eplus[id] ? 1.0 : -1.0;
            }
            double t = (f[id] - sigma - 2 * delta) / delta;
            double chi = t <= 0 ? 1.0 : (t >= 1 ? 0.0 : cutoff_profile(1.0 + t));
            q.psi[id] = chi * (theta + 1) * std::exp(-(f[id] - fm) / h);
        }
    }
    const double w = grid.cell_volume();
    q.norm = std::sqrt(q.psi.squaredNorm() * w);
    q.phi = q.psi / q.norm;
    q.support.resize(N);
    for (std::size_t id = 0; id < N; ++id) q.support[id] = q.psi[id] != 0.0;
    return q;
}

Mat gram(const std::vector<Quasimode>& q, const GridBox& grid) {
    const double w = grid.cell_volume();
    Mat G(q.size(), q.size());
    for (std::size_t i = 0; i < q.size(); ++i)
        for (std::size_t j = 0; j < q.size(); ++j) {
            // Exact zero when the supports are disjoint.
            double s = 0.0;
            for (Eigen::Index k = 0; k < q[i].phi.size(); ++k)
                if (q[i].support[k] && q[j].support[k]) s += q[i].phi[k] * q[j].phi[k];
            G(i, j) = s * w;
        }
    return G;
}

double rayleigh(const OperatorMatrix& op, const Quasimode& q) { return (op.P * q.phi).dot(q.phi) * op.grid.cell_volume(); }

QuasimodeResiduals quasimode_residuals(const OperatorMatrix& op, const Quasimode& q) {
    const double w = op.grid.cell_volume();
    Vec Pp = op.P * q.phi;
    Vec Ptp = op.P.transpose() * q.phi;
    QuasimodeResiduals r;
    r.rayleigh = Pp.dot(q.phi) * w;
    r.residual_ratio = Pp.squaredNorm() * w / r.rayleigh;
    r.adjoint_ratio = Ptp.squaredNorm() * w / r.rayleigh;
    return r;
}

void write_raster(const std::string& path, const GridBox& grid, const Vec& values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path);
    const int rank = grid.d + grid.dp;
    auto put32 = [&](std::int32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
    auto putd = [&](double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
    put32(rank);
    for (int a = 0; a < rank; ++a) put32(grid.nodes[a]);
    for (int a = 0; a < rank; ++a) putd(grid.coordinate(a, 0));
    for (int a = 0; a < rank; ++a) putd(grid.spacing(a));
    // Row-major with the first axis slowest; the grid stores the first axis fastest.
    std::vector<int> idx(rank, 0);
    const std::size_t N = grid.size();
    for (std::size_t t = 0; t < N; ++t) {
        std::size_t id = 0;
        for (int a = 0; a < rank; ++a) id += idx[a] * grid.stride(a);
        putd(values[static_cast<Eigen::Index>(id)]);
        for (int a = rank - 1; a >= 0; --a) {
            if (++idx[a] < grid.nodes[a]) break;
            idx[a] = 0;
        }
    }
}

}  // namespace kfp
