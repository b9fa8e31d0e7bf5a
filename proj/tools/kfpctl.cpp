// kfpctl: label, check, predict and cross-validate metastable kinetic models from a JSON experiment config.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "kfp/pipeline.hpp"

using namespace kfp;

namespace {

struct Overrides {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::vector<double> h_sweep;
    std::string grid;
    std::optional<double> box_margin;
    std::optional<int> k_eigs;
    std::string preset;
    std::optional<double> h;
    std::optional<double> dt;
    std::optional<int> ntraj;
    std::optional<double> tmax;
    std::vector<std::string> stages;
};

ExperimentConfig build_config(const Overrides& o) {
    if (o.config.empty()) throw std::invalid_argument("--config is required");
    ExperimentConfig c = ExperimentConfig::load(o.config);
    if (!o.out.empty()) c.out_dir = o.out;
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    if (!o.h_sweep.empty()) c.h_sweep = o.h_sweep;
    if (!o.grid.empty()) {
        auto x = o.grid.find('x');
        if (x == std::string::npos) throw std::invalid_argument("--grid expects NXxNV, e.g. 400x200");
        c.grid.nx = std::stoi(o.grid.substr(0, x));
        c.grid.nv = std::stoi(o.grid.substr(x + 1));
    }
    if (o.box_margin) c.grid.margin = *o.box_margin;
    if (o.k_eigs) c.k_eigs = *o.k_eigs;
    if (!o.preset.empty()) {
        if (c.potential_terms.empty()) throw std::invalid_argument("--preset applies to configs that give model.potential");
        c.preset = o.preset;
    }
    if (o.h) {
        c.sde.h_sweep = {*o.h};
        if (std::find(c.h_sweep.begin(), c.h_sweep.end(), *o.h) == c.h_sweep.end()) c.h_sweep.push_back(*o.h);
    }
    if (o.dt) c.sde.dt = *o.dt;
    if (o.ntraj) c.sde.n_traj = *o.ntraj;
    if (o.tmax) c.sde.T_max = *o.tmax;
    return c;
}

int execute(const Overrides& o, const std::set<std::string>& stages) {
    ExperimentConfig c = build_config(o);
    PipelineResult r = run_pipeline(c, stages);
    for (const auto& f : r.written) std::cout << "wrote " << c.out_dir << "/" << f << '\n';
    for (const auto& g : r.gaps) std::cerr << "gap: " << g << '\n';
    return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Metastability toolkit for kinetic Fokker-Planck models"};
    app.set_version_flag("--version", kToolVersion);
    app.set_help_flag("--help", "Print this help message and exit");
    app.require_subcommand(1);
    Overrides o;
    app.add_option("--config", o.config, "Experiment config (JSON)");
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--seed", o.seed, "Random seed");
    app.add_option("--threads", o.threads, "Worker threads for the SDE stage")->check(CLI::PositiveNumber);

    auto spectral_flags = [&](CLI::App* s) {
        s->add_option("--h-sweep", o.h_sweep, "Semiclassical parameters")->delimiter(',');
        s->add_option("--grid", o.grid, "Interior nodes NXxNV");
        s->add_option("--box-margin", o.box_margin, "V margin above the highest critical value on the box faces");
        s->add_option("--k-eigs", o.k_eigs, "Eigenvalues requested");
    };
    auto sde_flags = [&](CLI::App* s) {
        s->add_option("--preset", o.preset, "Preset name for configs given by a potential");
        s->add_option("--h", o.h, "Temperature for the SDE stage");
        s->add_option("--dt", o.dt, "Euler-Maruyama step");
        s->add_option("--ntraj", o.ntraj, "Trajectories per start well");
        s->add_option("--tmax", o.tmax, "Censoring horizon");
    };

    std::string compare_dir;
    std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
    const std::map<std::string, std::string> help{{"label", "Critical points, saddle labeling and disconnectivity table"},
                                                  {"hypo", "Hypocoercivity verdicts and the gap function"},
                                                  {"wkb", "Saddle phase series and prefactor data"},
                                                  {"ek", "Eyring-Kramers predictions"},
                                                  {"spectrum", "Small eigenvalues of the discretized operator"},
                                                  {"sde", "Escape-time statistics from Langevin trajectories"}};
    for (const auto& name : stage_names()) {
        auto* s = app.add_subcommand(name, help.at(name));
        if (name == "spectrum") spectral_flags(s);
        if (name == "sde") sde_flags(s);
        stage_cmds.emplace_back(name, s);
    }
    auto* pipe = app.add_subcommand("pipeline", "Run every stage and write the summary report");
    spectral_flags(pipe);
    sde_flags(pipe);
    pipe->add_option("--stage", o.stages, "Restrict to these stages")->check(CLI::IsMember(stage_names()));
    auto* cmp = app.add_subcommand("compare", "Ratio tables from a pipeline output directory");
    cmp->add_option("dir", compare_dir, "Pipeline output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*cmp) {
            std::string dir = compare_dir.empty() ? (o.out.empty() ? build_config(o).out_dir : o.out) : compare_dir;
            CompareResult r = compare_reports(dir);
            std::ofstream(dir + "/compare.csv") << r.csv;
            std::cout << r.table;
            return exit_ok;
        }
        if (*pipe) return execute(o, std::set<std::string>(o.stages.begin(), o.stages.end()));
        for (const auto& [name, s] : stage_cmds)
            if (*s) return execute(o, {name});
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_numerical;
    }
    return exit_usage;
}
