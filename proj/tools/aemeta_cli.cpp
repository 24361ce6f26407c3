// aemeta: command-line front end.
//
// Exit codes: 0 success, 1 invalid input or configuration (including
// dataset violations), 2 unreadable or unwritable files, 3 a fit that did
// not converge (without --allow-nonconverged), 4 a reproduction mismatch.

#include "aemeta/core_data.hpp"
#include "aemeta/errors.hpp"
#include "aemeta/hier_model.hpp"
#include "aemeta/map_prior.hpp"
#include "aemeta/report.hpp"
#include "aemeta/sim_engine.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace aemeta;

namespace {

constexpr int kExitInvalid = 1;
constexpr int kExitIo = 2;
constexpr int kExitNonConverged = 3;
constexpr int kExitMismatch = 4;

struct SamplerFlags {
    std::optional<std::uint64_t> seed;
    std::optional<int> chains;
    std::optional<int> warmup;
    std::optional<int> samples;
    std::optional<int> threads;

    void add(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "Master seed");
        cmd->add_option("--chains", chains, "Number of chains")->check(CLI::PositiveNumber);
        cmd->add_option("--warmup", warmup, "Warmup iterations per chain")->check(CLI::PositiveNumber);
        cmd->add_option("--samples", samples, "Retained draws per chain")->check(CLI::PositiveNumber);
        cmd->add_option("--threads", threads, "Worker threads (0 = automatic)")->check(CLI::NonNegativeNumber);
    }

    void apply(SamplerConfig& c) const {
        if (seed) c.seed = *seed;
        if (chains) c.chains = *chains;
        if (warmup) c.warmup = *warmup;
        if (samples) c.samples = *samples;
        if (threads) c.threads = *threads;
    }
};

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

// Runs `body`, mapping library exceptions to exit codes.
template <class F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
}

int cmd_validate(const std::string& path) {
    return guarded([&] {
        if (!fs::exists(path)) throw IoError("no such file '" + path + "'");
        const auto data = load_dataset(path);
        const auto problems = validate(data);
        if (problems.empty()) {
            std::cout << path << ": OK (" << data.main_trial_count() << " main trial(s), "
                      << data.historical_trial_count() << " historical, " << data.arm_count() << " arms)\n";
            return 0;
        }
        for (const auto& v : problems) std::cout << v.describe() << "\n";
        std::cout << problems.size() << " violation(s)\n";
        return kExitInvalid;
    });
}

struct FitArgs {
    std::string data;
    std::string config;
    std::string prior;
    std::string out_dir = ".";
    double level = 0.95;
    bool allow_nonconverged = false;
    bool draws = false;
    SamplerFlags sampler;
};

int emit_report(const AnalysisReport& rep, const fs::path& out_dir, bool allow_nonconverged) {
    write_file(out_dir / "report.json", report_to_json(rep).dump(2) + "\n");
    write_file(out_dir / "report.txt", report_text(rep));
    write_file(out_dir / "forest.csv", forest_csv(rep));
    std::cout << report_text(rep);
    std::cout << "\nwrote " << (out_dir / "report.json").string() << ", report.txt, forest.csv\n";
    if (!rep.converged && !allow_nonconverged) {
        std::cerr << "error: the fit did not converge (max R-hat " << rep.max_rhat
                  << "); rerun with more iterations or pass --allow-nonconverged\n";
        return kExitNonConverged;
    }
    return 0;
}

int cmd_fit(const FitArgs& a) {
    return guarded([&] {
        FitRequest req;
        req.data = load_dataset(a.data);
        req.data_source = fs::path(a.data).filename().string();
        if (!a.config.empty()) req.model = model_spec_from_json(read_json(a.config));
        if (!a.prior.empty()) {
            const auto map = load_map_file(a.prior);
            req.model = attach(req.model, map.priors, map.mode);
            req.data = main_trials_only(req.data);
        }
        req.level = a.level;
        a.sampler.apply(req.sampler);
        const auto rep = run_fit(req);
        return emit_report(rep, a.out_dir, a.allow_nonconverged);
    });
}

struct MapArgs {
    std::string data;
    std::string config;
    std::string out = "map_prior.json";
    std::string mode = "non_stratified";
    double robust_weight = 0.5;
    std::size_t max_components = 4;
    SamplerFlags sampler;
};

int cmd_map(const MapArgs& a) {
    return guarded([&] {
        const auto data = load_dataset(a.data);
        ModelSpec spec;
        if (!a.config.empty()) spec = model_spec_from_json(read_json(a.config));
        MapSettings settings;
        settings.mode = a.mode == "stratified" ? MapMode::Stratified : MapMode::NonStratified;
        settings.robust_weight = a.robust_weight;
        settings.max_components = a.max_components;
        a.sampler.apply(settings.sampler);
        const auto result = derive_map(data, spec, settings);
        auto j = map_result_to_json(result);
        j["source"] = {{"data", fs::path(a.data).filename().string()},
                       {"model", model_spec_to_json(spec)},
                       {"sampler", sampler_config_to_json(settings.sampler)}};
        write_file(a.out, j.dump(2) + "\n");
        for (std::size_t i = 0; i < result.priors.size(); ++i) {
            const auto& p = result.priors[i];
            const auto& f = result.fits[i];
            std::cout << "block";
            for (const auto& n : p.parameters) std::cout << " " << n;
            std::cout << ": " << f.selected_components << " component(s), robust weight " << p.robust_weight
                      << ", hash " << hash_hex(mixture_hash(p)) << "\n";
            for (const auto& c : f.fidelity) {
                std::cout << "  " << c.parameter << " percentiles (2.5/50/97.5) draws " << c.empirical[0] << " "
                          << c.empirical[1] << " " << c.empirical[2] << ", fit " << c.fitted[0] << " " << c.fitted[1]
                          << " " << c.fitted[2] << (c.ok ? "" : "  MISFIT") << "\n";
            }
            for (const auto& n : f.notes) std::cout << "  note: " << n << "\n";
        }
        std::cout << "wrote " << a.out << "\n";
        return 0;
    });
}

struct SimulateArgs {
    std::string scenario;
    std::vector<std::string> bundled;
    std::optional<int> reps;
    std::optional<int> emit_data;
    std::string out_dir = ".";
    SamplerFlags sampler;
};

int cmd_simulate(const SimulateArgs& a) {
    return guarded([&] {
        std::vector<ScenarioSpec> specs;
        if (!a.scenario.empty()) specs.push_back(load_scenario(a.scenario));
        for (const auto& name : a.bundled) {
            if (name == "all") {
                for (auto& s : bundled_scenarios()) specs.push_back(std::move(s));
                continue;
            }
            auto s = find_bundled(name);
            if (!s) {
                std::string names;
                for (const auto& n : bundled_names()) names += " " + n;
                throw ConfigError("unknown bundled scenario '" + name + "'; available:" + names);
            }
            specs.push_back(std::move(*s));
        }
        if (specs.empty()) throw ConfigError("give a scenario file or --bundled NAME");

        std::vector<ScenarioResult> results;
        for (auto& s : specs) {
            if (a.reps) s.replications = *a.reps;
            a.sampler.apply(s.sampler);
            if (a.sampler.threads) {
                s.threads = *a.sampler.threads;
                s.sampler.threads = 1;
            }
            s.check();
            if (a.emit_data) {
                const auto path = fs::path(a.out_dir) / (s.name + "_rep" + std::to_string(*a.emit_data) + ".csv");
                write_file(path, serialize_dataset(simulate_dataset(s, *a.emit_data), DataFormat::Csv));
                std::cout << "wrote " << path.string() << "\n";
                continue;
            }
            std::cerr << s.name << ": " << s.replications << " replications\n";
            auto res = run_scenario(s, [&](int done, int total) {
                if (done % 10 == 0 || done == total) std::cerr << "  " << done << "/" << total << "\r" << std::flush;
            });
            std::cerr << "\n";
            nlohmann::json j = {{"scenario", scenario_to_json(s)}, {"result", result_to_json(res)}};
            write_file(fs::path(a.out_dir) / (s.name + ".json"), j.dump(2) + "\n");
            for (const auto& an : res.analyses) {
                std::printf("%-10s %-9s coverage %.3f (%.3f)  rejection %.3f (%.3f)  width %.3f  failed %d  "
                            "nonconverged %d\n",
                            s.name.c_str(), an.label.c_str(), an.coverage, an.coverage_se, an.rejection_rate,
                            an.rejection_se, an.mean_width, an.n_failed, an.n_nonconverged);
            }
            results.push_back(std::move(res));
        }
        if (!results.empty()) write_file(fs::path(a.out_dir) / "results.csv", results_csv(results));
        return 0;
    });
}

struct ReportArgs {
    std::string input;
    bool rerun = false;
    std::string out_dir;
};

int cmd_report(const ReportArgs& a) {
    return guarded([&] {
        const auto j = read_json(a.input);
        if (!a.rerun) {
            std::cout << report_text(report_from_json(j));
            return 0;
        }
        const auto rep = run_fit(request_from_json(j));
        const auto fresh = report_to_json(rep);
        if (!a.out_dir.empty()) {
            write_file(fs::path(a.out_dir) / "report.json", fresh.dump(2) + "\n");
            write_file(fs::path(a.out_dir) / "forest.csv", forest_csv(rep));
        }
        if (fresh == j) {
            std::cout << "reproduced: every number in " << a.input << " matches the re-run\n";
            return 0;
        }
        const auto diff = nlohmann::json::diff(j, fresh);
        std::cout << "MISMATCH: " << diff.size() << " difference(s) between " << a.input << " and the re-run\n";
        for (std::size_t i = 0; i < std::min<std::size_t>(diff.size(), 10); ++i) std::cout << "  " << diff[i].dump() << "\n";
        return kExitMismatch;
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian meta-analysis of adverse events with early discontinuation"};
    app.set_version_flag("--version", std::string("aemeta ") + kToolVersion);
    app.require_subcommand(1);

    std::string validate_path;
    auto* validate_cmd = app.add_subcommand("validate", "Check a dataset against every consistency rule");
    validate_cmd->add_option("file,--data", validate_path, "Dataset (CSV or JSON)")->required();

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit", "Fit a model and write report.json, report.txt and forest.csv");
    fit_cmd->add_option("--data", fit.data, "Dataset (CSV or JSON)")->required();
    fit_cmd->add_option("--config", fit.config, "Model configuration (JSON); common effect with default priors if absent");
    fit_cmd->add_option("--prior", fit.prior, "MAP prior file written by 'map'; historical trials are then dropped");
    fit_cmd->add_option("--out-dir", fit.out_dir, "Output directory");
    fit_cmd->add_option("--level", fit.level, "Credible level")->check(CLI::Range(0.5, 0.999));
    fit_cmd->add_flag("--allow-nonconverged", fit.allow_nonconverged, "Exit 0 even if R-hat of phi or eta exceeds 1.05");
    fit.sampler.add(fit_cmd);

    MapArgs map;
    auto* map_cmd = app.add_subcommand("map", "Derive a robust MAP prior from the historical trials of a dataset");
    map_cmd->add_option("--data", map.data, "Dataset with historical trials")->required();
    map_cmd->add_option("--config", map.config, "Model configuration for the historical fit (JSON)");
    map_cmd->add_option("--out", map.out, "Output file");
    map_cmd->add_option("--mode", map.mode, "non_stratified or stratified")
        ->check(CLI::IsMember({"non_stratified", "stratified"}));
    map_cmd->add_option("-w,--robust-weight", map.robust_weight, "Weight of the informative part")
        ->check(CLI::Range(0.0, 1.0));
    map_cmd->add_option("--max-components", map.max_components, "Largest mixture size tried (at most 4)")
        ->check(CLI::Range(1, 4));
    map.sampler.add(map_cmd);

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Run a simulation scenario and tabulate coverage and rejection rates");
    sim_cmd->add_option("scenario", sim.scenario, "Scenario file (JSON)");
    sim_cmd->add_option("--bundled", sim.bundled, "Bundled scenario name (rosi-1..8, onco-1..8 or all)");
    sim_cmd->add_option("--reps", sim.reps, "Override the replication count")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--out-dir", sim.out_dir, "Output directory");
    sim_cmd->add_option("--emit-data", sim.emit_data, "Write replication R's dataset as CSV instead of fitting")
        ->check(CLI::NonNegativeNumber);
    sim.sampler.add(sim_cmd);

    ReportArgs rep;
    auto* rep_cmd = app.add_subcommand("report", "Print a saved report, or re-run it and compare every number");
    rep_cmd->add_option("file", rep.input, "report.json written by 'fit'")->required();
    rep_cmd->add_flag("--rerun", rep.rerun, "Re-run the embedded request and compare");
    rep_cmd->add_option("--out-dir", rep.out_dir, "Where to write the re-run's report");

    bool list = false;
    auto* list_cmd = app.add_subcommand("scenarios", "List bundled scenarios, or print one as JSON");
    std::string show;
    list_cmd->add_option("name", show, "Scenario to print");
    list_cmd->add_flag("--list", list, "Names only");

    CLI11_PARSE(app, argc, argv);

    if (*validate_cmd) return cmd_validate(validate_path);
    if (*fit_cmd) return cmd_fit(fit);
    if (*map_cmd) return cmd_map(map);
    if (*sim_cmd) return cmd_simulate(sim);
    if (*rep_cmd) return cmd_report(rep);
    if (*list_cmd) {
        if (!show.empty()) {
            const auto s = find_bundled(show);
            if (!s) {
                std::cerr << "error: unknown bundled scenario '" << show << "'\n";
                return kExitInvalid;
            }
            std::cout << scenario_to_json(*s).dump(2) << "\n";
            return 0;
        }
        for (const auto& s : bundled_scenarios()) {
            if (list) {
                std::cout << s.name << "\n";
            } else {
                std::printf("%-8s phi %.2f eta %.1f  %s\n", s.name.c_str(), s.truth.phi, s.truth.eta,
                            s.description.c_str());
            }
        }
        return 0;
    }
    return 0;
}
