#include "aemeta/sim_engine.hpp"

#include "aemeta/diagnostics.hpp"
#include "aemeta/errors.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

namespace aemeta {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double exp_draw(double rate, Engine& rng) {
    const double u = std::exponential_distribution<double>(1.0)(rng);
    return rate > 0.0 ? u / rate : kInf;
}

std::string fmt(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

ModelSpec vague_model(EffectStructure e, Anchor a, std::optional<double> eta_scale) {
    ModelSpec m;
    m.effect = e;
    m.anchor = a;
    m.priors["phi"] = CauchyPrior{0.0, 2.5};
    if (e == EffectStructure::RandomEffects && eta_scale) m.priors["eta"] = HalfNormalPrior{*eta_scale};
    return m;
}

SamplerConfig simulation_sampler() {
    SamplerConfig s;
    s.chains = 4;
    s.warmup = 500;
    s.samples = 500;
    s.threads = 1;
    return s;
}

std::vector<TrialDesign> rosiglitazone_design() {
    const double w12 = 12.0 / 52.0, w26 = 0.5, w52 = 1.0;
    std::vector<TrialDesign> t = {
        {"M1", std::nullopt, false, 25, 150, w12, w12},  {"M2", std::nullopt, false, 100, 100, w12, w12},
        {"M3", std::nullopt, false, 50, 100, w26, w26},  {"M4", std::nullopt, false, 50, 100, w26, w26},
        {"M5", std::nullopt, false, 50, 100, w26, w26},  {"M6", std::nullopt, false, 300, 300, w52, w52},
    };
    const double taus[3] = {w12, w26, w52};
    for (int h = 0; h < 12; ++h) {
        t.push_back({"H" + std::to_string(h + 1), std::nullopt, true, 25 * (h + 1), 0, taus[h % 3], taus[h % 3]});
    }
    return t;
}

std::vector<TrialDesign> oncology_design() {
    // Sizes of the bundled oncology example; durations converted from months to years.
    struct Row {
        const char* id;
        const char* ind;
        Count nt, nc;
        double tt, tc;
    };
    const Row rows[] = {{"1", "1", 400, 370, 30, 20}, {"2", "1", 680, 500, 65, 65}, {"3", "2", 245, 240, 30, 30},
                        {"4", "2", 190, 175, 15, 15}, {"5", "3", 350, 350, 35, 35}, {"6", "4", 440, 440, 25, 20},
                        {"7", "5", 190, 180, 25, 25}, {"8", "5", 330, 340, 25, 25}, {"9", "6", 350, 350, 10, 10}};
    std::vector<TrialDesign> out;
    for (const auto& r : rows) out.push_back({r.id, r.ind, false, r.nc, r.nt, r.tc / 12.0, r.tt / 12.0});
    return out;
}

MapSettings rosiglitazone_map_settings() {
    MapSettings m;
    m.mode = MapMode::NonStratified;
    m.robust_weight = 0.5;
    m.max_components = 4;
    m.sampler = simulation_sampler();
    return m;
}

}  // namespace

int classify_patient(double x, double c, bool fatal, double tau) {
    if (!(x > 0.0) || !(c > 0.0) || !(tau > 0.0) || std::isinf(tau)) {
        throw DomainError("classify_patient: times must be positive and tau finite");
    }
    if (x <= c && x <= tau) {
        if (fatal) return 1;
        return c >= tau ? 2 : 3;
    }
    if (c < tau && c < x) return 5;
    return 4;
}

PatientOutcome simulate_patient(const RateParams& rates, Engine& rng) {
    PatientOutcome p;
    p.x = exp_draw(rates.lambda, rng);
    p.c = exp_draw(rates.mu, rng);
    p.fatal = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < rates.q;
    p.category = classify_patient(p.x, p.c, p.fatal, rates.tau);
    return p;
}

ArmRecord simulate_arm(const RateParams& rates, Count n, Engine& rng, ArmRole role, std::array<Count, 5>* categories) {
    if (n < 1) throw DomainError("simulate_arm: n must be at least 1");
    category_probs(rates);  // validates the parameters
    std::array<Count, 5> w{};
    for (Count i = 0; i < n; ++i) ++w[simulate_patient(rates, rng).category - 1];
    if (categories) *categories = w;
    return ArmRecord{role, n, w[0] + w[1] + w[2], w[0] + w[2] + w[4], w[0], rates.tau};
}

void ScenarioSpec::check() const {
    if (replications < 1) throw ConfigError("scenario " + name + ": replications must be at least 1");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("scenario " + name + ": level must lie in (0,1)");
    const auto& t = truth;
    for (double r : {t.mu0, t.mu1}) {
        if (!(std::isfinite(r) && r >= 0.0)) throw ConfigError("scenario " + name + ": rates must be nonnegative");
    }
    for (double q : {t.q0, t.q1}) {
        if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("scenario " + name + ": q must lie in [0,1]");
    }
    if (!(std::isfinite(t.eta) && t.eta >= 0.0)) throw ConfigError("scenario " + name + ": eta must be >= 0");
    if (!(std::isfinite(t.anchor_log_rate_sd) && t.anchor_log_rate_sd >= 0.0)) {
        throw ConfigError("scenario " + name + ": anchor_log_rate_sd must be >= 0");
    }
    if (!std::isfinite(t.anchor_log_rate_mean) || !std::isfinite(t.phi)) {
        throw ConfigError("scenario " + name + ": non-finite generative parameter");
    }
    std::size_t main = 0, hist = 0;
    for (const auto& d : trials) {
        if (d.n_control < 1 || !(d.tau_control > 0.0)) throw ConfigError("scenario " + name + ": invalid control arm");
        if (d.historical) {
            ++hist;
        } else {
            ++main;
            if (d.n_treatment < 1 || !(d.tau_treatment > 0.0)) {
                throw ConfigError("scenario " + name + ": invalid treatment arm");
            }
        }
    }
    if (main == 0) throw ConfigError("scenario " + name + ": no main trial");
    if (hist > 0 && t.anchor == Anchor::Treatment) {
        throw ConfigError("scenario " + name + ": historical trials need a control-anchored design");
    }
    if (analyses.empty()) throw ConfigError("scenario " + name + ": no analyses");
    for (const auto& a : analyses) {
        check_model_spec(a.model);
        if (a.map && hist < 2) throw ConfigError("scenario " + name + ": MAP analysis needs >= 2 historical trials");
    }
    sampler.check();
}

Dataset simulate_dataset(const ScenarioSpec& spec, int rep) {
    auto rng = make_engine(spec.seed, {static_cast<std::uint64_t>(rep), 0});
    std::normal_distribution<double> z(0.0, 1.0);
    const auto& t = spec.truth;
    Dataset data;
    data.time_unit = spec.time_unit;
    data.provenance = "simulated: scenario " + spec.name + ", replication " + std::to_string(rep);
    for (const auto& d : spec.trials) {
        TrialRecord tr;
        tr.trial_id = d.trial_id;
        tr.indication = d.indication;
        tr.historical = d.historical;
        const double anchor = t.anchor_log_rate_mean + t.anchor_log_rate_sd * z(rng);
        if (d.historical) {
            tr.arms.push_back(simulate_arm({std::exp(anchor), t.mu0, t.q0, d.tau_control}, d.n_control, rng));
        } else {
            const double phi_i = t.phi + t.eta * z(rng);
            const double log_l0 = t.anchor == Anchor::Control ? anchor : anchor - phi_i;
            const double log_l1 = t.anchor == Anchor::Control ? anchor + phi_i : anchor;
            tr.arms.push_back(
                simulate_arm({std::exp(log_l0), t.mu0, t.q0, d.tau_control}, d.n_control, rng, ArmRole::Control));
            tr.arms.push_back(simulate_arm({std::exp(log_l1), t.mu1, t.q1, d.tau_treatment}, d.n_treatment, rng,
                                           ArmRole::Treatment));
        }
        data.trials.push_back(std::move(tr));
    }
    return data;
}

ReplicationFit fit_replication(const ScenarioSpec& spec, const Dataset& data, int rep, std::size_t a) {
    ReplicationFit out;
    const auto& an = spec.analyses[a];
    const auto r = static_cast<std::uint64_t>(rep);
    try {
        ModelSpec model = an.model;
        if (an.map) {
            MapSettings ms = *an.map;
            ms.sampler = spec.sampler;
            ms.sampler.seed = stream_seed(spec.seed, {r, 1000 + a});
            const auto map = derive_map(data, model, ms);
            model = attach(model, map.priors, ms.mode);
        }
        const Dataset fit_data = an.include_historical && !an.map ? data : main_trials_only(data);
        const PosteriorModel pm(model, fit_data);
        SamplerConfig sc = spec.sampler;
        sc.seed = stream_seed(spec.seed, {r, 1 + a});
        const auto draws = run(pm.target(), sc);
        std::vector<std::string> names = {"phi"};
        if (draws.constrained_index("eta")) names.push_back("eta");
        const auto summary = summarize(draws, spec.level, names);
        const auto* phi = summary.find("phi");
        out.lower = phi->lower;
        out.upper = phi->upper;
        out.median = phi->median;
        out.rhat = 0.0;
        for (const auto& p : summary.parameters) {
            if (std::isfinite(p.rhat)) out.rhat = std::max(out.rhat, p.rhat);
        }
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

ScenarioResult run_scenario(const ScenarioSpec& spec, const ProgressFn& progress) {
    spec.check();
    const int R = spec.replications;
    const std::size_t A = spec.analyses.size();
    std::vector<std::vector<ReplicationFit>> fits(R, std::vector<ReplicationFit>(A));

    ScenarioSpec inner = spec;
    int threads = spec.threads > 0 ? spec.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, R);
    if (threads > 1) inner.sampler.threads = 1;

    std::atomic<int> next{0};
    std::atomic<int> done{0};
    std::mutex progress_mutex;
    auto worker = [&]() {
        for (int rep = next++; rep < R; rep = next++) {
            const auto data = simulate_dataset(inner, rep);
            for (std::size_t a = 0; a < A; ++a) fits[rep][a] = fit_replication(inner, data, rep, a);
            const int d = ++done;
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(d, R);
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    ScenarioResult res;
    res.scenario = spec.name;
    res.true_phi = spec.truth.phi;
    res.true_eta = spec.truth.eta;
    res.replications = R;
    for (std::size_t a = 0; a < A; ++a) {
        AnalysisResult ar;
        ar.label = spec.analyses[a].label;
        ar.replications = R;
        int ok = 0, covered = 0, rejected = 0;
        double width_sum = 0.0, width_sq = 0.0;
        for (int rep = 0; rep < R; ++rep) {
            const auto& f = fits[rep][a];
            if (!f.ok) {
                ++ar.n_failed;
                ar.failures.push_back("replication " + std::to_string(rep) + ": " + f.error);
                continue;
            }
            ++ok;
            if (f.rhat > 1.05) ++ar.n_nonconverged;
            if (f.lower <= spec.truth.phi && spec.truth.phi <= f.upper) ++covered;
            if (f.lower > 0.0 || f.upper < 0.0) ++rejected;
            const double w = f.upper - f.lower;
            width_sum += w;
            width_sq += w * w;
        }
        if (ok > 0) {
            const double n = ok;
            ar.coverage = covered / n;
            ar.rejection_rate = rejected / n;
            ar.coverage_se = std::sqrt(ar.coverage * (1.0 - ar.coverage) / n);
            ar.rejection_se = std::sqrt(ar.rejection_rate * (1.0 - ar.rejection_rate) / n);
            ar.mean_width = width_sum / n;
            const double var = ok > 1 ? std::max(0.0, (width_sq - n * ar.mean_width * ar.mean_width) / (n - 1.0)) : 0.0;
            ar.width_se = std::sqrt(var / n);
        }
        res.analyses.push_back(std::move(ar));
    }
    return res;
}

std::vector<ScenarioSpec> bundled_scenarios() {
    std::vector<ScenarioSpec> out;
    const double etas[4] = {0.0, 0.2, 0.4, 0.8};
    for (int s = 0; s < 8; ++s) {
        ScenarioSpec sc;
        sc.name = "rosi-" + std::to_string(s + 1);
        sc.description =
            "Rosiglitazone-style design: 6 main trials (1425 patients) and 12 historical control arms; "
            "lambda0 = 0.5, mu = 0.5 and q = 0.35 per year";
        sc.time_unit = "years";
        sc.trials = rosiglitazone_design();
        sc.truth = {Anchor::Control, std::log(0.5), 0.0, 0.5, 0.5, 0.35, 0.35, s < 4 ? 0.0 : 0.25, etas[s % 4]};
        sc.replications = 1000;
        sc.seed = 20240 + static_cast<std::uint64_t>(s);
        sc.sampler = simulation_sampler();
        ModelSpec ce = vague_model(EffectStructure::CommonEffect, Anchor::Control, std::nullopt);
        ModelSpec re = vague_model(EffectStructure::RandomEffects, Anchor::Control, 100.0);
        ModelSpec re_map = vague_model(EffectStructure::RandomEffects, Anchor::Control, 0.5);
        sc.analyses = {{"CE-vague", ce, std::nullopt, false},
                       {"RE-vague", re, std::nullopt, false},
                       {"CE-MAP", ce, rosiglitazone_map_settings(), false},
                       {"RE-MAP", re_map, rosiglitazone_map_settings(), false}};
        out.push_back(std::move(sc));
    }
    for (int s = 0; s < 8; ++s) {
        ScenarioSpec sc;
        sc.name = "onco-" + std::to_string(s + 1);
        sc.description =
            "Oncology-style design: 9 trials with the bundled example's sizes and durations; treatment-anchored "
            "log lambda1 ~ Normal(log 0.02, 1.2^2), mu = 0.5 and q = 0.01 per year";
        sc.time_unit = "years";
        sc.trials = oncology_design();
        sc.truth = {Anchor::Treatment, std::log(0.02), 1.2, 0.5, 0.5, 0.01, 0.01, s < 4 ? 0.0 : 0.5, etas[s % 4]};
        sc.replications = 1000;
        sc.seed = 20340 + static_cast<std::uint64_t>(s);
        sc.sampler = simulation_sampler();
        sc.analyses = {{"CE-vague", vague_model(EffectStructure::CommonEffect, Anchor::Treatment, std::nullopt),
                        std::nullopt, false},
                       {"RE-vague", vague_model(EffectStructure::RandomEffects, Anchor::Treatment, 0.5),
                        std::nullopt, false}};
        out.push_back(std::move(sc));
    }
    return out;
}

std::optional<ScenarioSpec> find_bundled(const std::string& name) {
    for (auto& s : bundled_scenarios())
        if (s.name == name) return s;
    return std::nullopt;
}

std::vector<std::string> bundled_names() {
    std::vector<std::string> out;
    for (const auto& s : bundled_scenarios()) out.push_back(s.name);
    return out;
}

nlohmann::json scenario_to_json(const ScenarioSpec& spec) {
    using nlohmann::json;
    json j;
    j["schema_version"] = 1;
    j["name"] = spec.name;
    j["description"] = spec.description;
    j["time_unit"] = spec.time_unit;
    j["replications"] = spec.replications;
    j["seed"] = spec.seed;
    j["level"] = spec.level;
    j["threads"] = spec.threads;
    const auto& t = spec.truth;
    j["truth"] = {{"anchor", std::string(to_string(t.anchor))},
                  {"anchor_log_rate_mean", t.anchor_log_rate_mean},
                  {"anchor_log_rate_sd", t.anchor_log_rate_sd},
                  {"mu0", t.mu0},
                  {"mu1", t.mu1},
                  {"q0", t.q0},
                  {"q1", t.q1},
                  {"phi", t.phi},
                  {"eta", t.eta}};
    json trials = json::array();
    for (const auto& d : spec.trials) {
        json jt = {{"trial_id", d.trial_id},
                   {"historical", d.historical},
                   {"n_control", d.n_control},
                   {"tau_control", d.tau_control}};
        if (d.indication) jt["indication"] = *d.indication;
        if (!d.historical) {
            jt["n_treatment"] = d.n_treatment;
            jt["tau_treatment"] = d.tau_treatment;
        }
        trials.push_back(jt);
    }
    j["trials"] = trials;
    json analyses = json::array();
    for (const auto& a : spec.analyses) {
        json ja = {{"label", a.label}, {"model", model_spec_to_json(a.model)}, {"include_historical", a.include_historical}};
        if (a.map) {
            ja["map"] = {{"mode", std::string(to_string(a.map->mode))},
                         {"robust_weight", a.map->robust_weight},
                         {"max_components", a.map->max_components}};
        }
        analyses.push_back(ja);
    }
    j["analyses"] = analyses;
    j["sampler"] = {{"chains", spec.sampler.chains},
                    {"warmup", spec.sampler.warmup},
                    {"samples", spec.sampler.samples},
                    {"steps_per_iteration", spec.sampler.steps_per_iteration}};
    return j;
}

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
    ScenarioSpec s;
    try {
        s.name = j.at("name").get<std::string>();
        s.description = j.value("description", "");
        s.time_unit = j.value("time_unit", "");
        s.replications = j.at("replications").get<int>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.level = j.value("level", 0.95);
        s.threads = j.value("threads", 0);
        const auto& t = j.at("truth");
        const auto anchor = t.value("anchor", std::string("control"));
        if (anchor != "control" && anchor != "treatment") throw ConfigError("scenario: unknown anchor '" + anchor + "'");
        s.truth.anchor = anchor == "control" ? Anchor::Control : Anchor::Treatment;
        s.truth.anchor_log_rate_mean = t.at("anchor_log_rate_mean").get<double>();
        s.truth.anchor_log_rate_sd = t.value("anchor_log_rate_sd", 0.0);
        s.truth.mu0 = t.at("mu0").get<double>();
        s.truth.mu1 = t.at("mu1").get<double>();
        s.truth.q0 = t.at("q0").get<double>();
        s.truth.q1 = t.at("q1").get<double>();
        s.truth.phi = t.at("phi").get<double>();
        s.truth.eta = t.value("eta", 0.0);
        for (const auto& jt : j.at("trials")) {
            TrialDesign d;
            d.trial_id = jt.at("trial_id").get<std::string>();
            if (jt.contains("indication")) d.indication = jt["indication"].get<std::string>();
            d.historical = jt.value("historical", false);
            d.n_control = jt.at("n_control").get<Count>();
            d.tau_control = jt.at("tau_control").get<double>();
            if (!d.historical) {
                d.n_treatment = jt.at("n_treatment").get<Count>();
                d.tau_treatment = jt.at("tau_treatment").get<double>();
            } else {
                d.tau_treatment = d.tau_control;
            }
            s.trials.push_back(std::move(d));
        }
        if (j.contains("sampler")) {
            const auto& js = j["sampler"];
            s.sampler.chains = js.value("chains", s.sampler.chains);
            s.sampler.warmup = js.value("warmup", s.sampler.warmup);
            s.sampler.samples = js.value("samples", s.sampler.samples);
            s.sampler.steps_per_iteration = js.value("steps_per_iteration", 0);
        }
        for (const auto& ja : j.at("analyses")) {
            AnalysisSpec a;
            a.label = ja.at("label").get<std::string>();
            a.model = model_spec_from_json(ja.at("model"));
            a.include_historical = ja.value("include_historical", false);
            if (ja.contains("map")) {
                MapSettings m;
                const auto mode = ja["map"].value("mode", std::string("non_stratified"));
                if (mode != "non_stratified" && mode != "stratified") throw ConfigError("scenario: unknown MAP mode");
                m.mode = mode == "stratified" ? MapMode::Stratified : MapMode::NonStratified;
                m.robust_weight = ja["map"].value("robust_weight", 0.5);
                m.max_components = ja["map"].value("max_components", std::size_t{4});
                a.map = m;
            }
            s.analyses.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
    s.check();
    return s;
}

ScenarioSpec load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scenario file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scenario file '" + path + "': " + e.what());
    }
    return scenario_from_json(j);
}

nlohmann::json result_to_json(const ScenarioResult& result) {
    using nlohmann::json;
    json analyses = json::array();
    for (const auto& a : result.analyses) {
        analyses.push_back({{"label", a.label},
                            {"replications", a.replications},
                            {"n_failed", a.n_failed},
                            {"n_nonconverged", a.n_nonconverged},
                            {"coverage", a.coverage},
                            {"coverage_se", a.coverage_se},
                            {"rejection_rate", a.rejection_rate},
                            {"rejection_se", a.rejection_se},
                            {"mean_width", a.mean_width},
                            {"width_se", a.width_se},
                            {"failures", a.failures}});
    }
    return {{"scenario", result.scenario},
            {"true_phi", result.true_phi},
            {"true_eta", result.true_eta},
            {"replications", result.replications},
            {"analyses", analyses}};
}

std::string results_csv(const std::vector<ScenarioResult>& results) {
    std::string out = "scenario,model,metric,value,mc_se\n";
    for (const auto& r : results) {
        for (const auto& a : r.analyses) {
            out += r.scenario + "," + a.label + ",coverage," + fmt(a.coverage) + "," + fmt(a.coverage_se) + "\n";
            out += r.scenario + "," + a.label + ",rejection_rate," + fmt(a.rejection_rate) + "," + fmt(a.rejection_se) + "\n";
            out += r.scenario + "," + a.label + ",mean_width," + fmt(a.mean_width) + "," + fmt(a.width_se) + "\n";
            out += r.scenario + "," + a.label + ",failed," + std::to_string(a.n_failed) + ",\n";
            out += r.scenario + "," + a.label + ",nonconverged," + std::to_string(a.n_nonconverged) + ",\n";
        }
    }
    return out;
}

}  // namespace aemeta
