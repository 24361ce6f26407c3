#include "aemeta/report.hpp"

#include "aemeta/errors.hpp"
#include "aemeta/map_prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace aemeta {

namespace {

std::string fmt(double x, int digits = 3) {
    if (!std::isfinite(x)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

nlohmann::json summary_json(const ParameterSummary& s) {
    nlohmann::json j = {{"name", s.name},     {"mean", s.mean},   {"sd", s.sd},
                        {"median", s.median}, {"lower", s.lower}, {"upper", s.upper}};
    j["rhat"] = std::isfinite(s.rhat) ? nlohmann::json(s.rhat) : nlohmann::json(nullptr);
    j["ess_bulk"] = s.ess_bulk ? nlohmann::json(*s.ess_bulk) : nlohmann::json(nullptr);
    if (s.insufficient_draws) j["insufficient_draws"] = true;
    return j;
}

ParameterSummary summary_from_json(const nlohmann::json& j) {
    ParameterSummary s;
    s.name = j.at("name").get<std::string>();
    s.mean = j.at("mean").get<double>();
    s.sd = j.at("sd").get<double>();
    s.median = j.at("median").get<double>();
    s.lower = j.at("lower").get<double>();
    s.upper = j.at("upper").get<double>();
    s.rhat = j.at("rhat").is_null() ? std::nan("") : j["rhat"].get<double>();
    if (!j.at("ess_bulk").is_null()) s.ess_bulk = j["ess_bulk"].get<double>();
    s.insufficient_draws = j.value("insufficient_draws", false);
    return s;
}

Kernel kernel_from_name(const std::string& s) {
    if (s == "auto") return Kernel::Auto;
    if (s == "nuts") return Kernel::Nuts;
    if (s == "random_walk") return Kernel::RandomWalk;
    throw ConfigError("sampler: unknown kernel '" + s + "'");
}

}  // namespace

nlohmann::json sampler_config_to_json(const SamplerConfig& c) {
    nlohmann::json j = {{"chains", c.chains},
                        {"warmup", c.warmup},
                        {"samples", c.samples},
                        {"seed", c.seed},
                        {"kernel", std::string(to_string(c.kernel))},
                        {"steps_per_iteration", c.steps_per_iteration},
                        {"max_treedepth", c.max_treedepth},
                        {"max_init_attempts", c.max_init_attempts}};
    if (c.target_acceptance) j["target_acceptance"] = *c.target_acceptance;
    return j;
}

SamplerConfig sampler_config_from_json(const nlohmann::json& j) {
    SamplerConfig c;
    try {
        c.chains = j.value("chains", c.chains);
        c.warmup = j.value("warmup", c.warmup);
        c.samples = j.value("samples", c.samples);
        c.seed = j.value("seed", c.seed);
        c.kernel = kernel_from_name(j.value("kernel", std::string("auto")));
        c.steps_per_iteration = j.value("steps_per_iteration", 0);
        c.max_treedepth = j.value("max_treedepth", c.max_treedepth);
        c.max_init_attempts = j.value("max_init_attempts", c.max_init_attempts);
        if (j.contains("target_acceptance")) c.target_acceptance = j["target_acceptance"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("sampler config: ") + e.what());
    }
    c.check();
    return c;
}

nlohmann::json request_to_json(const FitRequest& r) {
    return {{"model", model_spec_to_json(r.model)},
            {"sampler", sampler_config_to_json(r.sampler)},
            {"level", r.level},
            {"data_source", r.data_source},
            {"dataset", nlohmann::json::parse(serialize_dataset(r.data, DataFormat::Json))}};
}

FitRequest request_from_json(const nlohmann::json& j) {
    const auto& q = j.contains("request") ? j.at("request") : j;
    FitRequest r;
    try {
        r.model = model_spec_from_json(q.at("model"));
        r.sampler = sampler_config_from_json(q.at("sampler"));
        r.level = q.value("level", 0.95);
        r.data_source = q.value("data_source", "");
        r.data = parse_dataset(q.at("dataset").dump(), DataFormat::Json);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("fit request: ") + e.what());
    }
    return r;
}

AnalysisReport run_fit(const FitRequest& request) {
    if (!(request.level > 0.0 && request.level < 1.0)) throw ConfigError("level must lie in (0,1)");
    const auto problems = validate(request.data);
    if (!problems.empty()) throw ConfigError("dataset is inconsistent: " + problems.front().describe());

    AnalysisReport rep;
    rep.request = request;
    const PosteriorModel model(request.model, request.data);
    rep.model_description = describe(request.model);
    const auto draws = run(model.target(), request.sampler);
    rep.kernel = std::string(to_string(draws.kernel));
    rep.divergences = draws.divergences();
    rep.summary = summarize(draws, request.level);

    const auto* phi = rep.summary.find("phi");
    if (!phi) throw ConfigError("the model has no phi");
    rep.focus.push_back(*phi);

    // HR quantiles are the exponentials of the phi quantiles; the moments
    // and diagnostics come from the exponentiated draws.
    auto hr_chains = draws.by_chain("phi");
    for (auto& c : hr_chains)
        for (auto& v : c) v = std::exp(v);
    auto hr = summarize_chains("HR", hr_chains, request.level);
    hr.median = std::exp(phi->median);
    hr.lower = std::exp(phi->lower);
    hr.upper = std::exp(phi->upper);
    rep.focus.push_back(hr);
    if (const auto* eta = rep.summary.find("eta")) rep.focus.push_back(*eta);

    rep.max_rhat = 0.0;
    bool nan_rhat = false;
    for (const auto& s : rep.focus) {
        if (s.name == "HR") continue;
        if (std::isfinite(s.rhat)) {
            rep.max_rhat = std::max(rep.max_rhat, s.rhat);
        } else {
            nan_rhat = true;
        }
    }
    rep.converged = !nan_rhat && rep.max_rhat <= 1.05;

    // Under a common effect every trial row would repeat the pooled one.
    const bool per_trial = request.model.effect == EffectStructure::RandomEffects;
    for (const auto& [trial, name] : per_trial ? model.trial_effects() : decltype(model.trial_effects()){}) {
        const auto* s = rep.summary.find(name);
        rep.forest.push_back({trial, name, s->median, s->lower, s->upper});
    }
    rep.forest.push_back({"overall", "phi", phi->median, phi->lower, phi->upper});

    const auto main = main_trials_only(request.data).trials.size();
    for (auto name : kGlobalParameters) {
        const std::string n(name);
        if (!model.quantity_index(n)) continue;
        bool in_block = false;
        for (const auto& m : request.model.map_priors)
            if (std::find(m.parameters.begin(), m.parameters.end(), n) != m.parameters.end()) in_block = true;
        if (in_block) continue;
        rep.priors.push_back({n, describe(effective_prior(request.model, n, main)), ""});
    }
    for (const auto& m : request.model.map_priors) {
        std::string params;
        for (const auto& p : m.parameters) params += (params.empty() ? "" : ",") + p;
        std::string text = "MAP mixture, " + std::to_string(m.components.size()) + " component(s), robust weight " +
                           fmt(m.robust_weight, 2);
        rep.priors.push_back({params, text, hash_hex(mixture_hash(m))});
    }
    return rep;
}

nlohmann::json report_to_json(const AnalysisReport& r) {
    using nlohmann::json;
    json j;
    j["schema_version"] = 1;
    j["tool_version"] = kToolVersion;
    j["model"] = r.model_description;
    j["kernel"] = r.kernel;
    j["converged"] = r.converged;
    j["max_rhat"] = r.max_rhat;
    j["divergences"] = r.divergences;
    j["level"] = r.request.level;
    json focus = json::array();
    for (const auto& s : r.focus) focus.push_back(summary_json(s));
    j["focus"] = focus;
    json all = json::array();
    for (const auto& s : r.summary.parameters) all.push_back(summary_json(s));
    j["parameters"] = all;
    json forest = json::array();
    for (const auto& f : r.forest) {
        forest.push_back({{"trial_id", f.trial_id},
                          {"parameter", f.parameter},
                          {"median", f.median},
                          {"lower", f.lower},
                          {"upper", f.upper}});
    }
    j["forest"] = forest;
    json priors = json::array();
    for (const auto& p : r.priors) {
        json jp = {{"parameter", p.parameter}, {"prior", p.prior}};
        if (!p.hash.empty()) jp["hash"] = p.hash;
        priors.push_back(jp);
    }
    j["priors"] = priors;
    j["request"] = request_to_json(r.request);
    return j;
}

AnalysisReport report_from_json(const nlohmann::json& j) {
    AnalysisReport r;
    try {
        r.request = request_from_json(j);
        r.model_description = j.at("model").get<std::string>();
        r.kernel = j.value("kernel", "");
        r.converged = j.at("converged").get<bool>();
        r.max_rhat = j.at("max_rhat").get<double>();
        r.divergences = j.value("divergences", 0);
        r.summary.level = r.request.level;
        for (const auto& s : j.at("focus")) r.focus.push_back(summary_from_json(s));
        for (const auto& s : j.at("parameters")) r.summary.parameters.push_back(summary_from_json(s));
        for (const auto& f : j.at("forest")) {
            r.forest.push_back({f.at("trial_id").get<std::string>(), f.at("parameter").get<std::string>(),
                                f.at("median").get<double>(), f.at("lower").get<double>(),
                                f.at("upper").get<double>()});
        }
        for (const auto& p : j.at("priors")) {
            r.priors.push_back({p.at("parameter").get<std::string>(), p.at("prior").get<std::string>(),
                                p.value("hash", "")});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("report: ") + e.what());
    }
    return r;
}

std::string report_text(const AnalysisReport& r) {
    std::string out;
    const int pct = static_cast<int>(std::lround(r.request.level * 100));
    if (!r.converged) {
        out += "*** NOT CONVERGED: max split R-hat of phi/eta = " + fmt(r.max_rhat) +
               " (limit 1.05); do not use these estimates ***\n\n";
    }
    out += "Model: " + r.model_description + "\n";
    out += "Data: " + (r.request.data_source.empty() ? std::string("(inline)") : r.request.data_source) + ", " +
           std::to_string(r.request.data.main_trial_count()) + " main trial(s), " +
           std::to_string(r.request.data.historical_trial_count()) + " historical\n";
    const auto& s = r.request.sampler;
    out += "Sampler: " + r.kernel + ", " + std::to_string(s.chains) + " chains x (" + std::to_string(s.warmup) + " + " +
           std::to_string(s.samples) + "), seed " + std::to_string(s.seed) + ", divergences " +
           std::to_string(r.divergences) + "\n\n";

    out += "Estimate      median   " + std::to_string(pct) + "% CI\n";
    for (const auto& f : r.focus) {
        char line[160];
        std::snprintf(line, sizeof line, "%-12s %7s   [%s, %s]\n", f.name.c_str(), fmt(f.median).c_str(),
                      fmt(f.lower).c_str(), fmt(f.upper).c_str());
        out += line;
    }

    out += "\nPer-trial log-HR\n";
    for (const auto& f : r.forest) {
        char line[200];
        std::snprintf(line, sizeof line, "%-12s %7s   [%s, %s]   HR %s [%s, %s]\n", f.trial_id.c_str(),
                      fmt(f.median).c_str(), fmt(f.lower).c_str(), fmt(f.upper).c_str(),
                      fmt(std::exp(f.median)).c_str(), fmt(std::exp(f.lower)).c_str(),
                      fmt(std::exp(f.upper)).c_str());
        out += line;
    }

    out += "\nPriors\n";
    for (const auto& p : r.priors) {
        out += "  " + p.parameter + " ~ " + p.prior;
        if (!p.hash.empty()) out += " [hash " + p.hash + "]";
        out += "\n";
    }

    out += "\nDiagnostics        R-hat   bulk ESS\n";
    for (const auto& p : r.summary.parameters) {
        char line[160];
        std::snprintf(line, sizeof line, "  %-16s %6s   %8s\n", p.name.c_str(), fmt(p.rhat).c_str(),
                      p.ess_bulk ? fmt(*p.ess_bulk, 0).c_str() : "NA");
        out += line;
    }
    return out;
}

std::string forest_csv(const AnalysisReport& r) {
    std::string out = "trial_id,parameter,median,lower,upper,hr_median,hr_lower,hr_upper\n";
    char buf[256];
    for (const auto& f : r.forest) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", f.trial_id.c_str(),
                      f.parameter.c_str(), f.median, f.lower, f.upper, std::exp(f.median), std::exp(f.lower),
                      std::exp(f.upper));
        out += buf;
    }
    return out;
}

}  // namespace aemeta
