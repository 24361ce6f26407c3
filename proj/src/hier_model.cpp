#include "aemeta/hier_model.hpp"

#include "aemeta/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace aemeta {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sigmoid(double u) { return u < 0.0 ? u - std::log1p(std::exp(u)) : -std::log1p(std::exp(-u)); }

bool is_scale_name(std::string_view n) { return n == "eta" || n.starts_with("sigma"); }
bool is_q_name(std::string_view n) { return n == "q0" || n == "q1"; }
bool is_hyper_name(std::string_view n) { return n.starts_with("nu") || n.starts_with("sigma"); }

double forward(Transform t, double u, double* log_jac) {
    switch (t) {
        case Transform::Log:
            if (log_jac) *log_jac += u;
            return std::exp(u);
        case Transform::Logit: {
            const double ls = log_sigmoid(u);
            if (log_jac) *log_jac += ls + log_sigmoid(-u);
            return std::exp(ls);
        }
        case Transform::Identity:
            break;
    }
    return u;
}

double inverse(Transform t, double x, const std::string& name) {
    if (!std::isfinite(x)) throw DomainError("to_unconstrained: " + name + " is not finite");
    switch (t) {
        case Transform::Log:
            if (!(x > 0.0)) throw DomainError("to_unconstrained: " + name + " must be positive");
            return std::log(x);
        case Transform::Logit:
            if (!(x > 0.0 && x < 1.0)) throw DomainError("to_unconstrained: " + name + " must lie in (0,1)");
            return std::log(x) - std::log1p(-x);
        case Transform::Identity:
            break;
    }
    return x;
}

void check_support(std::string_view name, const PriorSpec& p) {
    const std::string n(name);
    if (const auto* pm = std::get_if<PointMassPrior>(&p)) {
        if (is_scale_name(name) && pm->value < 0.0) throw ConfigError("prior for " + n + ": point mass must be >= 0");
        if (is_q_name(name) && (pm->value < 0.0 || pm->value > 1.0)) {
            throw ConfigError("prior for " + n + ": point mass must lie in [0,1]");
        }
        return;
    }
    Support want = Support::Real;
    if (is_scale_name(name)) want = Support::Positive;
    if (is_q_name(name)) want = Support::UnitInterval;
    if (support(p) != want) throw ConfigError("prior for " + n + ": " + describe(p) + " has the wrong support");
}

const std::set<std::string, std::less<>> kStratifiedBlocks = {"log_lambda0", "log_lambda1", "log_mu0", "log_mu1"};

template <class E>
E enum_from(const nlohmann::json& j, const char* key, std::initializer_list<std::pair<const char*, E>> options, E dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_string()) throw ConfigError(std::string("model config: '") + key + "' must be a string");
    const auto s = j[key].get<std::string>();
    for (const auto& [name, value] : options)
        if (s == name) return value;
    throw ConfigError(std::string("model config: unknown ") + key + " '" + s + "'");
}

}  // namespace

std::string_view to_string(EffectStructure e) {
    return e == EffectStructure::CommonEffect ? "common_effect" : "random_effects";
}
std::string_view to_string(Anchor a) { return a == Anchor::Control ? "control" : "treatment"; }
std::string_view to_string(Borrowing b) {
    switch (b) {
        case Borrowing::None: return "none";
        case Borrowing::NonStratified: return "non_stratified";
        case Borrowing::Stratified: return "stratified";
    }
    return "none";
}

std::string_view to_string(Parameterization p) {
    return p == Parameterization::Centered ? "centered" : "non_centered";
}

void check_model_spec(const ModelSpec& spec) {
    for (const auto& [name, prior] : spec.priors) {
        if (std::find(std::begin(kGlobalParameters), std::end(kGlobalParameters), name) == std::end(kGlobalParameters)) {
            throw ConfigError("unknown prior name '" + name + "'");
        }
        check_prior(prior);
        check_support(name, prior);
        if (name == "eta" && spec.effect == EffectStructure::CommonEffect) {
            throw ConfigError("the common-effect model has no eta; remove its prior");
        }
        if (spec.borrowing == Borrowing::Stratified && is_hyper_name(name)) {
            throw ConfigError("the stratified model has no hyperparameter '" + name + "'");
        }
    }
    switch (spec.borrowing) {
        case Borrowing::None:
            if (!spec.map_priors.empty()) throw ConfigError("MAP priors given but borrowing is 'none'");
            break;
        case Borrowing::NonStratified: {
            if (spec.map_priors.empty()) throw ConfigError("non-stratified borrowing needs a MAP prior");
            if (spec.anchor != Anchor::Control) {
                throw ConfigError("MAP priors from historical controls need a control-anchored model");
            }
            std::set<std::string> seen;
            for (const auto& m : spec.map_priors) {
                m.check();
                for (std::size_t d = 0; d < m.dimension(); ++d) {
                    const auto& p = m.parameters[d];
                    if (!is_hyper_name(p) ||
                        std::find(std::begin(kGlobalParameters), std::end(kGlobalParameters), p) ==
                            std::end(kGlobalParameters)) {
                        throw ConfigError("non-stratified MAP block contains '" + p + "', which is not a hyperparameter");
                    }
                    if (!seen.insert(p).second) throw ConfigError("parameter '" + p + "' appears in two MAP blocks");
                    if (p.starts_with("sigma") && m.scales[d] != BlockScale::Log) {
                        throw ConfigError("MAP block coordinate '" + p + "' must use the log scale");
                    }
                    if (auto it = spec.priors.find(p); it != spec.priors.end() && is_point_mass(it->second)) {
                        throw ConfigError("parameter '" + p + "' is fixed and cannot carry a MAP prior");
                    }
                }
            }
            break;
        }
        case Borrowing::Stratified: {
            std::set<std::string> seen;
            for (const auto& m : spec.map_priors) {
                m.check();
                if (m.dimension() != 1 || !kStratifiedBlocks.contains(m.parameters[0])) {
                    throw ConfigError("stratified MAP priors must be one-dimensional blocks over log_lambda0, log_mu0 or log_mu1");
                }
                if (m.parameters[0] == "log_lambda1") {
                    throw ConfigError("MAP priors describe control arms; log_lambda1 is not a valid block");
                }
                if (m.scales[0] != BlockScale::Identity) throw ConfigError("stratified MAP blocks use the identity scale");
                if (!seen.insert(m.parameters[0]).second) {
                    throw ConfigError("parameter '" + m.parameters[0] + "' appears in two MAP blocks");
                }
            }
            if (!spec.map_priors.empty() && spec.anchor != Anchor::Control) {
                throw ConfigError("MAP priors from historical controls need a control-anchored model");
            }
            break;
        }
    }
}

PriorSpec effective_prior(const ModelSpec& spec, std::string_view name, std::size_t main_trials) {
    if (auto it = spec.priors.find(std::string(name)); it != spec.priors.end()) return it->second;
    if (name == "phi") return CauchyPrior{0.0, 0.37};
    if (name == "eta") return HalfNormalPrior{main_trials < 10 ? 0.5 : 100.0};
    if (is_q_name(name)) return BetaPrior{0.5, 0.5};
    if (name.starts_with("sigma")) return HalfNormalPrior{100.0};
    if (name.starts_with("nu")) return NormalPrior{0.0, 100.0};
    throw ConfigError("no prior is defined for '" + std::string(name) + "'");
}

void apply_rosiglitazone_preset(ModelSpec& spec) {
    const double l10 = std::log(10.0);
    spec.priors["nu1"] = NormalPrior{-4.27, l10};
    spec.priors["sigma1"] = HalfNormalPrior{l10};
    spec.priors["nu2"] = NormalPrior{std::log(0.22), l10};
    spec.priors["sigma2"] = HalfNormalPrior{l10};
    spec.priors["nu3"] = NormalPrior{std::log(0.22), l10};
    spec.priors["sigma3"] = HalfNormalPrior{l10};
}

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["effect_structure"] = std::string(to_string(spec.effect));
    j["anchor"] = std::string(to_string(spec.anchor));
    j["borrowing"] = std::string(to_string(spec.borrowing));
    j["parameterization"] = std::string(to_string(spec.parameterization));
    nlohmann::json priors = nlohmann::json::object();
    for (const auto& [name, p] : spec.priors) priors[name] = prior_to_json(p);
    j["priors"] = priors;
    if (!spec.map_priors.empty()) {
        nlohmann::json maps = nlohmann::json::array();
        for (const auto& m : spec.map_priors) maps.push_back(mixture_to_json(m));
        j["map_priors"] = maps;
    }
    return j;
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config: expected a JSON object");
    static const std::set<std::string> known = {"schema_version", "effect_structure", "anchor", "borrowing",
                                                "parameterization", "preset", "priors", "map_priors"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ConfigError("model config: unknown key '" + key + "'");
    }
    if (j.contains("schema_version") && j["schema_version"] != 1) {
        throw ConfigError("model config: unsupported schema_version");
    }
    ModelSpec spec;
    spec.effect = enum_from<EffectStructure>(
        j, "effect_structure",
        {{"common_effect", EffectStructure::CommonEffect}, {"random_effects", EffectStructure::RandomEffects}},
        EffectStructure::CommonEffect);
    spec.anchor = enum_from<Anchor>(j, "anchor", {{"control", Anchor::Control}, {"treatment", Anchor::Treatment}},
                                    Anchor::Control);
    spec.borrowing = enum_from<Borrowing>(
        j, "borrowing",
        {{"none", Borrowing::None}, {"non_stratified", Borrowing::NonStratified}, {"stratified", Borrowing::Stratified}},
        Borrowing::None);
    spec.parameterization = enum_from<Parameterization>(
        j, "parameterization",
        {{"centered", Parameterization::Centered}, {"non_centered", Parameterization::NonCentered}},
        Parameterization::NonCentered);
    if (j.contains("preset")) {
        if (j["preset"] != "rosiglitazone") throw ConfigError("model config: unknown preset");
        apply_rosiglitazone_preset(spec);
    }
    if (j.contains("priors")) {
        if (!j["priors"].is_object()) throw ConfigError("model config: 'priors' must be an object");
        for (const auto& [name, p] : j["priors"].items()) {
            try {
                spec.priors[name] = prior_from_json(p);
            } catch (const ConfigError& e) {
                throw ConfigError("model config: priors." + name + ": " + e.what());
            }
        }
    }
    if (j.contains("map_priors")) {
        for (const auto& m : j["map_priors"]) spec.map_priors.push_back(mixture_from_json(m));
    }
    check_model_spec(spec);
    return spec;
}

ModelSpec load_model_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("model config '" + path + "': " + e.what());
    }
    return model_spec_from_json(j);
}

std::string describe(const ModelSpec& spec) {
    std::string s = spec.effect == EffectStructure::CommonEffect ? "CE" : "RE";
    s += spec.anchor == Anchor::Control ? ", control-anchored" : ", treatment-anchored";
    switch (spec.borrowing) {
        case Borrowing::None: s += ", no borrowing"; break;
        case Borrowing::NonStratified: s += ", non-stratified MAP"; break;
        case Borrowing::Stratified: s += spec.map_priors.empty() ? ", stratified" : ", stratified MAP"; break;
    }
    return s;
}

// ---------------------------------------------------------------------------

PosteriorModel::PosteriorModel(ModelSpec spec, Dataset data) : PosteriorModel(std::move(spec), std::move(data), false) {}

PosteriorModel PosteriorModel::historical_only(ModelSpec spec, Dataset data) {
    spec.effect = EffectStructure::CommonEffect;
    spec.borrowing = Borrowing::None;
    spec.map_priors.clear();
    spec.priors.erase("eta");
    return PosteriorModel(std::move(spec), std::move(data), true);
}

int PosteriorModel::add(Quantity q) {
    const int idx = static_cast<int>(q_.size());
    if (q.kind == Kind::Sampled) {
        q.coord = static_cast<int>(coord_names_.size());
        coord_names_.push_back(q.name);
        coord_quantity_.push_back(idx);
    }
    if (!index_.emplace(q.name, idx).second) throw ConfigError("duplicate model quantity '" + q.name + "'");
    quantity_names_.push_back(q.name);
    q_.push_back(std::move(q));
    return idx;
}

int PosteriorModel::add_global(std::string_view name, Transform tr, std::size_t main_trials) {
    Quantity q;
    q.name = std::string(name);
    q.transform = tr;
    for (std::size_t b = 0; b < spec_.map_priors.size() && spec_.borrowing == Borrowing::NonStratified; ++b) {
        const auto& params = spec_.map_priors[b].parameters;
        if (std::find(params.begin(), params.end(), q.name) != params.end()) {
            q.block = static_cast<int>(b);
            return add(std::move(q));
        }
    }
    const auto prior = effective_prior(spec_, name, main_trials);
    if (const auto* pm = std::get_if<PointMassPrior>(&prior)) {
        q.kind = Kind::Fixed;
        q.value = pm->value;
    } else {
        q.prior = prior;
    }
    return add(std::move(q));
}

int PosteriorModel::add_trial_level(const std::string& name, int loc, int scale, std::string_view strat_block) {
    Quantity q;
    q.name = name;
    if (spec_.borrowing == Borrowing::Stratified) {
        for (std::size_t b = 0; b < spec_.map_priors.size(); ++b) {
            if (spec_.map_priors[b].parameters[0] == strat_block) q.block = static_cast<int>(b);
        }
        if (q.block < 0) q.prior = NormalPrior{0.0, 100.0};
        return add(std::move(q));
    }
    if (q_[scale].kind == Kind::Fixed && q_[scale].value == 0.0) {
        q.kind = Kind::Tied;
        q.tied_to = loc;
    } else {
        q.loc = loc;
        q.scale = scale;
        q.non_centered = spec_.parameterization == Parameterization::NonCentered;
    }
    return add(std::move(q));
}

PosteriorModel::PosteriorModel(ModelSpec spec, Dataset data, bool historical_only)
    : spec_(std::move(spec)), data_(std::move(data)), historical_only_(historical_only) {
    check_model_spec(spec_);
    for (const auto& v : validate(data_)) {
        if (historical_only_ && v.rule == "no non-historical trial") continue;
        throw ConfigError("invalid dataset: " + v.describe());
    }
    const std::size_t n_main = data_.main_trial_count();
    const std::size_t n_hist = data_.historical_trial_count();
    if (historical_only_) {
        if (n_hist == 0) throw ConfigError("the dataset has no historical trials");
    } else if (n_hist > 0) {
        if (spec_.anchor == Anchor::Treatment) {
            throw ConfigError("historical control trials cannot be combined with a treatment-anchored model");
        }
        if (spec_.borrowing != Borrowing::None) {
            throw ConfigError("historical trials must be removed from the data when borrowing through a MAP prior");
        }
    }

    const bool re = spec_.effect == EffectStructure::RandomEffects;
    if (!historical_only_) {
        g_phi_ = add_global("phi", Transform::Identity, n_main);
        if (re) g_eta_ = add_global("eta", Transform::Log, n_main);
    }
    g_q0_ = add_global("q0", Transform::Logit, n_main);
    if (!historical_only_) g_q1_ = add_global("q1", Transform::Logit, n_main);
    if (spec_.borrowing != Borrowing::Stratified) {
        const int levels = historical_only_ ? 2 : 3;
        for (int k = 0; k < levels; ++k) {
            g_nu_[k] = add_global("nu" + std::to_string(k + 1), Transform::Identity, n_main);
            g_sigma_[k] = add_global("sigma" + std::to_string(k + 1), Transform::Log, n_main);
        }
    }

    struct TrialIdx {
        int la = -1, mu0 = -1, mu1 = -1, phi = -1;
    };
    std::map<std::string, TrialIdx> idx;
    const std::string anchor_name = spec_.anchor == Anchor::Control ? "log_lambda0" : "log_lambda1";
    if (!historical_only_) {
        for (const auto& t : data_.trials) {
            if (t.historical) continue;
            TrialIdx ti;
            const auto sfx = "[" + t.trial_id + "]";
            ti.la = add_trial_level(anchor_name + sfx, g_nu_[0], g_sigma_[0], anchor_name);
            ti.mu0 = add_trial_level("log_mu0" + sfx, g_nu_[1], g_sigma_[1], "log_mu0");
            ti.mu1 = add_trial_level("log_mu1" + sfx, g_nu_[2], g_sigma_[2], "log_mu1");
            if (re) {
                Quantity q;
                q.name = "phi" + sfx;
                if (q_[g_eta_].kind == Kind::Fixed && q_[g_eta_].value == 0.0) {
                    q.kind = Kind::Tied;
                    q.tied_to = g_phi_;
                } else {
                    q.loc = g_phi_;
                    q.scale = g_eta_;
                    q.non_centered = spec_.parameterization == Parameterization::NonCentered;
                }
                ti.phi = add(std::move(q));
            } else {
                ti.phi = g_phi_;
            }
            trial_effects_.emplace_back(t.trial_id, q_[ti.phi].name);
            idx[t.trial_id] = ti;
        }
    }
    for (const auto& t : data_.trials) {
        if (!t.historical) continue;
        TrialIdx ti;
        const auto sfx = "[" + t.trial_id + "]";
        ti.la = add_trial_level("log_lambda0" + sfx, g_nu_[0], g_sigma_[0], "log_lambda0");
        ti.mu0 = add_trial_level("log_mu0" + sfx, g_nu_[1], g_sigma_[1], "log_mu0");
        idx[t.trial_id] = ti;
    }

    for (std::size_t b = 0; b < spec_.map_priors.size(); ++b) {
        std::vector<int> members;
        if (spec_.borrowing == Borrowing::NonStratified) {
            for (const auto& p : spec_.map_priors[b].parameters) members.push_back(index_.at(p));
            blocks_.push_back({b, members});
        } else {
            for (std::size_t i = 0; i < q_.size(); ++i) {
                if (q_[i].block == static_cast<int>(b)) blocks_.push_back({b, {static_cast<int>(i)}});
            }
        }
    }

    for (const auto& t : data_.trials) {
        if (historical_only_ != t.historical) continue;
        const auto& ti = idx.at(t.trial_id);
        for (std::size_t a = 0; a < t.arms.size(); ++a) {
            const auto& arm = t.arms[a];
            const bool control = arm.role == ArmRole::Control;
            const bool anchored = (spec_.anchor == Anchor::Control) == control;
            ModelArm ma{ArmKernel(arm), arm.tau, ti.la, -1, 0.0, control ? ti.mu0 : ti.mu1,
                        control ? g_q0_ : g_q1_, "trial " + t.trial_id + " " + std::string(to_string(arm.role)) + " arm"};
            if (!anchored) {
                ma.phi = ti.phi;
                ma.sign = spec_.anchor == Anchor::Control ? 1.0 : -1.0;
            }
            arms_.push_back(std::move(ma));
        }
    }
}

std::optional<std::size_t> PosteriorModel::quantity_index(std::string_view name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return static_cast<std::size_t>(it->second);
}

void PosteriorModel::fill_values(std::span<const double> v, std::vector<double>& vals, double* log_jac) const {
    vals.resize(q_.size());
    for (std::size_t i = 0; i < q_.size(); ++i) {
        const auto& q = q_[i];
        switch (q.kind) {
            case Kind::Sampled:
                if (q.non_centered) {
                    const double sd = vals[q.scale];
                    vals[i] = vals[q.loc] + sd * v[q.coord];
                    if (log_jac) *log_jac += std::log(sd);
                } else {
                    vals[i] = forward(q.transform, v[q.coord], log_jac);
                }
                break;
            case Kind::Fixed: vals[i] = q.value; break;
            case Kind::Tied: vals[i] = vals[q.tied_to]; break;
        }
    }
}

std::vector<double> PosteriorModel::to_unconstrained(std::span<const double> quantities) const {
    if (quantities.size() != q_.size()) throw DomainError("to_unconstrained: wrong number of quantities");
    std::vector<double> v(dimension());
    for (std::size_t i = 0; i < q_.size(); ++i) {
        const auto& q = q_[i];
        if (q.kind != Kind::Sampled) continue;
        if (q.non_centered) {
            if (!std::isfinite(quantities[i])) throw DomainError("to_unconstrained: " + q.name + " is not finite");
            v[q.coord] = (quantities[i] - quantities[q.loc]) / quantities[q.scale];
        } else {
            v[q.coord] = inverse(q.transform, quantities[i], q.name);
        }
    }
    return v;
}

PosteriorModel::Decoded PosteriorModel::from_unconstrained(std::span<const double> v) const {
    if (v.size() != dimension()) throw DomainError("from_unconstrained: dimension mismatch");
    for (double x : v) {
        if (!std::isfinite(x)) throw DomainError("from_unconstrained: non-finite coordinate");
    }
    Decoded d;
    fill_values(v, d.quantities, &d.log_jacobian);
    return d;
}

double PosteriorModel::evaluate(std::span<const double> v, bool prior, bool likelihood, std::string* failing) const {
    if (v.size() != dimension()) throw DomainError("log_posterior: dimension mismatch");
    thread_local std::vector<double> vals;
    thread_local std::vector<double> block_x;
    double log_jac = 0.0;
    fill_values(v, vals, prior ? &log_jac : nullptr);

    double total = 0.0;
    auto bad = [&](double term) { return !(term > kNegInf && term < std::numeric_limits<double>::infinity()); };
    if (prior) {
        total += log_jac;
        if (failing && bad(log_jac) && failing->empty()) *failing = "Jacobian";
        for (const auto& q : q_) {
            if (q.kind != Kind::Sampled) continue;
            const double x = vals[&q - q_.data()];
            double term = 0.0;
            if (q.prior) {
                term = log_prior_density(*q.prior, x);
            } else if (q.loc >= 0) {
                term = normal_log_density(x, vals[q.loc], vals[q.scale]);
            } else {
                continue;
            }
            total += term;
            if (bad(term)) {
                if (!failing) return kNegInf;
                if (failing->empty()) *failing = "prior on " + q.name;
            }
        }
        for (const auto& b : blocks_) {
            block_x.clear();
            for (int m : b.members) block_x.push_back(vals[m]);
            const double term = spec_.map_priors[b.prior].log_density(block_x);
            total += term;
            if (bad(term)) {
                if (!failing) return kNegInf;
                if (failing->empty()) *failing = "MAP prior on " + q_[b.members.front()].name;
            }
        }
    }
    if (likelihood) {
        for (const auto& a : arms_) {
            double log_lambda = vals[a.log_lambda];
            if (a.phi >= 0) log_lambda += a.sign * vals[a.phi];
            const double lambda = std::exp(log_lambda);
            const double mu = std::exp(vals[a.log_mu]);
            const double qv = vals[a.q];
            double term = kNegInf;
            if (std::isfinite(lambda) && std::isfinite(mu) && qv >= 0.0 && qv <= 1.0) {
                term = a.kernel.log_likelihood(category_log_probs({lambda, mu, qv, a.tau}));
            }
            total += term;
            if (bad(term)) {
                if (!failing) return kNegInf;
                if (failing->empty()) *failing = "likelihood of " + a.label;
            }
        }
    }
    return std::isnan(total) ? kNegInf : total;
}

double PosteriorModel::log_posterior_gradient(std::span<const double> v, std::span<double> grad) const {
    if (v.size() != dimension() || grad.size() != dimension()) {
        throw DomainError("log_posterior_gradient: dimension mismatch");
    }
    thread_local std::vector<double> vals;
    thread_local std::vector<double> gq;
    thread_local std::vector<double> block_x;
    thread_local std::vector<double> block_g;
    double total = 0.0;
    fill_values(v, vals, &total);
    gq.assign(q_.size(), 0.0);

    for (std::size_t i = 0; i < q_.size(); ++i) {
        const auto& q = q_[i];
        if (q.kind != Kind::Sampled) continue;
        const double x = vals[i];
        if (q.prior) {
            total += log_prior_density(*q.prior, x);
            gq[i] += log_prior_gradient(*q.prior, x);
        } else if (q.loc >= 0) {
            const double sd = vals[q.scale];
            const double z = (x - vals[q.loc]) / sd;
            total += normal_log_density(x, vals[q.loc], sd);
            gq[i] -= z / sd;
            gq[q.loc] += z / sd;
            gq[q.scale] += (z * z - 1.0) / sd;
        }
    }
    for (const auto& b : blocks_) {
        block_x.clear();
        for (int m : b.members) block_x.push_back(vals[m]);
        block_g.resize(block_x.size());
        total += spec_.map_priors[b.prior].log_density_gradient(block_x, block_g);
        for (std::size_t k = 0; k < b.members.size(); ++k) gq[b.members[k]] += block_g[k];
    }
    if (!(total > kNegInf)) return kNegInf;

    std::array<double, 5> expected;
    for (const auto& a : arms_) {
        double log_lambda = vals[a.log_lambda];
        if (a.phi >= 0) log_lambda += a.sign * vals[a.phi];
        const double lambda = std::exp(log_lambda);
        const double mu = std::exp(vals[a.log_mu]);
        const double qv = vals[a.q];
        if (!(std::isfinite(lambda) && std::isfinite(mu) && qv >= 0.0 && qv <= 1.0)) return kNegInf;
        const auto g = category_log_prob_gradient({lambda, mu, qv, a.tau});
        const double term = a.kernel.log_likelihood(g.log_probs, expected);
        if (!(term > kNegInf)) return kNegInf;
        total += term;
        double dl = 0.0, dm = 0.0, dq = 0.0;
        for (int k = 0; k < 5; ++k) {
            if (expected[k] == 0.0) continue;
            dl += expected[k] * g.d_log_lambda[k];
            dm += expected[k] * g.d_log_mu[k];
            dq += expected[k] * g.d_q[k];
        }
        gq[a.log_lambda] += dl;
        if (a.phi >= 0) gq[a.phi] += a.sign * dl;
        gq[a.log_mu] += dm;
        gq[a.q] += dq;
    }

    for (std::size_t i = q_.size(); i-- > 0;) {
        const auto& q = q_[i];
        if (q.kind == Kind::Tied) {
            gq[q.tied_to] += gq[i];
        } else if (q.kind == Kind::Sampled && q.non_centered) {
            const double sd = vals[q.scale];
            gq[q.loc] += gq[i];
            gq[q.scale] += gq[i] * v[q.coord] + 1.0 / sd;
            grad[q.coord] = gq[i] * sd;
        } else if (q.kind == Kind::Sampled) {
            const double x = vals[i];
            double g = gq[i];
            switch (q.transform) {
                case Transform::Identity: break;
                case Transform::Log: g = g * x + 1.0; break;
                case Transform::Logit: g = g * x * (1.0 - x) + 1.0 - 2.0 * x; break;
            }
            grad[q.coord] = g;
        }
    }
    if (!std::isfinite(total)) return kNegInf;
    for (double g : grad)
        if (!std::isfinite(g)) return kNegInf;
    return total;
}

double PosteriorModel::log_posterior(std::span<const double> v) const { return evaluate(v, true, true, nullptr); }
double PosteriorModel::log_prior(std::span<const double> v) const { return evaluate(v, true, false, nullptr); }
double PosteriorModel::log_likelihood(std::span<const double> v) const { return evaluate(v, false, true, nullptr); }

std::string PosteriorModel::first_nonfinite_block(std::span<const double> v) const {
    std::string failing;
    evaluate(v, true, true, &failing);
    return failing;
}

std::vector<RateParams> PosteriorModel::arm_rates(std::span<const double> v) const {
    if (v.size() != dimension()) throw DomainError("arm_rates: dimension mismatch");
    std::vector<double> vals;
    fill_values(v, vals, nullptr);
    std::vector<RateParams> out;
    for (const auto& a : arms_) {
        double log_lambda = vals[a.log_lambda];
        if (a.phi >= 0) log_lambda += a.sign * vals[a.phi];
        out.push_back({std::exp(log_lambda), std::exp(vals[a.log_mu]), vals[a.q], a.tau});
    }
    return out;
}

std::vector<double> PosteriorModel::initial_point(Engine& rng, double jitter) const {
    std::vector<double> med(q_.size());
    for (std::size_t i = 0; i < q_.size(); ++i) {
        const auto& q = q_[i];
        switch (q.kind) {
            case Kind::Fixed: med[i] = q.value; break;
            case Kind::Tied: med[i] = med[q.tied_to]; break;
            case Kind::Sampled:
                if (q.prior) {
                    med[i] = prior_median(*q.prior);
                } else if (q.loc >= 0) {
                    med[i] = med[q.loc];
                } else {
                    const auto& m = spec_.map_priors[q.block];
                    const auto pos = std::find(m.parameters.begin(), m.parameters.end(), q.name);
                    const auto d = pos == m.parameters.end() ? 0 : static_cast<std::size_t>(pos - m.parameters.begin());
                    med[i] = m.informative_median()[d];
                }
                break;
        }
    }
    // Vague scale priors have medians far out in the tail; hierarchical
    // scales start at no more than 1.
    for (const auto& q : q_) {
        if (q.scale >= 0 && q_[q.scale].kind == Kind::Sampled) med[q.scale] = std::min(med[q.scale], 1.0);
    }
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> v(dimension());
    for (std::size_t c = 0; c < v.size(); ++c) {
        const auto& q = q_[coord_quantity_[c]];
        const double centre = q.non_centered ? 0.0 : inverse(q.transform, med[coord_quantity_[c]], q.name);
        v[c] = centre + jitter * z(rng);
    }
    return v;
}

std::vector<ScaleGroup> PosteriorModel::scale_groups() const {
    std::vector<ScaleGroup> out;
    for (std::size_t s = 0; s < q_.size(); ++s) {
        if (q_[s].kind != Kind::Sampled || q_[s].transform != Transform::Log) continue;
        ScaleGroup g;
        g.scale = q_[s].coord;
        int loc = -1;
        for (const auto& q : q_) {
            if (q.kind == Kind::Sampled && !q.non_centered && q.scale == static_cast<int>(s)) {
                g.members.push_back(q.coord);
                loc = q.loc;
            }
        }
        if (g.members.empty()) continue;
        if (q_[loc].kind == Kind::Sampled) {
            g.center = q_[loc].coord;
        } else {
            g.center_value = q_[loc].value;
        }
        out.push_back(std::move(g));
    }
    return out;
}

Target PosteriorModel::target() const {
    Target t;
    t.dimension = dimension();
    t.log_density = [this](std::span<const double> v) { return log_posterior(v); };
    t.log_density_gradient = [this](std::span<const double> v, std::span<double> g) {
        return log_posterior_gradient(v, g);
    };
    t.initial_point = [this](Engine& rng) { return initial_point(rng); };
    t.diagnose = [this](std::span<const double> v) { return first_nonfinite_block(v); };
    t.scale_groups = scale_groups();
    t.names = coord_names_;
    t.constrain = [this](std::span<const double> v) {
        std::vector<double> vals;
        fill_values(v, vals, nullptr);
        return vals;
    };
    t.constrained_names = quantity_names_;
    return t;
}

std::vector<std::pair<std::string, std::string>> PosteriorModel::trial_effects() const { return trial_effects_; }

}  // namespace aemeta
