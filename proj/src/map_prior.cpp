#include "aemeta/map_prior.hpp"

#include "aemeta/diagnostics.hpp"
#include "aemeta/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace aemeta {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr std::size_t kMaxComponents = 4;

struct EmResult {
    std::vector<MixtureComponent> components;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    bool converged = false;
};

double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// One EM run from a k-means++ start.
EmResult run_em(const std::vector<std::vector<double>>& x, std::size_t k, const std::vector<double>& floor_var,
                const MixtureFitOptions& opt, Engine& rng) {
    const std::size_t n = x.size();
    const std::size_t D = x.front().size();

    // k-means++ centres on the standardized scale.
    std::vector<std::size_t> centres;
    centres.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    auto dist2 = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
            const double z = x[i][d] - x[j][d];
            s += z * z / (floor_var[d] * 1e6);
        }
        return s;
    };
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (centres.size() < k) {
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist2(i, centres.back()));
        std::discrete_distribution<std::size_t> pick(nearest.begin(), nearest.end());
        centres.push_back(pick(rng));
    }

    std::vector<std::vector<double>> resp(n, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double dd = dist2(i, centres[c]);
            if (dd < bd) {
                bd = dd;
                best = c;
            }
        }
        resp[i][best] = 1.0;
    }

    EmResult out;
    out.components.resize(k);
    std::vector<double> lp(k), log_norm(k), inv_sd(k * D);
    double prev = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        // M step.
        for (std::size_t c = 0; c < k; ++c) {
            double nk = 0.0;
            for (std::size_t i = 0; i < n; ++i) nk += resp[i][c];
            if (nk < static_cast<double>(D) + 1.0) return out;  // collapsed component
            auto& comp = out.components[c];
            comp.weight = nk / static_cast<double>(n);
            comp.mean.assign(D, 0.0);
            comp.sd.assign(D, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t d = 0; d < D; ++d) comp.mean[d] += resp[i][c] * x[i][d];
            for (auto& m : comp.mean) m /= nk;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t d = 0; d < D; ++d) {
                    const double z = x[i][d] - comp.mean[d];
                    comp.sd[d] += resp[i][c] * z * z;
                }
            for (std::size_t d = 0; d < D; ++d) comp.sd[d] = std::sqrt(std::max(comp.sd[d] / nk, floor_var[d]));
        }
        // E step.
        for (std::size_t c = 0; c < k; ++c) {
            const auto& comp = out.components[c];
            log_norm[c] = std::log(comp.weight);
            for (std::size_t d = 0; d < D; ++d) {
                log_norm[c] -= kLogSqrt2Pi + std::log(comp.sd[d]);
                inv_sd[c * D + d] = 1.0 / comp.sd[d];
            }
        }
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < k; ++c) {
                const auto& comp = out.components[c];
                double v = log_norm[c];
                for (std::size_t d = 0; d < D; ++d) {
                    const double z = (x[i][d] - comp.mean[d]) * inv_sd[c * D + d];
                    v -= 0.5 * z * z;
                }
                lp[c] = v;
            }
            const double norm = log_sum_exp(lp);
            ll += norm;
            for (std::size_t c = 0; c < k; ++c) resp[i][c] = std::exp(lp[c] - norm);
        }
        if (!std::isfinite(ll)) return out;
        out.log_likelihood = ll;
        if (std::abs(ll - prev) <= opt.tolerance * (1.0 + std::abs(ll))) {
            out.converged = true;
            return out;
        }
        prev = ll;
    }
    return out;
}

std::array<double, 6> hyper_row(const PosteriorDraws& d, std::size_t chain, std::size_t i,
                                const std::array<std::optional<std::size_t>, 4>& idx) {
    std::array<double, 6> row{};
    const auto q = d.constrained_names.size();
    for (std::size_t k = 0; k < 4; ++k) row[k] = d.chains[chain].constrained[i * q + *idx[k]];
    return row;
}

}  // namespace

std::string_view to_string(MapMode m) { return m == MapMode::NonStratified ? "non_stratified" : "stratified"; }

Dataset main_trials_only(const Dataset& data) {
    Dataset out = data;
    std::erase_if(out.trials, [](const TrialRecord& t) { return t.historical; });
    return out;
}

HistoricalFit fit_historical(const Dataset& data, const ModelSpec& spec, const SamplerConfig& sampler) {
    if (spec.anchor != Anchor::Control) throw ConfigError("MAP priors need a control-anchored model");
    const auto h = data.historical_trial_count();
    if (h < 2) {
        throw ConfigError("insufficient historical trials: " + std::to_string(h) +
                          " found, at least 2 are needed to estimate between-trial heterogeneity");
    }
    const auto model = PosteriorModel::historical_only(spec, data);
    HistoricalFit out;
    out.draws = run(model.target(), sampler);

    const std::array<std::optional<std::size_t>, 4> idx = {
        out.draws.constrained_index("nu1"), out.draws.constrained_index("sigma1"),
        out.draws.constrained_index("nu2"), out.draws.constrained_index("sigma2")};
    const auto nu3 = effective_prior(spec, "nu3", 0);
    const auto sigma3 = effective_prior(spec, "sigma3", 0);
    auto rng = make_engine(sampler.seed, {0x4d4150ULL});
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t c = 0; c < out.draws.chains.size(); ++c) {
        for (std::size_t i = 0; i < out.draws.samples; ++i) {
            auto row = hyper_row(out.draws, c, i, idx);
            row[4] = draw_prior(nu3, rng);
            row[5] = draw_prior(sigma3, rng);
            out.hyper.push_back(row);
            out.predictive.push_back(
                {row[0] + row[1] * z(rng), row[2] + row[3] * z(rng), row[4] + row[5] * z(rng)});
        }
    }
    return out;
}

MixtureFit fit_mixture(const std::vector<std::vector<double>>& rows, std::size_t max_components,
                       const MixtureFitOptions& options) {
    if (rows.size() < 500) throw DomainError("fit_mixture needs at least 500 draws");
    const std::size_t D = rows.front().size();
    if (D == 0) throw DomainError("fit_mixture: draws have no coordinates");
    for (const auto& r : rows) {
        if (r.size() != D) throw DomainError("fit_mixture: ragged draw matrix");
        for (double v : r)
            if (!std::isfinite(v)) throw DomainError("fit_mixture: non-finite draw");
    }
    const std::size_t k_max = std::clamp<std::size_t>(max_components, 1, kMaxComponents);
    const double n = static_cast<double>(rows.size());

    std::vector<double> floor_var(D);
    for (std::size_t d = 0; d < D; ++d) {
        double m = 0.0, s = 0.0;
        for (const auto& r : rows) m += r[d];
        m /= n;
        for (const auto& r : rows) s += (r[d] - m) * (r[d] - m);
        floor_var[d] = std::max(1e-6 * s / (n - 1.0), 1e-300);
    }

    MixtureFit fit;
    std::vector<EmResult> best(k_max);
    auto rng = Engine(options.seed);
    for (std::size_t k = 1; k <= k_max; ++k) {
        const int tries = k == 1 ? 1 : options.restarts;
        for (int t = 0; t < tries; ++t) {
            auto r = run_em(rows, k, floor_var, options, rng);
            if (r.converged && r.log_likelihood > best[k - 1].log_likelihood) best[k - 1] = std::move(r);
        }
        if (best[k - 1].converged) {
            const double p = static_cast<double>(k - 1 + 2 * k * D);
            fit.bic.push_back(-2.0 * best[k - 1].log_likelihood + p * std::log(n));
        } else {
            fit.bic.push_back(std::numeric_limits<double>::quiet_NaN());
            fit.notes.push_back(std::to_string(k) + " components: no EM restart converged in " +
                                std::to_string(options.max_iterations) + " iterations");
        }
    }
    double min_bic = std::numeric_limits<double>::infinity();
    for (double b : fit.bic)
        if (std::isfinite(b)) min_bic = std::min(min_bic, b);
    if (!std::isfinite(min_bic)) {
        std::string msg = "mixture EM did not converge";
        for (const auto& note : fit.notes) msg += "; " + note;
        throw FitError(msg);
    }
    for (std::size_t k = 1; k <= k_max; ++k) {
        if (std::isfinite(fit.bic[k - 1]) && fit.bic[k - 1] <= min_bic + 2.0) {
            fit.selected_components = k;
            break;
        }
    }

    auto comps = best[fit.selected_components - 1].components;
    std::sort(comps.begin(), comps.end(), [](const auto& a, const auto& b) { return a.mean < b.mean; });
    double total = 0.0;
    for (const auto& c : comps) total += c.weight;
    for (auto& c : comps) c.weight /= total;

    auto& prior = fit.prior;
    prior.components = std::move(comps);
    for (std::size_t d = 0; d < D; ++d) {
        prior.parameters.push_back(d < options.names.size() ? options.names[d] : "x" + std::to_string(d));
        prior.scales.push_back(d < options.scales.size() ? options.scales[d] : BlockScale::Identity);
    }
    prior.check();

    fit.fidelity_ok = true;
    constexpr std::array<double, 3> probs = {0.025, 0.5, 0.975};
    for (std::size_t d = 0; d < D; ++d) {
        PercentileCheck chk;
        chk.parameter = prior.parameters[d];
        std::vector<double> col;
        for (const auto& r : rows) col.push_back(r[d]);
        std::sort(col.begin(), col.end());
        const auto marginal = prior.marginal(d);
        chk.ok = true;
        for (std::size_t i = 0; i < 3; ++i) {
            chk.empirical[i] = quantile_sorted(col, probs[i]);
            chk.fitted[i] = prior_quantile(marginal, probs[i]);
            if (std::abs(chk.empirical[i] - chk.fitted[i]) > 0.05) chk.ok = false;
        }
        fit.fidelity_ok = fit.fidelity_ok && chk.ok;
        fit.fidelity.push_back(chk);
    }
    if (!fit.fidelity_ok) fit.notes.push_back("fitted percentiles differ from the draws by more than 0.05");
    return fit;
}

MapResult derive_map(const Dataset& data, const ModelSpec& spec, const MapSettings& settings) {
    if (!(settings.robust_weight >= 0.0 && settings.robust_weight <= 1.0)) {
        throw ConfigError("robust weight must lie in [0,1]");
    }
    const auto hist = fit_historical(data, spec, settings.sampler);
    MapResult out;
    out.mode = settings.mode;
    MixtureFitOptions opt;
    opt.seed = stream_seed(settings.sampler.seed, {0x454dULL});

    if (settings.mode == MapMode::NonStratified) {
        static const char* names[4] = {"nu1", "sigma1", "nu2", "sigma2"};
        std::vector<std::size_t> cols;
        for (std::size_t k = 0; k < 4; ++k) {
            if (!is_point_mass(effective_prior(spec, names[k], 0))) cols.push_back(k);
        }
        if (cols.empty()) throw ConfigError("every hyperparameter is fixed; nothing to borrow");
        std::vector<std::vector<double>> rows;
        for (const auto& h : hist.hyper) {
            std::vector<double> r;
            for (auto k : cols) r.push_back(k % 2 == 1 ? std::log(h[k]) : h[k]);
            rows.push_back(std::move(r));
        }
        for (auto k : cols) {
            opt.names.push_back(names[k]);
            opt.scales.push_back(k % 2 == 1 ? BlockScale::Log : BlockScale::Identity);
        }
        auto fit = fit_mixture(rows, settings.max_components, opt);
        out.priors.push_back(robustify(fit.prior, settings.robust_weight));
        out.fits.push_back(std::move(fit));
    } else {
        static const char* names[2] = {"log_lambda0", "log_mu0"};
        for (std::size_t k = 0; k < 2; ++k) {
            std::vector<std::vector<double>> rows;
            for (const auto& p : hist.predictive) rows.push_back({p[k]});
            opt.names = {names[k]};
            opt.scales = {BlockScale::Identity};
            auto fit = fit_mixture(rows, settings.max_components, opt);
            out.priors.push_back(robustify(fit.prior, settings.robust_weight));
            out.fits.push_back(std::move(fit));
        }
    }
    return out;
}

ModelSpec attach(const ModelSpec& spec, const std::vector<MixturePrior>& priors, MapMode mode) {
    ModelSpec out = spec;
    out.borrowing = mode == MapMode::NonStratified ? Borrowing::NonStratified : Borrowing::Stratified;
    out.map_priors = priors;
    if (mode == MapMode::NonStratified) {
        for (const auto& m : priors)
            for (const auto& p : m.parameters) out.priors.erase(p);
    } else {
        std::erase_if(out.priors, [](const auto& kv) {
            return kv.first.starts_with("nu") || kv.first.starts_with("sigma");
        });
    }
    check_model_spec(out);
    return out;
}

ModelSpec attach(const ModelSpec& spec, const MixturePrior& prior, MapMode mode) {
    return attach(spec, std::vector<MixturePrior>{prior}, mode);
}

nlohmann::json map_result_to_json(const MapResult& result) {
    using nlohmann::json;
    json j;
    j["schema_version"] = 1;
    j["mode"] = std::string(to_string(result.mode));
    json priors = json::array();
    for (const auto& p : result.priors) priors.push_back(mixture_to_json(p));
    j["priors"] = priors;
    json fits = json::array();
    for (const auto& f : result.fits) {
        json checks = json::array();
        for (const auto& c : f.fidelity) {
            checks.push_back({{"parameter", c.parameter}, {"empirical", c.empirical}, {"fitted", c.fitted}, {"ok", c.ok}});
        }
        json bic = json::array();
        for (double b : f.bic) bic.push_back(std::isfinite(b) ? json(b) : json(nullptr));
        fits.push_back({{"parameters", f.prior.parameters},
                        {"selected_components", f.selected_components},
                        {"criterion", "BIC, smallest count within 2 of the minimum"},
                        {"bic", bic},
                        {"fidelity", checks},
                        {"fidelity_ok", f.fidelity_ok},
                        {"notes", f.notes}});
    }
    j["fits"] = fits;
    return j;
}

MapResult map_result_from_json(const nlohmann::json& j) {
    MapResult out;
    try {
        const auto mode = j.at("mode").get<std::string>();
        if (mode == "non_stratified") {
            out.mode = MapMode::NonStratified;
        } else if (mode == "stratified") {
            out.mode = MapMode::Stratified;
        } else {
            throw ConfigError("MAP file: unknown mode '" + mode + "'");
        }
        for (const auto& p : j.at("priors")) out.priors.push_back(mixture_from_json(p));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("MAP file: ") + e.what());
    }
    if (out.priors.empty()) throw ConfigError("MAP file: no priors");
    return out;
}

MapResult load_map_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open MAP prior file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("MAP file '" + path + "': " + e.what());
    }
    return map_result_from_json(j);
}

}  // namespace aemeta
