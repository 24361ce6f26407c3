#include "aemeta/diagnostics.hpp"
#include "aemeta/errors.hpp"
#include "aemeta/map_prior.hpp"
#include "aemeta/sim_engine.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace aemeta;
using Catch::Approx;

namespace {

std::vector<std::vector<double>> normal_rows(std::size_t n, Engine& rng, const std::vector<std::pair<double, double>>& comps) {
    std::normal_distribution<double> z;
    std::uniform_int_distribution<std::size_t> pick(0, comps.size() - 1);
    std::vector<std::vector<double>> rows(n);
    for (auto& r : rows) {
        const auto& [m, s] = comps[pick(rng)];
        r = {m + s * z(rng)};
    }
    return rows;
}

Dataset historical_data(int trials, Count n, double lambda, std::uint64_t seed) {
    Dataset d;
    d.time_unit = "years";
    auto rng = make_engine(seed, {});
    for (int i = 0; i < trials; ++i) {
        TrialRecord t;
        t.trial_id = "H" + std::to_string(i + 1);
        t.historical = true;
        t.arms.push_back(simulate_arm({lambda, 0.5, 0.1, 1.0}, n, rng));
        d.trials.push_back(std::move(t));
    }
    TrialRecord main;
    main.trial_id = "M1";
    main.arms.push_back(simulate_arm({lambda, 0.5, 0.1, 1.0}, 100, rng, ArmRole::Control));
    main.arms.push_back(simulate_arm({lambda, 0.5, 0.1, 1.0}, 100, rng, ArmRole::Treatment));
    d.trials.push_back(std::move(main));
    return d;
}

SamplerConfig small_sampler(std::uint64_t seed) {
    SamplerConfig cfg;
    cfg.warmup = 500;
    cfg.samples = 500;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("EM recovers a single normal") {
    auto rng = make_engine(1, {});
    const auto fit = fit_mixture(normal_rows(4000, rng, {{1.5, 0.4}}), 4);
    CHECK(fit.selected_components == 1);
    REQUIRE(fit.prior.components.size() == 1);
    CHECK(fit.prior.components[0].mean[0] == Approx(1.5).epsilon(0.05));
    CHECK(fit.prior.components[0].sd[0] == Approx(0.4).epsilon(0.05));
    CHECK(fit.fidelity_ok);
    CHECK(fit.bic.size() == 4);
}

TEST_CASE("EM recovers an equal two-component mixture") {
    auto rng = make_engine(2, {});
    const auto fit = fit_mixture(normal_rows(4000, rng, {{-2.0, 1.0}, {2.0, 1.0}}), 4);
    CHECK(fit.selected_components == 2);
    REQUIRE(fit.prior.components.size() == 2);
    for (const auto& c : fit.prior.components) CHECK(c.weight == Approx(0.5).margin(0.1));
    CHECK(fit.prior.components[0].mean[0] == Approx(-2.0).margin(0.15));
    CHECK(fit.prior.components[1].mean[0] == Approx(2.0).margin(0.15));
    // The density between the modes is low, so the empirical median of 4000
    // draws has a standard error near 0.15 and the 0.05 fidelity check may
    // flag this fit either way.
    REQUIRE(fit.fidelity.size() == 1);
    CHECK(fit.fidelity[0].fitted[0] == Approx(fit.fidelity[0].empirical[0]).margin(0.1));
    CHECK(fit.fidelity[0].fitted[2] == Approx(fit.fidelity[0].empirical[2]).margin(0.1));
}

TEST_CASE("a forced one-component fit of bimodal draws is flagged") {
    auto rng = make_engine(3, {});
    const auto fit = fit_mixture(normal_rows(4000, rng, {{-2.0, 0.5}, {2.0, 0.5}}), 1);
    CHECK(fit.selected_components == 1);
    CHECK(fit.prior.components[0].sd[0] > 1.5);
    CHECK_FALSE(fit.fidelity_ok);
    CHECK_FALSE(fit.notes.empty());
    bool median_off = false;
    for (const auto& c : fit.fidelity)
        if (!c.ok) median_off = true;
    CHECK(median_off);
}

TEST_CASE("fit_mixture input checks") {
    auto rng = make_engine(4, {});
    CHECK_THROWS_AS(fit_mixture(normal_rows(100, rng, {{0.0, 1.0}}), 2), DomainError);
    auto rows = normal_rows(600, rng, {{0.0, 1.0}});
    rows[5].push_back(1.0);
    CHECK_THROWS_AS(fit_mixture(rows, 2), DomainError);
}

TEST_CASE("historical fit needs two historical trials") {
    const auto d = historical_data(1, 100, 0.5, 5);
    try {
        fit_historical(d, ModelSpec{}, small_sampler(1));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("insufficient historical trials"));
    }
    ModelSpec trt;
    trt.anchor = Anchor::Treatment;
    CHECK_THROWS_AS(fit_historical(historical_data(3, 100, 0.5, 5), trt, small_sampler(1)), ConfigError);
}

TEST_CASE("predictive distribution of homogeneous historical trials") {
    const auto d = historical_data(20, 200, 0.5, 6);
    ModelSpec spec;
    apply_rosiglitazone_preset(spec);
    const auto fit = fit_historical(d, spec, small_sampler(2));
    std::vector<double> pred, nu1;
    for (const auto& p : fit.predictive) pred.push_back(p[0]);
    for (const auto& h : fit.hyper) nu1.push_back(h[0]);
    std::sort(pred.begin(), pred.end());
    CHECK(std::abs(quantile_sorted(pred, 0.5) - std::log(0.5)) < 0.15);

    auto var = [](const std::vector<double>& x) {
        double m = 0.0, s = 0.0;
        for (double v : x) m += v;
        m /= x.size();
        for (double v : x) s += (v - m) * (v - m);
        return s / (x.size() - 1);
    };
    CHECK(var(pred) >= var(nu1));
    CHECK(fit.hyper.size() == 4 * 500);
}

TEST_CASE("derived MAP priors attach to both modes") {
    const auto d = historical_data(6, 150, 0.4, 7);
    ModelSpec spec;
    apply_rosiglitazone_preset(spec);
    MapSettings settings;
    settings.sampler = small_sampler(3);

    const auto ns = derive_map(d, spec, settings);
    REQUIRE(ns.priors.size() == 1);
    CHECK(ns.priors[0].parameters == std::vector<std::string>{"nu1", "sigma1", "nu2", "sigma2"});
    CHECK(ns.priors[0].robust_weight == 0.5);
    const auto ns_spec = attach(spec, ns.priors, MapMode::NonStratified);
    CHECK(ns_spec.borrowing == Borrowing::NonStratified);
    CHECK_FALSE(ns_spec.priors.contains("nu1"));
    CHECK(ns_spec.priors.contains("nu3"));
    const PosteriorModel m(ns_spec, main_trials_only(d));
    auto rng = make_engine(8, {});
    CHECK(std::isfinite(m.log_posterior(m.initial_point(rng, 0.1))));

    settings.mode = MapMode::Stratified;
    const auto st = derive_map(d, spec, settings);
    REQUIRE(st.priors.size() == 2);
    CHECK(st.priors[0].parameters == std::vector<std::string>{"log_lambda0"});
    CHECK(st.priors[1].parameters == std::vector<std::string>{"log_mu0"});
    // One main trial is enough once the shared layer is gone.
    const auto st_spec = attach(spec, st.priors, MapMode::Stratified);
    const PosteriorModel ms(st_spec, main_trials_only(d));
    CHECK(std::isfinite(ms.log_posterior(ms.initial_point(rng, 0.1))));

    CHECK_THROWS_AS(attach(spec, st.priors, MapMode::NonStratified), ConfigError);
    CHECK_THROWS_AS(attach(spec, ns.priors, MapMode::Stratified), ConfigError);

    const auto back = map_result_from_json(map_result_to_json(ns));
    CHECK(back.mode == MapMode::NonStratified);
    REQUIRE(back.priors.size() == 1);
    CHECK(back.priors[0] == ns.priors[0]);
    CHECK_THROWS_AS(map_result_from_json(nlohmann::json{{"mode", "sideways"}, {"priors", nlohmann::json::array()}}),
                    ConfigError);
}

TEST_CASE("a zero robust weight leaves only the vague prior") {
    const auto d = historical_data(4, 150, 0.4, 9);
    ModelSpec spec;
    MapSettings settings;
    settings.sampler = small_sampler(4);
    settings.robust_weight = 0.0;
    const auto r = derive_map(d, spec, settings);
    const auto& p = r.priors[0];
    for (double nu : {-2.0, 0.0}) {
        const std::vector<double> x = {nu, 0.4, nu, 0.6};
        CHECK(p.log_density(x) == Approx(p.log_vague_density(x)).margin(1e-12));
    }
    settings.robust_weight = 1.5;
    CHECK_THROWS_AS(derive_map(d, spec, settings), ConfigError);
}
