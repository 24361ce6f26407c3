#include "aemeta/errors.hpp"
#include "aemeta/sim_engine.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

using namespace aemeta;
using Catch::Approx;

namespace {

// The five classification rules written out independently of the library.
std::array<bool, 5> rules(double x, double c, bool fatal, double tau) {
    const double first = std::min(c, tau);
    return {x <= first && fatal,
            x <= first && !fatal && c >= tau,
            x <= c && x <= tau && !fatal && c < tau,
            x > tau && c >= tau,
            c < tau && c < x};
}

ScenarioSpec small_scenario() {
    ScenarioSpec s;
    s.name = "small";
    s.time_unit = "years";
    s.trials = {{"M1", std::nullopt, false, 60, 60, 1.0, 1.0},
                {"M2", std::nullopt, false, 80, 80, 0.5, 0.5},
                {"H1", std::nullopt, true, 50, 0, 1.0, 1.0},
                {"H2", std::nullopt, true, 50, 0, 1.0, 1.0}};
    s.truth = {Anchor::Control, std::log(0.5), 0.0, 0.5, 0.5, 0.35, 0.35, 0.0, 0.0};
    s.replications = 4;
    s.seed = 77;
    s.sampler.chains = 2;
    s.sampler.warmup = 150;
    s.sampler.samples = 150;
    ModelSpec ce;
    ModelSpec fixed = ce;
    for (const char* p : {"nu1", "sigma1", "nu2", "sigma2"}) fixed.priors[p] = PointMassPrior{p[0] == 'n' ? -1.0 : 0.5};
    s.analyses = {{"CE-vague", ce, std::nullopt, false}, {"CE-fixed-MAP", fixed, MapSettings{}, false}};
    return s;
}

}  // namespace

TEST_CASE("classify_patient examples") {
    CHECK(classify_patient(0.2, 5.0, true, 1.0) == 1);
    CHECK(classify_patient(0.2, 0.6, false, 1.0) == 3);
    CHECK(classify_patient(0.2, 5.0, false, 1.0) == 2);
    CHECK(classify_patient(3.0, 5.0, true, 1.0) == 4);
    CHECK(classify_patient(3.0, 0.5, false, 1.0) == 5);
    const double inf = std::numeric_limits<double>::infinity();
    CHECK(classify_patient(inf, inf, false, 1.0) == 4);
    // Ties count as event first.
    CHECK(classify_patient(0.5, 0.5, false, 1.0) == 3);
    CHECK(classify_patient(0.5, 0.5, true, 1.0) == 1);
    CHECK_THROWS_AS(classify_patient(0.0, 1.0, false, 1.0), DomainError);
    CHECK_THROWS_AS(classify_patient(1.0, 1.0, false, 0.0), DomainError);
    CHECK_THROWS_AS(classify_patient(1.0, 1.0, false, inf), DomainError);
}

TEST_CASE("exactly one classification rule fires") {
    auto rng = make_engine(1, {});
    std::uniform_int_distribution<int> grid(1, 8);  // coarse grid so ties occur
    std::exponential_distribution<double> e(1.0);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < 100000; ++i) {
        const bool coarse = coin(rng);
        const double x = coarse ? grid(rng) * 0.25 : e(rng);
        const double c = coarse ? grid(rng) * 0.25 : e(rng);
        const double tau = coarse ? grid(rng) * 0.25 : e(rng) + 1e-3;
        const bool fatal = coin(rng);
        const auto r = rules(x, c, fatal, tau);
        int fired = 0, which = 0;
        for (int k = 0; k < 5; ++k) {
            if (r[k]) {
                ++fired;
                which = k + 1;
            }
        }
        REQUIRE(fired == 1);
        REQUIRE(classify_patient(x, c, fatal, tau) == which);
    }
}

TEST_CASE("simulated category frequencies match the closed form") {
    for (const RateParams& rates : {RateParams{0.5, 0.5, 0.35, 1.0}, RateParams{0.02, 0.5, 0.01, 2.5},
                                    RateParams{3.0, 0.2, 0.8, 0.25}}) {
        auto rng = make_engine(2, {});
        const Count n = 1000000;
        std::array<Count, 5> w{};
        simulate_arm(rates, n, rng, ArmRole::Control, &w);
        const auto p = category_probs(rates);
        for (int k = 0; k < 5; ++k) {
            const double se = std::sqrt(p[k] * (1 - p[k]) / n);
            INFO("lambda " << rates.lambda << " category " << k + 1);
            CHECK(std::abs(static_cast<double>(w[k]) / n - p[k]) <= 3.0 * se);
        }
    }
}

TEST_CASE("degenerate rates") {
    auto rng = make_engine(3, {});
    for (int i = 0; i < 50; ++i) {
        const auto a = simulate_arm({0.0, 0.7, 0.5, 1.0}, 40, rng);
        CHECK(a.y == 0);
        CHECK(a.m == 0);
        const auto b = simulate_arm({0.9, 0.0, 0.0, 1.0}, 40, rng);
        CHECK(b.z == 0);
        CHECK(b.m == 0);
    }
    CHECK_THROWS_AS(simulate_arm({0.5, 0.5, 0.5, 1.0}, 0, rng), DomainError);
}

TEST_CASE("mean event share matches the closed form") {
    const RateParams rates{0.5, 0.5, 0.35, 1.0};
    const auto p = category_probs(rates);
    const double share = p[0] + p[1] + p[2];
    auto rng = make_engine(4, {});
    const Count n = 50;
    const int reps = 10000;
    double total = 0.0;
    for (int r = 0; r < reps; ++r) total += static_cast<double>(simulate_arm(rates, n, rng).y) / n;
    const double se = std::sqrt(share * (1 - share) / (n * reps));
    CHECK(std::abs(total / reps - share) <= 3.0 * se);
}

TEST_CASE("aggregation identity") {
    auto rng = make_engine(5, {});
    std::uniform_real_distribution<double> u(0.05, 2.0);
    for (int i = 0; i < 500; ++i) {
        const RateParams rates{u(rng), u(rng), u(rng) / 2.0, u(rng)};
        std::array<Count, 5> w{};
        const auto a = simulate_arm(rates, 30, rng, ArmRole::Treatment, &w);
        CHECK(a.y >= a.m);
        CHECK(a.z >= a.m);
        CHECK(validate_arm(a).empty());
        const auto fr = feasible_range(a);
        CHECK(fr.r1 <= w[2]);
        CHECK(w[2] <= fr.r2);
        const auto feasible = oracle::feasible_w3(a);
        CHECK(std::find(feasible.begin(), feasible.end(), static_cast<int>(w[2])) != feasible.end());
    }
}

TEST_CASE("bundled scenarios") {
    const auto all = bundled_scenarios();
    CHECK(all.size() == 16);
    for (const auto& s : all) CHECK_NOTHROW(s.check());
    const auto rosi5 = find_bundled("rosi-5");
    REQUIRE(rosi5);
    CHECK(rosi5->truth.phi == 0.25);
    CHECK(rosi5->truth.eta == 0.0);
    const auto onco8 = find_bundled("onco-8");
    REQUIRE(onco8);
    CHECK(onco8->truth.phi == 0.5);
    CHECK(onco8->truth.eta == 0.8);
    CHECK(onco8->truth.anchor == Anchor::Treatment);
    CHECK_FALSE(find_bundled("rosi-9"));

    Count main_patients = 0, hist = 0;
    for (const auto& t : find_bundled("rosi-1")->trials) {
        if (t.historical) {
            ++hist;
            CHECK(t.n_control >= 25);
            CHECK(t.n_control <= 300);
        } else {
            main_patients += t.n_control + t.n_treatment;
        }
    }
    CHECK(main_patients == 1425);
    CHECK(hist == 12);
}

TEST_CASE("scenario JSON round trip") {
    for (const auto& s : bundled_scenarios()) {
        const auto j = scenario_to_json(s);
        CHECK(scenario_to_json(scenario_from_json(j)) == j);
    }
    auto bad = scenario_to_json(small_scenario());
    bad["replications"] = 0;
    CHECK_THROWS_AS(scenario_from_json(bad), ConfigError);
}

TEST_CASE("scenario checks") {
    auto s = small_scenario();
    s.truth.eta = -0.1;
    CHECK_THROWS_AS(s.check(), ConfigError);
    s = small_scenario();
    s.truth.anchor = Anchor::Treatment;
    CHECK_THROWS_AS(s.check(), ConfigError);
    s = small_scenario();
    s.trials.pop_back();
    CHECK_THROWS_AS(s.check(), ConfigError);  // MAP needs two historical trials
}

TEST_CASE("simulated datasets are reproducible and valid") {
    const auto s = small_scenario();
    const auto a = simulate_dataset(s, 2), b = simulate_dataset(s, 2), c = simulate_dataset(s, 3);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    CHECK(validate(a).empty());
    CHECK(a.historical_trial_count() == 2);
}

TEST_CASE("run_scenario counts failures and ignores the worker count") {
    auto s = small_scenario();
    s.threads = 1;
    int calls = 0;
    const auto one = run_scenario(s, [&](int done, int total) {
        ++calls;
        CHECK(done <= total);
    });
    CHECK(calls == s.replications);
    s.threads = 3;
    const auto three = run_scenario(s);
    CHECK(result_to_json(one) == result_to_json(three));

    REQUIRE(one.analyses.size() == 2);
    const auto& ok = one.analyses[0];
    CHECK(ok.n_failed == 0);
    CHECK(ok.coverage >= 0.0);
    CHECK(ok.coverage <= 1.0);
    CHECK(ok.coverage_se == Approx(std::sqrt(ok.coverage * (1 - ok.coverage) / 4)));
    CHECK(ok.mean_width > 0.0);

    // Every hyperparameter of the MAP block is fixed, so no fit can succeed.
    const auto& failed = one.analyses[1];
    CHECK(failed.n_failed == s.replications);
    REQUIRE(failed.failures.size() == 4);
    CHECK_THAT(failed.failures[0], Catch::Matchers::ContainsSubstring("replication 0"));

    const auto csv = results_csv({one});
    CHECK(csv.rfind("scenario,model,metric,value,mc_se\n", 0) == 0);
    CHECK(csv.find("small,CE-fixed-MAP,failed,4,") != std::string::npos);
    CHECK(csv.find("small,CE-vague,coverage,") != std::string::npos);
}
