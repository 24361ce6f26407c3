#include "aemeta/event_model.hpp"
#include "aemeta/errors.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

using namespace aemeta;
using Catch::Approx;

namespace {

std::array<double, 5> random_simplex(std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    std::array<double, 5> p;
    double s = 0.0;
    for (auto& x : p) s += (x = e(rng));
    for (auto& x : p) x /= s;
    return p;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST_CASE("category_probs with no events keeps only completion and drop-out") {
    const auto p = category_probs({0.0, 0.5, 0.35, 1.0});
    REQUIRE(p[0] == 0.0);
    REQUIRE(p[1] == 0.0);
    REQUIRE(p[2] == 0.0);
    REQUIRE(p[3] == Approx(std::exp(-0.5)).epsilon(1e-15));
    REQUIRE(p[4] == Approx(1.0 - std::exp(-0.5)).epsilon(1e-15));

    const auto none = category_probs({0.0, 0.0, 0.7, 1.0});
    REQUIRE(none.p == std::array<double, 5>{0.0, 0.0, 0.0, 1.0, 0.0});
}

TEST_CASE("category_probs matches the closed forms at lambda = mu = 0.5") {
    // Reference values evaluated from the closed forms at 30 significant digits.
    const auto p = category_probs({0.5, 0.5, 0.35, 1.0});
    const std::array<double, 5> expected{0.11062109779499759, 0.15512329205177422, 0.050315889567507029,
                                         0.36787944117144232, 0.31606027941427884};
    for (int s = 0; s < 5; ++s) REQUIRE(p[s] == Approx(expected[s]).epsilon(1e-14));
}

TEST_CASE("category_probs rejects invalid parameters") {
    const double inf = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(category_probs({std::nan(""), 0.1, 0.1, 1.0}), DomainError);
    REQUIRE_THROWS_AS(category_probs({inf, 0.1, 0.1, 1.0}), DomainError);
    REQUIRE_THROWS_AS(category_probs({-0.1, 0.1, 0.1, 1.0}), DomainError);
    REQUIRE_THROWS_AS(category_probs({0.1, 0.1, 1.5, 1.0}), DomainError);
    REQUIRE_THROWS_AS(category_probs({0.1, 0.1, 0.5, 0.0}), DomainError);
}

TEST_CASE("feasible_range examples") {
    REQUIRE(feasible_range({ArmRole::Treatment, 400, 5, 65, 0, 30.0}) == FeasibleRange{0, 5});
    REQUIRE(feasible_range({ArmRole::Control, 5, 5, 5, 0, 1.0}) == FeasibleRange{5, 5});
    const ArmRecord arm{ArmRole::Control, 10, 4, 3, 2, 1.0};
    REQUIRE(feasible_range(arm) == FeasibleRange{0, 1});
    REQUIRE(oracle::feasible_w3(arm) == std::vector<int>{0, 1});
}

TEST_CASE("feasible_range agrees with brute force on random small arms") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 300; ++i) {
        const Count n = std::uniform_int_distribution<Count>(1, 9)(rng);
        const Count y = std::uniform_int_distribution<Count>(0, n)(rng);
        const Count z = std::uniform_int_distribution<Count>(0, n)(rng);
        const Count m = std::uniform_int_distribution<Count>(0, std::min(y, z))(rng);
        const ArmRecord arm{ArmRole::Control, n, y, z, m, 1.0};
        auto w3 = oracle::feasible_w3(arm);
        std::sort(w3.begin(), w3.end());
        const auto range = feasible_range(arm);
        REQUIRE(w3.front() == range.r1);
        REQUIRE(w3.back() == range.r2);
        REQUIRE(static_cast<Count>(w3.size()) == range.r2 - range.r1 + 1);
    }
}

TEST_CASE("complete_counts examples") {
    REQUIRE(complete_counts({ArmRole::Control, 10, 4, 3, 2, 1.0}, 0) == std::array<Count, 5>{2, 2, 0, 5, 1});
    REQUIRE(complete_counts({ArmRole::Control, 5, 5, 5, 0, 1.0}, 5) == std::array<Count, 5>{0, 0, 5, 0, 0});
    REQUIRE(complete_counts({ArmRole::Control, 400, 5, 65, 0, 1.0}, 5) == std::array<Count, 5>{0, 0, 5, 335, 60});
    REQUIRE_THROWS_AS(complete_counts({ArmRole::Control, 10, 4, 3, 2, 1.0}, 2), DomainError);
}

TEST_CASE("log_likelihood_arm examples") {
    const CategoryProbs p{{0.1, 0.2, 0.1, 0.5, 0.1}};
    const ArmRecord arm{ArmRole::Control, 3, 1, 1, 0, 1.0};
    const double brute = oracle::enumerate_assignments(arm, p.p);
    REQUIRE(brute == Approx(0.135).epsilon(1e-12));
    REQUIRE(std::exp(log_likelihood_arm(arm, p)) == Approx(brute).epsilon(1e-10));

    for (Count k : {1, 7, 300}) {
        REQUIRE(log_likelihood_arm({ArmRole::Control, k, 0, 0, 0, 1.0}, p) ==
                Approx(static_cast<double>(k) * std::log(0.5)).epsilon(1e-13));
    }
    REQUIRE(log_likelihood_arm({ArmRole::Control, 2, 2, 2, 2, 1.0}, p) == Approx(2.0 * std::log(0.1)).epsilon(1e-13));
}

TEST_CASE("log_likelihood_arm returns -inf for impossible data") {
    const CategoryProbs no_fatal{{0.0, 0.3, 0.2, 0.3, 0.2}};
    REQUIRE(log_likelihood_arm({ArmRole::Control, 5, 2, 2, 1, 1.0}, no_fatal) ==
            -std::numeric_limits<double>::infinity());
    // Zero probability with a zero count is harmless.
    REQUIRE(std::isfinite(log_likelihood_arm({ArmRole::Control, 5, 2, 2, 0, 1.0}, no_fatal)));
    const CategoryProbs only_complete{{0.0, 0.0, 0.0, 1.0, 0.0}};
    REQUIRE(log_likelihood_arm({ArmRole::Control, 4, 0, 0, 0, 1.0}, only_complete) == 0.0);
    REQUIRE(log_likelihood_arm({ArmRole::Control, 4, 1, 0, 0, 1.0}, only_complete) ==
            -std::numeric_limits<double>::infinity());
}

TEST_CASE("log_likelihood_dataset adds arms and checks arity") {
    const ArmRecord arm{ArmRole::Control, 20, 4, 6, 1, 2.0};
    const RateParams r{0.2, 0.1, 0.3, 2.0};
    Dataset one;
    one.trials.push_back({"a", std::nullopt, {arm}, true});
    const double single = log_likelihood_arm(arm, category_probs(r));
    REQUIRE(log_likelihood_dataset(one, std::vector{r}) == Approx(single).epsilon(1e-14));

    Dataset two;
    two.trials.push_back({"a", std::nullopt, {arm, arm}, false});
    REQUIRE(log_likelihood_dataset(two, std::vector{r, r}) == Approx(2.0 * single).epsilon(1e-14));
    REQUIRE_THROWS_AS(log_likelihood_dataset(two, std::vector{r}), DomainError);
}

TEST_CASE("oncology-shaped dataset likelihood matches per-arm enumeration on a shrunken copy") {
    const auto full = load_dataset(AEMETA_DATA_DIR "/oncology.csv");
    std::vector<RateParams> rates;
    for (const auto& t : full.trials) {
        for (const auto& a : t.arms) {
            rates.push_back({a.role == ArmRole::Treatment ? 0.0025 : 0.0015, 0.05, 0.01, a.tau});
        }
    }
    const double ll_full = log_likelihood_dataset(full, rates);
    REQUIRE(std::isfinite(ll_full));
    REQUIRE(ll_full < 0.0);

    // Scale every arm to n = 12, keeping the count proportions feasible.
    Dataset small = full;
    for (auto& t : small.trials) {
        for (auto& a : t.arms) {
            const double f = 12.0 / static_cast<double>(a.n);
            a.y = std::min<Count>(12, static_cast<Count>(std::ceil(a.y * f)));
            a.z = std::min<Count>(12, static_cast<Count>(std::round(a.z * f)));
            a.m = std::min(a.m, std::min(a.y, a.z));
            a.n = 12;
        }
    }
    REQUIRE(validate(small).empty());
    double brute = 0.0;
    std::size_t k = 0;
    for (const auto& t : small.trials) {
        for (const auto& a : t.arms) {
            brute += std::log(oracle::enumerate_arm_probability(a, category_probs(rates[k++]).p));
        }
    }
    REQUIRE(log_likelihood_dataset(small, rates) == Approx(brute).epsilon(1e-10));
}

TEST_CASE("category_probs stays on the simplex over random parameters") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto log_uniform = [&](double lo, double hi) { return std::exp(std::log(lo) + u(rng) * (std::log(hi) - std::log(lo))); };
    for (int i = 0; i < 10000; ++i) {
        const RateParams r{log_uniform(1e-6, 10.0), log_uniform(1e-6, 10.0), u(rng), log_uniform(0.1, 100.0)};
        const auto p = category_probs(r);
        double s = 0.0;
        for (double x : p.p) {
            REQUIRE(x >= 0.0);
            REQUIRE(x <= 1.0);
            s += x;
        }
        REQUIRE(std::abs(s - 1.0) <= 1e-12);
        const auto lp = category_log_probs(r);
        for (int c = 0; c < 5; ++c) {
            if (p[c] > 1e-300) REQUIRE(std::abs(std::exp(lp[c]) - p[c]) <= 1e-13 * p[c] + 1e-300);
        }
    }
}

TEST_CASE("completion probability strictly decreases in tau, lambda and mu") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.01, 2.0);
    for (int i = 0; i < 500; ++i) {
        const RateParams base{u(rng), u(rng), 0.3, u(rng)};
        const double p4 = category_probs(base)[3];
        for (int which = 0; which < 3; ++which) {
            RateParams up = base;
            (which == 0 ? up.tau : which == 1 ? up.lambda : up.mu) *= 1.1;
            REQUIRE(category_probs(up)[3] < p4);
        }
    }
}

TEST_CASE("category_probs is continuous at the zero-rate limits") {
    const double tiny = 1e-15;
    for (double mu : {0.0, 1e-15, 0.3, 4.0}) {
        for (double tau : {0.1, 1.0, 50.0}) {
            const auto limit = category_probs({0.0, mu, 0.4, tau});
            const auto near = category_probs({tiny, mu, 0.4, tau});
            for (int s = 0; s < 5; ++s) REQUIRE(std::abs(near[s] - limit[s]) <= 1e-9);
            const auto limit_mu = category_probs({mu, 0.0, 0.4, tau});
            const auto near_mu = category_probs({mu, tiny, 0.4, tau});
            for (int s = 0; s < 5; ++s) REQUIRE(std::abs(near_mu[s] - limit_mu[s]) <= 1e-9);
        }
    }
    // Relative accuracy of the category-3 term when both rates are tiny:
    // p3 ~ (1-q) a b / 2 to leading order.
    const auto p = category_probs({1e-9, 2e-9, 0.0, 1.0});
    REQUIRE(p[2] == Approx(0.5 * 1e-9 * 2e-9).epsilon(1e-8));
}

TEST_CASE("arm likelihood equals partition enumeration on random small arms") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 1000; ++i) {
        const Count n = std::uniform_int_distribution<Count>(1, 12)(rng);
        const Count y = std::uniform_int_distribution<Count>(0, n)(rng);
        const Count z = std::uniform_int_distribution<Count>(0, n)(rng);
        const Count m = std::uniform_int_distribution<Count>(0, std::min(y, z))(rng);
        const ArmRecord arm{ArmRole::Control, n, y, z, m, 1.0};
        const CategoryProbs p{random_simplex(rng)};
        const double expected = oracle::enumerate_arm_probability(arm, p.p);
        REQUIRE(rel_err(std::exp(log_likelihood_arm(arm, p)), expected) <= 1e-10);
    }
}

TEST_CASE("arm likelihood sums to one over all observable outcomes") {
    std::mt19937_64 rng(19);
    for (Count n = 1; n <= 8; ++n) {
        const CategoryProbs p{random_simplex(rng)};
        double total = 0.0;
        for (Count y = 0; y <= n; ++y)
            for (Count z = 0; z <= n; ++z)
                for (Count m = 0; m <= std::min(y, z); ++m)
                    total += std::exp(log_likelihood_arm({ArmRole::Control, n, y, z, m, 1.0}, p));
        REQUIRE(std::abs(total - 1.0) <= 1e-10);
    }
}
