#include "aemeta/errors.hpp"
#include "aemeta/hier_model.hpp"
#include "aemeta/diagnostics.hpp"

#include <catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <boost/math/distributions/cauchy.hpp>

#include <cmath>
#include <map>
#include <random>

using namespace aemeta;
using Catch::Approx;

namespace {

ArmRecord arm(ArmRole role, Count n, Count y, Count z, Count m, double tau) { return {role, n, y, z, m, tau}; }

Dataset two_trials() {
    Dataset d;
    d.time_unit = "years";
    d.trials.push_back({"A", std::nullopt,
                        {arm(ArmRole::Control, 120, 4, 20, 1, 0.5), arm(ArmRole::Treatment, 130, 7, 25, 2, 0.5)},
                        false});
    d.trials.push_back({"B", std::nullopt,
                        {arm(ArmRole::Control, 80, 2, 9, 0, 1.0), arm(ArmRole::Treatment, 85, 5, 12, 1, 1.0)},
                        false});
    return d;
}

Dataset swap_roles(Dataset d) {
    for (auto& t : d.trials)
        for (auto& a : t.arms) a.role = a.role == ArmRole::Control ? ArmRole::Treatment : ArmRole::Control;
    return d;
}

std::vector<double> random_vector(std::size_t d, Engine& rng, double sd = 0.7) {
    std::normal_distribution<double> z(0.0, sd);
    std::vector<double> v(d);
    for (auto& x : v) x = z(rng);
    return v;
}

// Values of the sampled quantities, one per coordinate.
std::vector<double> coordinate_values(const PosteriorModel& m, std::span<const double> v) {
    const auto q = m.constrained(v);
    std::vector<double> out;
    for (const auto& name : m.parameter_names()) out.push_back(q[*m.quantity_index(name)]);
    return out;
}

Dataset oncology() { return load_dataset(std::string(AEMETA_DATA_DIR) + "/oncology.csv"); }

}  // namespace

TEST_CASE("unconstrained round trip") {
    for (auto par : {Parameterization::Centered, Parameterization::NonCentered}) {
        ModelSpec spec;
        spec.effect = EffectStructure::RandomEffects;
        spec.parameterization = par;
        const PosteriorModel m(spec, two_trials());
        auto rng = make_engine(1, {});
        for (int rep = 0; rep < 20; ++rep) {
            const auto v = random_vector(m.dimension(), rng);
            const auto q = m.constrained(v);
            const auto back = m.to_unconstrained(q);
            REQUIRE(back.size() == v.size());
            for (std::size_t i = 0; i < v.size(); ++i) CHECK(back[i] == Approx(v[i]).margin(1e-12));
            const auto q2 = m.constrained(back);
            for (std::size_t i = 0; i < q.size(); ++i) CHECK(q2[i] == Approx(q[i]).epsilon(1e-12).margin(1e-12));
        }
    }
}

TEST_CASE("logit of q = 0.5 is 0 with Jacobian log 0.25") {
    ModelSpec spec;
    spec.priors = {{"phi", PointMassPrior{0.1}},    {"nu1", PointMassPrior{-3.0}}, {"nu2", PointMassPrior{-1.0}},
                   {"nu3", PointMassPrior{-1.0}},   {"sigma1", PointMassPrior{0.0}}, {"sigma2", PointMassPrior{0.0}},
                   {"sigma3", PointMassPrior{0.0}}};
    const PosteriorModel m(spec, two_trials());
    REQUIRE(m.parameter_names() == std::vector<std::string>{"q0", "q1"});
    auto q = m.constrained(std::vector<double>{0.3, -0.2});
    q[*m.quantity_index("q0")] = 0.5;
    q[*m.quantity_index("q1")] = 0.5;
    const auto v = m.to_unconstrained(q);
    CHECK(v[0] == Approx(0.0).margin(1e-15));
    CHECK(v[1] == Approx(0.0).margin(1e-15));
    CHECK(m.from_unconstrained(v).log_jacobian == Approx(2.0 * std::log(0.25)));
}

TEST_CASE("log Jacobian matches a finite-difference determinant") {
    // Three sampled coordinates: nu1, sigma1 and one trial-level log rate.
    Dataset d = two_trials();
    d.trials.pop_back();
    for (auto par : {Parameterization::Centered, Parameterization::NonCentered}) {
        ModelSpec spec;
        spec.parameterization = par;
        spec.priors = {{"phi", PointMassPrior{0.1}},   {"q0", PointMassPrior{0.2}},     {"q1", PointMassPrior{0.3}},
                       {"nu2", PointMassPrior{-1.0}},  {"nu3", PointMassPrior{-1.0}},   {"sigma2", PointMassPrior{0.0}},
                       {"sigma3", PointMassPrior{0.0}}};
        const PosteriorModel m(spec, d);
        REQUIRE(m.dimension() == 3);
        auto rng = make_engine(2, {});
        for (int rep = 0; rep < 10; ++rep) {
            const auto v = random_vector(3, rng);
            Eigen::Matrix3d J;
            const double h = 1e-6;
            for (int c = 0; c < 3; ++c) {
                auto up = v, dn = v;
                up[c] += h;
                dn[c] -= h;
                const auto fu = coordinate_values(m, up), fd = coordinate_values(m, dn);
                for (int r = 0; r < 3; ++r) J(r, c) = (fu[r] - fd[r]) / (2 * h);
            }
            INFO(to_string(par));
            CHECK(m.from_unconstrained(v).log_jacobian == Approx(std::log(std::abs(J.determinant()))).margin(1e-6));
        }
    }
}

TEST_CASE("common-effect model with fixed hyperparameters reduces to the likelihood") {
    Dataset d = two_trials();
    d.trials.pop_back();
    ModelSpec spec;
    spec.priors = {{"phi", PointMassPrior{0.4}},   {"q0", PointMassPrior{0.2}},     {"q1", PointMassPrior{0.3}},
                   {"nu1", PointMassPrior{-3.0}},  {"nu2", PointMassPrior{-1.5}},   {"nu3", PointMassPrior{-1.2}},
                   {"sigma1", PointMassPrior{0.0}}, {"sigma2", PointMassPrior{0.0}}, {"sigma3", PointMassPrior{0.0}}};
    const PosteriorModel m(spec, d);
    REQUIRE(m.dimension() == 0);
    const std::vector<RateParams> rates = {{std::exp(-3.0), std::exp(-1.5), 0.2, 0.5},
                                           {std::exp(-3.0 + 0.4), std::exp(-1.2), 0.3, 0.5}};
    const std::vector<double> empty;
    CHECK(m.log_posterior(empty) == Approx(log_likelihood_dataset(d, rates)).epsilon(1e-13));

    // With sigma fixed above zero the trial-level rates are sampled and their
    // normal densities join the likelihood.
    spec.priors["sigma1"] = PointMassPrior{0.7};
    spec.parameterization = Parameterization::Centered;
    const PosteriorModel m2(spec, d);
    REQUIRE(m2.dimension() == 1);
    const std::vector<double> v = {-2.6};
    std::vector<RateParams> r2 = rates;
    r2[0].lambda = std::exp(-2.6);
    r2[1].lambda = std::exp(-2.6 + 0.4);
    CHECK(m2.log_posterior(v) ==
          Approx(log_likelihood_dataset(d, r2) + normal_log_density(-2.6, -3.0, 0.7)).epsilon(1e-13));
}

TEST_CASE("random effects with eta fixed at zero equal common effect") {
    ModelSpec ce;
    ModelSpec re;
    re.effect = EffectStructure::RandomEffects;
    re.priors["eta"] = PointMassPrior{0.0};
    const PosteriorModel a(ce, two_trials()), b(re, two_trials());
    REQUIRE(a.parameter_names() == b.parameter_names());
    auto rng = make_engine(3, {});
    for (int rep = 0; rep < 50; ++rep) {
        const auto v = random_vector(a.dimension(), rng);
        CHECK(b.log_posterior(v) == Approx(a.log_posterior(v)).epsilon(1e-12));
    }
}

TEST_CASE("anchoring symmetry") {
    for (auto effect : {EffectStructure::CommonEffect, EffectStructure::RandomEffects}) {
        ModelSpec ctl;
        ctl.effect = effect;
        ctl.priors = {{"phi", NormalPrior{0.2, 1.0}}, {"q0", BetaPrior{1.0, 3.0}},  {"q1", BetaPrior{2.0, 5.0}},
                      {"nu2", NormalPrior{-1.0, 1.0}}, {"nu3", NormalPrior{-2.0, 1.5}}, {"sigma2", HalfNormalPrior{0.5}},
                      {"sigma3", HalfNormalPrior{1.5}}};
        ModelSpec trt = ctl;
        trt.anchor = Anchor::Treatment;
        trt.priors = {{"phi", NormalPrior{-0.2, 1.0}}, {"q0", BetaPrior{2.0, 5.0}},  {"q1", BetaPrior{1.0, 3.0}},
                      {"nu2", NormalPrior{-2.0, 1.5}}, {"nu3", NormalPrior{-1.0, 1.0}}, {"sigma2", HalfNormalPrior{1.5}},
                      {"sigma3", HalfNormalPrior{0.5}}};
        const PosteriorModel a(ctl, two_trials()), b(trt, swap_roles(two_trials()));
        REQUIRE(a.dimension() == b.dimension());

        // Coordinate of b for every coordinate of a, and whether it flips sign.
        auto rename = [](std::string s) -> std::pair<std::string, bool> {
            auto swap = [&](const std::string& x, const std::string& y) {
                if (s.rfind(x, 0) == 0) return y + s.substr(x.size());
                if (s.rfind(y, 0) == 0) return x + s.substr(y.size());
                return std::string();
            };
            for (auto [x, y] : {std::pair{"q0", "q1"}, std::pair{"nu2", "nu3"}, std::pair{"sigma2", "sigma3"},
                                std::pair{"log_mu0", "log_mu1"}, std::pair{"log_lambda0", "log_lambda1"}}) {
                if (auto r = swap(x, y); !r.empty()) return {r, false};
            }
            return {s, s.rfind("phi", 0) == 0};
        };
        std::map<std::string, std::size_t> index_b;
        for (std::size_t i = 0; i < b.dimension(); ++i) index_b[b.parameter_names()[i]] = i;

        auto rng = make_engine(4, {});
        for (int rep = 0; rep < 30; ++rep) {
            const auto va = random_vector(a.dimension(), rng);
            std::vector<double> vb(b.dimension());
            for (std::size_t i = 0; i < va.size(); ++i) {
                const auto [name, flip] = rename(a.parameter_names()[i]);
                REQUIRE(index_b.count(name));
                vb[index_b[name]] = flip ? -va[i] : va[i];
            }
            INFO(to_string(effect));
            CHECK(b.log_posterior(vb) == Approx(a.log_posterior(va)).epsilon(1e-12));
        }
    }
}

TEST_CASE("oncology gradient is finite and matches finite differences") {
    ModelSpec spec;
    spec.effect = EffectStructure::RandomEffects;
    spec.anchor = Anchor::Treatment;
    const PosteriorModel m(spec, oncology());
    auto rng = make_engine(5, {});
    int checked = 0;
    std::vector<double> grad(m.dimension());
    while (checked < 100) {
        const auto v = m.initial_point(rng, 0.5);
        const double lp = m.log_posterior_gradient(v, grad);
        if (!std::isfinite(lp)) continue;
        ++checked;
        CHECK(lp == Approx(m.log_posterior(v)).epsilon(1e-12));
        const double h = 1e-5;
        for (std::size_t c = 0; c < v.size(); ++c) {
            auto up = v, dn = v;
            up[c] += h;
            dn[c] -= h;
            const double fd = (m.log_posterior(up) - m.log_posterior(dn)) / (2 * h);
            REQUIRE(std::isfinite(fd));
            INFO(m.parameter_names()[c]);
            CHECK(grad[c] == Approx(fd).epsilon(1e-4).margin(1e-4 * std::max(1.0, std::abs(lp) * 1e-3)));
        }
    }
}

TEST_CASE("sampling the prior alone recovers the prior of phi and eta") {
    ModelSpec spec;
    spec.effect = EffectStructure::RandomEffects;
    const PosteriorModel m(spec, two_trials());
    Target t = m.target();
    t.log_density = [&m](std::span<const double> v) { return m.log_prior(v); };
    t.log_density_gradient = {};
    SamplerConfig cfg;
    cfg.warmup = 2000;
    cfg.samples = 4000;
    cfg.seed = 6;
    const auto d = run(t, cfg);

    const boost::math::cauchy_distribution<double> phi_prior(0.0, 0.37);
    const PriorSpec eta_prior = effective_prior(spec, "eta", 2);
    for (const auto& [name, cdf] :
         std::vector<std::pair<std::string, std::function<double(double)>>>{
             {"phi", [&](double x) { return boost::math::cdf(phi_prior, x); }},
             {"eta", [&](double x) { return prior_cdf(eta_prior, x); }}}) {
        const auto chains = d.by_chain(name);
        const double ess = ess_bulk(chains).value_or(1.0);
        auto x = d.pooled(name);
        std::sort(x.begin(), x.end());
        for (double p : {0.1, 0.25, 0.5, 0.75, 0.9}) {
            INFO(name << " at " << p << " ess " << ess);
            CHECK(std::abs(cdf(quantile_sorted(x, p)) - p) < 4.0 * std::sqrt(p * (1 - p) / ess));
        }
    }
}

TEST_CASE("effective priors") {
    ModelSpec spec;
    CHECK(effective_prior(spec, "phi", 5) == PriorSpec{CauchyPrior{0.0, 0.37}});
    CHECK(effective_prior(spec, "nu2", 5) == PriorSpec{NormalPrior{0.0, 100.0}});
    CHECK(effective_prior(spec, "sigma1", 5) == PriorSpec{HalfNormalPrior{100.0}});
    CHECK(effective_prior(spec, "q1", 5) == PriorSpec{BetaPrior{0.5, 0.5}});
    CHECK(effective_prior(spec, "eta", 9) == PriorSpec{HalfNormalPrior{0.5}});
    CHECK(effective_prior(spec, "eta", 10) == PriorSpec{HalfNormalPrior{100.0}});
    apply_rosiglitazone_preset(spec);
    CHECK(effective_prior(spec, "nu1", 5) == PriorSpec{NormalPrior{-4.27, std::log(10.0)}});
    CHECK(effective_prior(spec, "sigma3", 5) == PriorSpec{HalfNormalPrior{std::log(10.0)}});
}

TEST_CASE("model configuration errors") {
    ModelSpec ce;
    ce.priors["eta"] = HalfNormalPrior{0.5};
    CHECK_THROWS_AS(check_model_spec(ce), ConfigError);

    ModelSpec bad;
    bad.priors["sigma1"] = NormalPrior{0.0, 1.0};
    CHECK_THROWS_AS(check_model_spec(bad), ConfigError);
    bad.priors = {{"gamma", NormalPrior{0.0, 1.0}}};
    CHECK_THROWS_AS(check_model_spec(bad), ConfigError);

    Dataset with_hist = two_trials();
    with_hist.trials.push_back({"H1", std::nullopt, {arm(ArmRole::Control, 50, 1, 4, 0, 0.5)}, true});
    ModelSpec trt;
    trt.anchor = Anchor::Treatment;
    CHECK_THROWS_AS(PosteriorModel(trt, with_hist), ConfigError);
    CHECK_NOTHROW(PosteriorModel(ModelSpec{}, with_hist));

    const PosteriorModel m(ModelSpec{}, two_trials());
    CHECK_THROWS_AS(m.log_posterior(std::vector<double>(m.dimension() + 1, 0.0)), DomainError);
}

TEST_CASE("model configuration JSON round trip") {
    ModelSpec spec;
    spec.effect = EffectStructure::RandomEffects;
    spec.anchor = Anchor::Treatment;
    spec.parameterization = Parameterization::Centered;
    spec.priors = {{"phi", CauchyPrior{0.0, 2.5}}, {"eta", HalfNormalPrior{0.5}}};
    const auto back = model_spec_from_json(model_spec_to_json(spec));
    CHECK(back == spec);
    CHECK(describe(spec).find("RE") != std::string::npos);
    CHECK_THROWS_AS(model_spec_from_json(nlohmann::json{{"schema_version", 99}}), ConfigError);
}
