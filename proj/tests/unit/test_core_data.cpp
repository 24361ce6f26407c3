#include "aemeta/core_data.hpp"
#include "aemeta/errors.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <string>

using namespace aemeta;

namespace {

Dataset single_arm_dataset(ArmRecord arm) {
    Dataset ds;
    ds.trials.push_back({"t1", std::nullopt, {arm}, false});
    return ds;
}

bool has_rule(const std::vector<Violation>& v, const std::string& rule) {
    return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.rule == rule; });
}

Dataset random_dataset(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ntrials(1, 6);
    std::uniform_int_distribution<Count> nn(1, 500);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::bernoulli_distribution coin(0.3);
    auto arm = [&](ArmRole role) {
        ArmRecord a;
        a.role = role;
        a.n = nn(rng);
        a.y = std::uniform_int_distribution<Count>(0, a.n)(rng);
        a.z = std::uniform_int_distribution<Count>(0, a.n)(rng);
        a.m = std::uniform_int_distribution<Count>(0, std::min(a.y, a.z))(rng);
        // Mix short decimals with full-precision reals.
        a.tau = coin(rng) ? std::round(u(rng) * 1000.0) / 10.0 + 0.1 : std::exp(6.0 * u(rng) - 3.0);
        return a;
    };
    Dataset ds;
    ds.time_unit = coin(rng) ? "months" : "years";
    ds.provenance = coin(rng) ? "" : "line one\nline, two with \"quotes\"";
    const int k = ntrials(rng);
    for (int i = 0; i < k; ++i) {
        TrialRecord t;
        t.trial_id = (i % 2 == 0) ? "T" + std::to_string(i) : "study, " + std::to_string(i);
        if (coin(rng)) t.indication = "ind" + std::to_string(i % 3);
        t.historical = i > 0 && coin(rng);
        if (t.historical) {
            t.arms.push_back(arm(ArmRole::Control));
        } else {
            t.arms.push_back(arm(ArmRole::Treatment));
            t.arms.push_back(arm(ArmRole::Control));
        }
        ds.trials.push_back(std::move(t));
    }
    return ds;
}

}  // namespace

TEST_CASE("validate accepts the first oncology treatment arm") {
    const auto v = validate(single_arm_dataset({ArmRole::Treatment, 400, 5, 65, 0, 30.0}));
    // Only the trial-structure rule fires for a one-arm trial.
    REQUIRE(std::none_of(v.begin(), v.end(), [](const Violation& x) { return x.arm_index.has_value(); }));
    REQUIRE(validate_arm({ArmRole::Treatment, 400, 5, 65, 0, 30.0}).empty());
}

TEST_CASE("validate flags m exceeding min(y, z)") {
    const auto v = validate_arm({ArmRole::Control, 10, 3, 2, 4, 1.0}, "t", 0);
    REQUIRE(has_rule(v, "m > min(y,z)"));
    REQUIRE(v.front().trial_id == "t");
    REQUIRE(v.front().arm_index == 0u);
}

TEST_CASE("validate accepts an arm whose latent range collapses to one value") {
    REQUIRE(validate_arm({ArmRole::Control, 5, 5, 5, 0, 1.0}).empty());
}

TEST_CASE("validate reports structural and dataset-level rules") {
    Dataset ds;
    ds.trials.push_back({"h1", std::nullopt, {{ArmRole::Control, 10, 1, 1, 0, 1.0}}, true});
    ds.trials.push_back({"h1", std::nullopt, {{ArmRole::Treatment, 10, 1, 1, 0, 1.0}}, true});
    const auto v = validate(ds);
    REQUIRE(has_rule(v, "no non-historical trial"));
    REQUIRE(has_rule(v, "duplicate trial_id"));
    REQUIRE(has_rule(v, "historical trial has a treatment arm"));
    for (const auto& x : v) REQUIRE_FALSE(x.describe().empty());
}

TEST_CASE("validate is total on arbitrary count combinations") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<Count> c(-3, 12);
    std::uniform_real_distribution<double> t(-1.0, 2.0);
    for (int i = 0; i < 2000; ++i) {
        Dataset ds = single_arm_dataset({ArmRole::Control, c(rng), c(rng), c(rng), c(rng), t(rng)});
        REQUIRE_NOTHROW(validate(ds));
    }
}

TEST_CASE("bundled oncology CSV parses to nine trials") {
    const auto ds = load_dataset(AEMETA_DATA_DIR "/oncology.csv");
    REQUIRE(ds.trials.size() == 9);
    REQUIRE(ds.arm_count() == 18);
    REQUIRE(ds.historical_trial_count() == 0);
    REQUIRE(ds.time_unit == "months");
    REQUIRE(validate(ds).empty());
    const auto& t1 = ds.trials.front();
    REQUIRE(t1.arms[0] == ArmRecord{ArmRole::Treatment, 400, 5, 65, 0, 30.0});
    REQUIRE(t1.arms[1].tau == 20.0);
}

TEST_CASE("parse errors name their location") {
    REQUIRE_THROWS_WITH(parse_dataset("", DataFormat::Csv), "no header");
    REQUIRE_THROWS_WITH(parse_dataset("# only a comment\n", DataFormat::Csv), "no header");
    REQUIRE_THROWS_WITH(parse_dataset("trial,n\n", DataFormat::Csv), Catch::Matchers::ContainsSubstring("line 1"));

    const std::string header = "trial_id,indication,arm_role,historical,n,y,z,m,tau\n";
    try {
        parse_dataset(header + "a,,control,false,10,1.5,2,0,1\na,,treatment,false,10,1,2,0,0\n", DataFormat::Csv);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(e.issues().size() == 2);
        REQUIRE_THAT(e.issues()[0], Catch::Matchers::StartsWith("line 2") && Catch::Matchers::ContainsSubstring("y"));
        REQUIRE_THAT(e.issues()[1], Catch::Matchers::StartsWith("line 3") && Catch::Matchers::ContainsSubstring("tau"));
    }
    REQUIRE_THROWS_AS(parse_dataset("{\"trials\": [{\"trial_id\": 3}]}", DataFormat::Json), ParseError);
    REQUIRE_THROWS_AS(parse_dataset("{not json", DataFormat::Json), ParseError);
}

TEST_CASE("historical-only CSV parses but fails validation") {
    const auto ds = parse_dataset(
        "trial_id,indication,arm_role,historical,n,y,z,m,tau\nh1,,control,true,50,2,4,0,1\nh2,,control,true,60,1,3,0,1\n",
        DataFormat::Csv);
    REQUIRE(has_rule(validate(ds), "no non-historical trial"));
}

TEST_CASE("serialization round trips random valid datasets exactly") {
    std::mt19937_64 rng(20240611);
    for (int i = 0; i < 300; ++i) {
        const auto ds = random_dataset(rng);
        REQUIRE(validate(ds).empty());
        for (auto fmt : {DataFormat::Csv, DataFormat::Json}) {
            const auto text = serialize_dataset(ds, fmt);
            const auto back = parse_dataset(text, fmt);
            REQUIRE(back == ds);
            REQUIRE(serialize_dataset(back, fmt) == text);
        }
    }
}
