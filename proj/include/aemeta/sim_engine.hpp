#pragma once

#include "aemeta/core_data.hpp"
#include "aemeta/event_model.hpp"
#include "aemeta/hier_model.hpp"
#include "aemeta/map_prior.hpp"
#include "aemeta/rng.hpp"
#include "aemeta/sampler.hpp"

#include <json.hpp>

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace aemeta {

struct PatientOutcome {
    double x = 0.0;  // time to first event
    double c = 0.0;  // time to drop-out
    bool fatal = false;
    int category = 0;  // 1..5
};

/// Timeline category of one patient followed for tau:
/// 1 fatal event at x <= min(c, tau); 2 non-fatal event at x <= min(c, tau)
/// and c >= tau; 3 non-fatal event at x <= c, then drop-out c < tau;
/// 4 x > tau and c >= tau; 5 drop-out c < tau before any event (c < x).
/// An event and a drop-out at the same instant count as event first.
/// Throws DomainError unless x, c, tau > 0 (infinite times are allowed).
int classify_patient(double x, double c, bool fatal, double tau);

PatientOutcome simulate_patient(const RateParams& rates, Engine& rng);

/// Aggregates n simulated patients. `categories`, when given, receives the
/// per-category counts.
ArmRecord simulate_arm(const RateParams& rates, Count n, Engine& rng, ArmRole role = ArmRole::Control,
                       std::array<Count, 5>* categories = nullptr);

struct TrialDesign {
    std::string trial_id;
    std::optional<std::string> indication;
    bool historical = false;
    Count n_control = 0;
    Count n_treatment = 0;  // 0 for historical trials
    double tau_control = 1.0;
    double tau_treatment = 1.0;
};

/// True parameter values. The anchored arm's log event rate is drawn per
/// trial from Normal(anchor_log_rate_mean, anchor_log_rate_sd^2) and the
/// trial's log-HR from Normal(phi, eta^2); the other arm's rate follows.
struct GenerativeParams {
    Anchor anchor = Anchor::Control;
    double anchor_log_rate_mean = 0.0;
    double anchor_log_rate_sd = 0.0;
    double mu0 = 0.5;
    double mu1 = 0.5;
    double q0 = 0.0;
    double q1 = 0.0;
    double phi = 0.0;
    double eta = 0.0;
};

struct AnalysisSpec {
    std::string label;
    ModelSpec model;
    /// Derive a MAP prior from each replication's historical trials.
    std::optional<MapSettings> map;
    /// Fit the historical trials jointly with the main trials.
    bool include_historical = false;
};

struct ScenarioSpec {
    std::string name;
    std::string description;
    std::string time_unit;
    std::vector<TrialDesign> trials;
    GenerativeParams truth;
    int replications = 1;
    std::uint64_t seed = 1;
    double level = 0.95;
    std::vector<AnalysisSpec> analyses;
    SamplerConfig sampler;
    /// Replication workers; 0 uses the hardware count.
    int threads = 0;

    /// Throws ConfigError when an invariant fails.
    void check() const;
};

struct AnalysisResult {
    std::string label;
    int replications = 0;
    int n_failed = 0;
    int n_nonconverged = 0;  // split R-hat of phi or eta above 1.05
    double coverage = 0.0;
    double coverage_se = 0.0;
    double rejection_rate = 0.0;  // share of intervals excluding 0
    double rejection_se = 0.0;
    double mean_width = 0.0;
    double width_se = 0.0;
    std::vector<std::string> failures;  // "replication r: message"
};

struct ScenarioResult {
    std::string scenario;
    double true_phi = 0.0;
    double true_eta = 0.0;
    int replications = 0;
    std::vector<AnalysisResult> analyses;
};

/// Interval record of one fit inside a scenario run.
struct ReplicationFit {
    bool ok = false;
    std::string error;
    double lower = 0.0;
    double upper = 0.0;
    double median = 0.0;
    double rhat = 0.0;  // max over phi and eta
};

/// The dataset of replication `rep`, drawn from stream_seed(seed, {rep, 0}).
Dataset simulate_dataset(const ScenarioSpec& spec, int rep);

/// Fits analysis `a` to replication `rep`'s dataset.
ReplicationFit fit_replication(const ScenarioSpec& spec, const Dataset& data, int rep, std::size_t a);

using ProgressFn = std::function<void(int done, int total)>;

/// Runs every replication and analysis. Replications are spread over
/// `threads` workers; every random stream is addressed by (replication,
/// analysis), so results do not depend on the worker count.
ScenarioResult run_scenario(const ScenarioSpec& spec, const ProgressFn& progress = {});

/// The eight rosiglitazone-style scenarios rosi-1..rosi-8 and the eight
/// oncology scenarios onco-1..onco-8.
std::vector<ScenarioSpec> bundled_scenarios();
std::optional<ScenarioSpec> find_bundled(const std::string& name);
std::vector<std::string> bundled_names();

nlohmann::json scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const nlohmann::json& j);
ScenarioSpec load_scenario(const std::string& path);

nlohmann::json result_to_json(const ScenarioResult& result);
/// Rows "scenario,model,metric,value,mc_se" for coverage, rejection rate
/// and mean width of every analysis.
std::string results_csv(const std::vector<ScenarioResult>& results);

}  // namespace aemeta
