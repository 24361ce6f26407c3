#pragma once

#include "aemeta/core_data.hpp"
#include "aemeta/diagnostics.hpp"
#include "aemeta/hier_model.hpp"
#include "aemeta/sampler.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace aemeta {

inline constexpr const char* kToolVersion = "1.0.0";

/// Everything needed to reproduce one fit.
struct FitRequest {
    Dataset data;
    ModelSpec model;  // MAP priors, when used, are already attached
    SamplerConfig sampler;
    double level = 0.95;
    std::string data_source;  // informational
};

nlohmann::json sampler_config_to_json(const SamplerConfig& config);
SamplerConfig sampler_config_from_json(const nlohmann::json& j);

nlohmann::json request_to_json(const FitRequest& request);
/// Accepts a request or a whole report (reads its "request" member).
FitRequest request_from_json(const nlohmann::json& j);

struct ForestRow {
    std::string trial_id;  // "overall" for the pooled effect
    std::string parameter;
    double median = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

struct PriorLine {
    std::string parameter;
    std::string prior;
    std::string hash;  // MAP blocks only
};

struct AnalysisReport {
    FitRequest request;
    std::string model_description;
    std::string kernel;
    Summary summary;  // every constrained quantity
    /// phi, HR (= exp(phi); quantiles are exp of the phi quantiles) and eta.
    std::vector<ParameterSummary> focus;
    std::vector<ForestRow> forest;
    std::vector<PriorLine> priors;
    int divergences = 0;
    double max_rhat = 0.0;  // over phi and eta
    bool converged = false;
};

/// Builds the model, samples and summarizes. Throws ConfigError for an
/// invalid request and InitializationError when sampling cannot start.
AnalysisReport run_fit(const FitRequest& request);

nlohmann::json report_to_json(const AnalysisReport& report);
/// Numbers of a serialized report, without re-running anything.
AnalysisReport report_from_json(const nlohmann::json& j);
std::string report_text(const AnalysisReport& report);
/// trial_id,parameter,median,lower,upper,hr_median,hr_lower,hr_upper
std::string forest_csv(const AnalysisReport& report);

}  // namespace aemeta
