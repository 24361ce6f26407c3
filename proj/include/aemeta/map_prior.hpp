#pragma once

#include "aemeta/core_data.hpp"
#include "aemeta/hier_model.hpp"
#include "aemeta/mixture_prior.hpp"
#include "aemeta/sampler.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace aemeta {

enum class MapMode { NonStratified, Stratified };

std::string_view to_string(MapMode m);

struct HistoricalFit {
    PosteriorDraws draws;  // draws of the historical-only model
    /// nu1, sigma1, nu2, sigma2, nu3, sigma3 per draw. The historical arms
    /// are controls, so nu3 and sigma3 are drawn from their priors.
    std::vector<std::array<double, 6>> hyper;
    /// One new-trial (log_lambda0, log_mu0, log_mu1) per hyperparameter draw.
    std::vector<std::array<double, 3>> predictive;
};

/// Fits the hierarchical model to the historical trials of `data`. Throws
/// ConfigError with "insufficient historical trials" when fewer than two are
/// present, and for treatment-anchored specifications.
HistoricalFit fit_historical(const Dataset& data, const ModelSpec& spec, const SamplerConfig& sampler);

struct MixtureFitOptions {
    std::vector<std::string> names;  // defaults to x0, x1, ...
    std::vector<BlockScale> scales;  // defaults to identity
    int restarts = 5;
    int max_iterations = 1000;
    /// EM stops once the log-likelihood changes by less than tolerance * (1 + |ll|).
    double tolerance = 1e-6;
    std::uint64_t seed = 1;
};

struct PercentileCheck {
    std::string parameter;
    std::array<double, 3> empirical{};  // 2.5%, 50%, 97.5%
    std::array<double, 3> fitted{};
    bool ok = false;
};

struct MixtureFit {
    MixturePrior prior;
    std::vector<double> bic;  // per component count 1..k_max; NaN when no restart converged
    std::size_t selected_components = 0;
    std::vector<PercentileCheck> fidelity;
    bool fidelity_ok = false;  // every percentile within 0.05 of its empirical value
    std::vector<std::string> notes;
};

/// Diagonal normal mixture fitted to `rows` (draws x dimension, on the
/// fitting scale) by EM with k-means++ starts. The component count is the
/// smallest whose BIC is within 2 of the minimum over 1..max_components
/// (max_components is capped at 4). Throws DomainError for fewer than 500
/// draws and FitError when no component count converges.
MixtureFit fit_mixture(const std::vector<std::vector<double>>& rows, std::size_t max_components,
                       const MixtureFitOptions& options = {});

struct MapSettings {
    MapMode mode = MapMode::NonStratified;
    double robust_weight = 0.5;
    std::size_t max_components = 4;
    SamplerConfig sampler;
};

struct MapResult {
    MapMode mode = MapMode::NonStratified;
    std::vector<MixturePrior> priors;
    std::vector<MixtureFit> fits;
};

/// Historical fit followed by mixture fits and robustification:
/// non-stratified gives one joint block over nu1, sigma1, nu2, sigma2;
/// stratified gives one-dimensional blocks for log_lambda0 and log_mu0.
MapResult derive_map(const Dataset& data, const ModelSpec& spec, const MapSettings& settings);

/// Returns `spec` with the MAP priors in place. Priors the blocks replace are
/// dropped. Throws ConfigError when a block does not fit the mode.
ModelSpec attach(const ModelSpec& spec, const std::vector<MixturePrior>& priors, MapMode mode);
ModelSpec attach(const ModelSpec& spec, const MixturePrior& prior, MapMode mode);

nlohmann::json map_result_to_json(const MapResult& result);
/// Reads the "mode" and "priors" members of a serialized MapResult.
MapResult map_result_from_json(const nlohmann::json& j);
MapResult load_map_file(const std::string& path);

/// Copy of `data` without historical trials.
Dataset main_trials_only(const Dataset& data);

}  // namespace aemeta
