#pragma once

#include "aemeta/priors.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace aemeta {

/// Scale on which a mixture coordinate is Gaussian. Scale parameters are
/// fitted on the log scale so the informative density has positive support.
enum class BlockScale { Identity, Log };

struct MixtureComponent {
    double weight = 1.0;
    std::vector<double> mean;
    std::vector<double> sd;

    bool operator==(const MixtureComponent&) const = default;
};

/// Diagonal normal mixture over a named block of parameters, optionally
/// robustified: density(x) = w * informative(x) + (1 - w) * prod_d vague_d(x_d).
/// The informative components' weights sum to one on their own; the
/// robust weight w scales them as a group.
struct MixturePrior {
    std::vector<std::string> parameters;
    std::vector<BlockScale> scales;
    std::vector<MixtureComponent> components;
    double robust_weight = 1.0;
    std::vector<PriorSpec> vague;  // one per parameter; empty when robust_weight == 1

    std::size_t dimension() const { return parameters.size(); }

    /// Throws ConfigError when shapes disagree, weights do not sum to one,
    /// scales are not positive or robust_weight lies outside [0,1].
    void check() const;

    /// Log density at natural-scale values x (same order as `parameters`).
    double log_density(std::span<const double> x) const;
    double log_informative_density(std::span<const double> x) const;
    double log_vague_density(std::span<const double> x) const;
    /// log_density(x), with its gradient in x written to `grad`.
    double log_density_gradient(std::span<const double> x, std::span<double> grad) const;

    /// Marginal of coordinate d on its fitted scale, ignoring the vague part.
    NormalMixturePrior marginal(std::size_t d) const;

    /// Coordinate-wise medians of the informative part on the natural scale.
    std::vector<double> informative_median() const;

    bool operator==(const MixturePrior&) const = default;
};

/// Default vague prior for a block parameter: HalfNormal(100) for scale
/// parameters (names starting with "sigma"), Normal(0, 100^2) otherwise.
PriorSpec default_vague_prior(const std::string& parameter);

/// Mixes `prior` with the vague product density at weights (w, 1 - w).
/// w == 1 returns the input unchanged. An input that is already robust is
/// accepted only if its vague part equals `vague`; the weights then compose.
MixturePrior robustify(const MixturePrior& prior, double w, const std::vector<PriorSpec>& vague);
MixturePrior robustify(const MixturePrior& prior, double w);

nlohmann::json mixture_to_json(const MixturePrior& prior);
MixturePrior mixture_from_json(const nlohmann::json& j);

/// FNV-1a over the compact JSON form; used to identify priors in reports.
std::uint64_t mixture_hash(const MixturePrior& prior);
std::string hash_hex(std::uint64_t h);

}  // namespace aemeta
