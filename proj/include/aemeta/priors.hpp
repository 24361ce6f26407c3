#pragma once

#include "aemeta/rng.hpp"

#include <json.hpp>

#include <string>
#include <variant>
#include <vector>

namespace aemeta {

struct NormalPrior {
    double mean = 0.0;
    double sd = 1.0;

    bool operator==(const NormalPrior&) const = default;
};

struct HalfNormalPrior {
    double scale = 1.0;

    bool operator==(const HalfNormalPrior&) const = default;
};

struct CauchyPrior {
    double location = 0.0;
    double scale = 1.0;

    bool operator==(const CauchyPrior&) const = default;
};

struct BetaPrior {
    double a = 1.0;
    double b = 1.0;

    bool operator==(const BetaPrior&) const = default;
};

struct NormalMixturePrior {
    struct Component {
        double weight = 1.0;
        double mean = 0.0;
        double sd = 1.0;

        bool operator==(const Component&) const = default;
    };
    std::vector<Component> components;

    bool operator==(const NormalMixturePrior&) const = default;
};

/// Fixes a parameter at `value`; the parameter leaves the sampled vector.
struct PointMassPrior {
    double value = 0.0;

    bool operator==(const PointMassPrior&) const = default;
};

using PriorSpec =
    std::variant<NormalPrior, HalfNormalPrior, CauchyPrior, BetaPrior, NormalMixturePrior, PointMassPrior>;

enum class Support { Real, Positive, UnitInterval };

Support support(const PriorSpec& prior);

/// Throws ConfigError unless scales are positive, Beta shapes positive and
/// mixture weights positive and summing to one within 1e-12.
void check_prior(const PriorSpec& prior);

/// Exact log density; -inf outside the support. A point mass has log
/// density 0 at its value.
double log_prior_density(const PriorSpec& prior, double x);

/// d/dx of log_prior_density inside the support; 0 elsewhere and for point
/// masses.
double log_prior_gradient(const PriorSpec& prior, double x);

double normal_log_density(double x, double mean, double sd);

double prior_cdf(const PriorSpec& prior, double x);
double prior_quantile(const PriorSpec& prior, double p);
inline double prior_median(const PriorSpec& prior) { return prior_quantile(prior, 0.5); }

double draw_prior(const PriorSpec& prior, Engine& rng);

bool is_point_mass(const PriorSpec& prior);

/// Human-readable form, e.g. "Cauchy(0, 0.37)".
std::string describe(const PriorSpec& prior);

nlohmann::json prior_to_json(const PriorSpec& prior);
/// Throws ConfigError on unknown kinds or missing fields.
PriorSpec prior_from_json(const nlohmann::json& j);

}  // namespace aemeta
