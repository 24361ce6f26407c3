#pragma once

#include "aemeta/core_data.hpp"
#include "aemeta/event_model.hpp"
#include "aemeta/mixture_prior.hpp"
#include "aemeta/priors.hpp"
#include "aemeta/sampler.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aemeta {

enum class EffectStructure { CommonEffect, RandomEffects };
enum class Anchor { Control, Treatment };
enum class Borrowing { None, NonStratified, Stratified };
/// Sampling coordinates of hierarchical normal quantities: the values
/// themselves, or their standardized offsets (x - location) / scale.
enum class Parameterization { Centered, NonCentered };

std::string_view to_string(EffectStructure e);
std::string_view to_string(Anchor a);
std::string_view to_string(Borrowing b);
std::string_view to_string(Parameterization p);

/// Names of the global parameters that may carry a prior.
inline constexpr std::string_view kGlobalParameters[] = {"phi", "eta",    "q0",  "q1",     "nu1",
                                                         "sigma1", "nu2", "sigma2", "nu3", "sigma3"};

struct ModelSpec {
    EffectStructure effect = EffectStructure::CommonEffect;
    Anchor anchor = Anchor::Control;
    Borrowing borrowing = Borrowing::None;
    Parameterization parameterization = Parameterization::NonCentered;
    /// Overrides of the default priors, keyed by global parameter name.
    std::map<std::string, PriorSpec> priors;
    /// NonStratified: blocks over hyperparameters (nu*, sigma*).
    /// Stratified: one-dimensional blocks named log_lambda0, log_mu0, log_mu1.
    std::vector<MixturePrior> map_priors;

    bool operator==(const ModelSpec&) const = default;
};

/// Throws ConfigError for unknown prior names, priors whose support does not
/// match the parameter, an eta prior on a common-effect model, and MAP
/// blocks that do not fit the borrowing mode.
void check_model_spec(const ModelSpec& spec);

/// Prior in force for a global parameter: the override if present, otherwise
/// the default (Normal(0,100^2) for nu, HalfNormal(100) for sigma, Beta(0.5,0.5)
/// for q, Cauchy(0,0.37) for phi, HalfNormal(0.5) for eta with fewer than 10
/// main trials and HalfNormal(100) otherwise).
PriorSpec effective_prior(const ModelSpec& spec, std::string_view name, std::size_t main_trials);

/// Weakly informative hyperpriors used for the rosiglitazone analyses.
void apply_rosiglitazone_preset(ModelSpec& spec);

nlohmann::json model_spec_to_json(const ModelSpec& spec);
/// Reads a model configuration (schema_version 1). Throws ConfigError.
ModelSpec model_spec_from_json(const nlohmann::json& j);
ModelSpec load_model_spec(const std::string& path);

/// Short label such as "RE, control-anchored, non-stratified MAP".
std::string describe(const ModelSpec& spec);

enum class Transform { Identity, Log, Logit };

/// Joint posterior of the common-effect or random-effects model.
///
/// Parameters with a PointMass prior are not sampled. A scale sigma_k fixed
/// at zero ties the matching trial-level parameters to nu_k, and eta fixed at
/// zero ties every phi[i] to phi, which makes the random-effects model
/// coincide with the common-effect one.
///
/// Quantity order: globals in kGlobalParameters order (absent ones skipped),
/// then per main trial the anchored log event rate, log_mu0, log_mu1 and
/// phi[i] (random effects), then per historical trial log_lambda0, log_mu0.
class PosteriorModel {
public:
    /// Throws ConfigError when the specification or the data are invalid, or
    /// when historical trials are combined with MAP borrowing or treatment
    /// anchoring.
    PosteriorModel(ModelSpec spec, Dataset data);

    /// Model of the historical trials alone: log_lambda0 and log_mu0 per trial
    /// under nu1/sigma1 and nu2/sigma2, with q0. Main trials are ignored.
    static PosteriorModel historical_only(ModelSpec spec, Dataset data);

    std::size_t dimension() const { return coord_names_.size(); }
    const std::vector<std::string>& parameter_names() const { return coord_names_; }
    const std::vector<std::string>& quantity_names() const { return quantity_names_; }
    std::optional<std::size_t> quantity_index(std::string_view name) const;

    std::vector<double> to_unconstrained(std::span<const double> quantities) const;
    struct Decoded {
        std::vector<double> quantities;
        double log_jacobian = 0.0;
    };
    Decoded from_unconstrained(std::span<const double> v) const;
    std::vector<double> constrained(std::span<const double> v) const { return from_unconstrained(v).quantities; }

    /// log Jacobian + log priors + log likelihood. Throws DomainError on a
    /// dimension mismatch; -inf is a legal result.
    double log_posterior(std::span<const double> v) const;
    double log_prior(std::span<const double> v) const;  // includes the Jacobian
    double log_likelihood(std::span<const double> v) const;
    /// log_posterior(v), with its gradient written to `grad`. Returns -inf
    /// (gradient unspecified) where the density or gradient is not finite.
    double log_posterior_gradient(std::span<const double> v, std::span<double> grad) const;

    /// Rates of every modelled arm, in dataset order.
    std::vector<RateParams> arm_rates(std::span<const double> v) const;

    /// Prior medians on the unconstrained scale plus Normal(0, jitter^2) noise.
    std::vector<double> initial_point(Engine& rng, double jitter = 1.0) const;

    /// Label of the first term of the log posterior that is not finite at v,
    /// or an empty string.
    std::string first_nonfinite_block(std::span<const double> v) const;

    std::vector<ScaleGroup> scale_groups() const;

    /// Sampler adaptor; references *this, which must outlive the result.
    Target target() const;

    const ModelSpec& spec() const { return spec_; }
    const Dataset& dataset() const { return data_; }
    /// Main trials in dataset order, with the name of their phi[i] quantity
    /// (phi itself under the common-effect model).
    std::vector<std::pair<std::string, std::string>> trial_effects() const;

private:
    PosteriorModel(ModelSpec spec, Dataset data, bool historical_only);

    enum class Kind { Sampled, Fixed, Tied };
    struct Quantity {
        std::string name;
        Transform transform = Transform::Identity;
        Kind kind = Kind::Sampled;
        int coord = -1;
        double value = 0.0;
        int tied_to = -1;
        // Prior: a PriorSpec, membership of a MAP block, or a hierarchical
        // normal with location/scale quantities.
        std::optional<PriorSpec> prior;
        int block = -1;
        int loc = -1;
        int scale = -1;
        // Sampled as (x - loc) / scale.
        bool non_centered = false;
    };
    struct ModelArm {
        ArmKernel kernel;
        double tau;
        int log_lambda;
        int phi = -1;
        double sign = 0.0;
        int log_mu;
        int q;
        std::string label;
    };
    struct Block {
        std::size_t prior;  // index into spec_.map_priors
        std::vector<int> members;
    };

    int add(Quantity q);
    int add_global(std::string_view name, Transform tr, std::size_t main_trials);
    int add_trial_level(const std::string& name, int loc, int scale, std::string_view strat_block);
    void fill_values(std::span<const double> v, std::vector<double>& vals, double* log_jac) const;
    double evaluate(std::span<const double> v, bool prior, bool likelihood, std::string* failing) const;

    ModelSpec spec_;
    Dataset data_;
    bool historical_only_ = false;
    std::vector<Quantity> q_;
    std::vector<std::string> quantity_names_;
    std::vector<std::string> coord_names_;
    std::vector<int> coord_quantity_;
    std::vector<Block> blocks_;
    std::vector<ModelArm> arms_;
    std::vector<std::pair<std::string, std::string>> trial_effects_;
    std::map<std::string, int, std::less<>> index_;
    int g_phi_ = -1, g_eta_ = -1, g_q0_ = -1, g_q1_ = -1;
    int g_nu_[3] = {-1, -1, -1};
    int g_sigma_[3] = {-1, -1, -1};
};

}  // namespace aemeta
