#pragma once

#include "aemeta/core_data.hpp"

#include <array>
#include <span>
#include <vector>

namespace aemeta {

/// Exponential event hazard `lambda`, exponential drop-out hazard `mu`,
/// probability `q` that an event is fatal, and follow-up duration `tau`.
struct RateParams {
    double lambda = 0.0;
    double mu = 0.0;
    double q = 0.0;
    double tau = 1.0;
};

/// Probabilities of the five patient-timeline categories, stored zero-based:
/// p[0] fatal event, p[1] non-fatal event then completion, p[2] non-fatal
/// event then drop-out, p[3] event-free completion, p[4] drop-out without
/// event.
struct CategoryProbs {
    std::array<double, 5> p{};

    double operator[](std::size_t s) const { return p[s]; }
};

/// Bounds on the unobserved count of category-3 patients.
struct FeasibleRange {
    Count r1 = 0;
    Count r2 = 0;

    bool operator==(const FeasibleRange&) const = default;
};

/// Closed-form category probabilities. Throws DomainError for negative or
/// non-finite rates, q outside [0,1], or non-positive tau. Exact at zero
/// rates; no division by lambda + mu is performed.
CategoryProbs category_probs(const RateParams& params);

/// Natural logs of the category probabilities, computed directly rather than
/// by taking log of the probabilities (log p[3] is exactly -(lambda+mu)tau).
std::array<double, 5> category_log_probs(const RateParams& params);

/// Log category probabilities together with their partial derivatives with
/// respect to log lambda, log mu and q.
struct CategoryLogProbGradient {
    std::array<double, 5> log_probs{};
    std::array<double, 5> d_log_lambda{};
    std::array<double, 5> d_log_mu{};
    std::array<double, 5> d_q{};
};

CategoryLogProbGradient category_log_prob_gradient(const RateParams& params);

FeasibleRange feasible_range(const ArmRecord& arm);

/// Category counts implied by a category-3 count r. Throws DomainError when r
/// lies outside feasible_range(arm).
std::array<Count, 5> complete_counts(const ArmRecord& arm, Count r);

/// Log-likelihood of one arm's aggregate counts: log of the multinomial
/// probability summed over the feasible category-3 counts. Returns -inf when
/// the data have probability zero.
double log_likelihood_arm(const ArmRecord& arm, const CategoryProbs& probs);

/// Sum of per-arm log-likelihoods in dataset order; `rates` holds one entry
/// per arm. Throws DomainError on an arity mismatch.
double log_likelihood_dataset(const Dataset& dataset, std::span<const RateParams> rates);

/// Precomputed form of one arm's likelihood for repeated evaluation inside a
/// sampler. Combinatorial terms are tabulated once per arm.
class ArmKernel {
public:
    explicit ArmKernel(const ArmRecord& arm);

    /// Log-likelihood from log category probabilities.
    double log_likelihood(const std::array<double, 5>& log_probs) const;

    /// Same value; `expected_counts` receives the category counts averaged
    /// over the feasible category-3 counts with their likelihood weights,
    /// which is the gradient of the log-likelihood in the log probabilities.
    double log_likelihood(const std::array<double, 5>& log_probs, std::array<double, 5>& expected_counts) const;

    const ArmRecord& arm() const { return arm_; }

private:
    ArmRecord arm_;
    FeasibleRange range_;
    double log_prefactor_ = 0.0;     // log n! - log m!
    std::array<Count, 5> base_{};    // category counts at r = r1
    std::vector<double> log_denom_;  // -sum log w! for each r in [r1, r2]
};

}  // namespace aemeta
