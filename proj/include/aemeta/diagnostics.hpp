#pragma once

#include "aemeta/sampler.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aemeta {

using ChainSet = std::vector<std::vector<double>>;

/// Rank-normalized split R-hat: the larger of the bulk value (on normal
/// scores of the pooled ranks) and the tail value (on normal scores of
/// |x - median|). NaN when every draw is identical. Needs >= 2 chains of
/// >= 4 draws; throws DomainError otherwise.
double split_rhat(const ChainSet& chains);

/// Bulk effective sample size: multi-chain ESS of the rank-normalized split
/// chains, autocorrelations summed in pairs up to the first negative pair
/// (Geyer's initial positive sequence, made monotone). Empty when the draws
/// are constant.
std::optional<double> ess_bulk(const ChainSet& chains);

/// The same estimator applied to the raw (not rank-normalized) split chains.
std::optional<double> ess_basic(const ChainSet& chains);

struct ParameterDiagnostics {
    std::string name;
    double rhat = 0.0;
    std::optional<double> ess_bulk;
};

std::vector<ParameterDiagnostics> diagnostics(const PosteriorDraws& draws);

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7): h = (n - 1) p, x[floor h] + frac(h) (x[floor h + 1] - x[floor h]).
/// `sorted` must be ascending and non-empty.
double quantile_sorted(std::span<const double> sorted, double p);

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    /// Set when fewer than one draw lies in each tail (n * (1 - level) / 2 < 1);
    /// the interval is then the sample range.
    bool insufficient_draws = false;
};

Interval equal_tailed_interval(std::vector<double> draws, double level);

struct ParameterSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double rhat = 0.0;
    std::optional<double> ess_bulk;
    bool insufficient_draws = false;
};

struct Summary {
    double level = 0.95;
    std::vector<ParameterSummary> parameters;

    const ParameterSummary* find(const std::string& name) const;
};

ParameterSummary summarize_chains(const std::string& name, const ChainSet& chains, double level);

/// Summaries of the constrained draws; `only` restricts the parameter list.
/// Throws DomainError unless 0 < level < 1.
Summary summarize(const PosteriorDraws& draws, double level = 0.95, const std::vector<std::string>& only = {});

}  // namespace aemeta
