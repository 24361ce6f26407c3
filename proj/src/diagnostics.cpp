#include "aemeta/diagnostics.hpp"

#include "aemeta/errors.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace aemeta {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_shape(const ChainSet& chains) {
    if (chains.size() < 2) throw DomainError("diagnostics need at least two chains");
    const auto n = chains.front().size();
    for (const auto& c : chains) {
        if (c.size() != n) throw DomainError("diagnostics need chains of equal length");
    }
    if (n < 4) throw DomainError("diagnostics need at least four draws per chain");
}

/// Splits every chain into halves, dropping the middle draw of odd chains.
ChainSet split(const ChainSet& chains) {
    ChainSet out;
    const auto n = chains.front().size();
    const auto half = n / 2;
    for (const auto& c : chains) {
        out.emplace_back(c.begin(), c.begin() + half);
        out.emplace_back(c.end() - half, c.end());
    }
    return out;
}

/// Replaces draws by normal scores of their pooled ranks (average ranks for ties).
ChainSet rank_normalize(const ChainSet& chains) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t m = 0; m < chains.size(); ++m)
        for (std::size_t i = 0; i < chains[m].size(); ++i) all.push_back({chains[m][i], m * chains[m].size() + i});
    std::sort(all.begin(), all.end());
    const double S = static_cast<double>(all.size());
    const boost::math::normal_distribution<double> std_normal;
    ChainSet out = chains;
    const auto n = chains.front().size();
    for (std::size_t a = 0; a < all.size();) {
        std::size_t b = a;
        while (b < all.size() && all[b].first == all[a].first) ++b;
        const double rank = 0.5 * static_cast<double>(a + 1 + b);  // average of ranks a+1..b
        const double z = boost::math::quantile(std_normal, (rank - 0.375) / (S + 0.25));
        for (std::size_t k = a; k < b; ++k) out[all[k].second / n][all[k].second % n] = z;
        a = b;
    }
    return out;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double var_of(const std::vector<double>& v, double mean) {
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s / static_cast<double>(v.size() - 1);
}

double rhat_basic(const ChainSet& chains) {
    const auto M = static_cast<double>(chains.size());
    const auto N = static_cast<double>(chains.front().size());
    std::vector<double> means;
    double W = 0.0;
    for (const auto& c : chains) {
        means.push_back(mean_of(c));
        W += var_of(c, means.back());
    }
    W /= M;
    const double grand = mean_of(means);
    double B = 0.0;
    for (double m : means) B += (m - grand) * (m - grand);
    B *= N / (M - 1.0);
    if (!(W > 0.0)) return B > 0.0 ? std::numeric_limits<double>::infinity() : kNaN;
    const double var_plus = (N - 1.0) / N * W + B / N;
    return std::sqrt(var_plus / W);
}

std::optional<double> ess_of(const ChainSet& chains) {
    const auto M = chains.size();
    const auto N = chains.front().size();
    const double Nd = static_cast<double>(N);
    std::vector<double> means(M), vars(M);
    for (std::size_t m = 0; m < M; ++m) {
        means[m] = mean_of(chains[m]);
        vars[m] = var_of(chains[m], means[m]);
    }
    const double W = mean_of(vars);
    const double grand = mean_of(means);
    double B = 0.0;
    for (double mm : means) B += (mm - grand) * (mm - grand);
    B *= Nd / (static_cast<double>(M) - 1.0);
    const double var_plus = (Nd - 1.0) / Nd * W + B / Nd;
    if (!(var_plus > 0.0) || !(W > 0.0)) return std::nullopt;

    // Mean over chains of the biased autocovariance at lag t.
    auto mean_acov = [&](std::size_t t) {
        double total = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            const auto& c = chains[m];
            double s = 0.0;
            for (std::size_t i = 0; i + t < N; ++i) s += (c[i] - means[m]) * (c[i + t] - means[m]);
            total += s / Nd;
        }
        return total / static_cast<double>(M);
    };
    auto rho = [&](std::size_t t) { return 1.0 - (W - mean_acov(t)) / var_plus; };

    // Paired sums Gamma_k = rho_{2k} + rho_{2k+1}, kept while positive and
    // forced non-increasing.
    double sum_pairs = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; 2 * k + 1 < N; ++k) {
        const double r0 = k == 0 ? 1.0 : rho(2 * k);
        double pair = r0 + rho(2 * k + 1);
        if (!(pair > 0.0)) break;
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        sum_pairs += pair;
    }
    const double tau = std::max(-1.0 + 2.0 * sum_pairs, 1.0 / std::log10(static_cast<double>(M) * Nd));
    return static_cast<double>(M) * Nd / tau;
}

bool all_equal(const ChainSet& chains) {
    const double first = chains.front().front();
    for (const auto& c : chains)
        for (double x : c)
            if (x != first) return false;
    return true;
}

}  // namespace

double split_rhat(const ChainSet& chains) {
    require_shape(chains);
    if (all_equal(chains)) return kNaN;
    const auto s = split(chains);
    const double bulk = rhat_basic(rank_normalize(s));
    std::vector<double> pooled;
    for (const auto& c : s) pooled.insert(pooled.end(), c.begin(), c.end());
    std::sort(pooled.begin(), pooled.end());
    const double med = quantile_sorted(pooled, 0.5);
    ChainSet folded = s;
    for (auto& c : folded)
        for (auto& x : c) x = std::abs(x - med);
    const double tail = rhat_basic(rank_normalize(folded));
    if (std::isnan(tail)) return bulk;
    return std::max(bulk, tail);
}

std::optional<double> ess_bulk(const ChainSet& chains) {
    require_shape(chains);
    if (all_equal(chains)) return std::nullopt;
    return ess_of(rank_normalize(split(chains)));
}

std::optional<double> ess_basic(const ChainSet& chains) {
    require_shape(chains);
    if (all_equal(chains)) return std::nullopt;
    return ess_of(split(chains));
}

std::vector<ParameterDiagnostics> diagnostics(const PosteriorDraws& draws) {
    std::vector<ParameterDiagnostics> out;
    for (const auto& name : draws.constrained_names) {
        const auto chains = draws.by_chain(name);
        out.push_back({name, split_rhat(chains), ess_bulk(chains)});
    }
    return out;
}

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw DomainError("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

Interval equal_tailed_interval(std::vector<double> draws, double level) {
    if (!(level > 0.0 && level < 1.0)) throw DomainError("interval level must lie in (0,1)");
    if (draws.empty()) throw DomainError("interval of an empty sample");
    std::sort(draws.begin(), draws.end());
    const double alpha = 1.0 - level;
    if (static_cast<double>(draws.size()) * alpha / 2.0 < 1.0) return {draws.front(), draws.back(), true};
    return {quantile_sorted(draws, alpha / 2.0), quantile_sorted(draws, 1.0 - alpha / 2.0), false};
}

const ParameterSummary* Summary::find(const std::string& name) const {
    for (const auto& p : parameters)
        if (p.name == name) return &p;
    return nullptr;
}

ParameterSummary summarize_chains(const std::string& name, const ChainSet& chains, double level) {
    ParameterSummary s;
    s.name = name;
    std::vector<double> pooled;
    for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
    if (pooled.empty()) throw DomainError("summary of an empty sample");
    s.mean = mean_of(pooled);
    s.sd = pooled.size() > 1 ? std::sqrt(var_of(pooled, s.mean)) : 0.0;
    const auto iv = equal_tailed_interval(pooled, level);
    s.lower = iv.lower;
    s.upper = iv.upper;
    s.insufficient_draws = iv.insufficient_draws;
    std::sort(pooled.begin(), pooled.end());
    s.median = quantile_sorted(pooled, 0.5);
    if (chains.size() >= 2 && chains.front().size() >= 4) {
        s.rhat = split_rhat(chains);
        s.ess_bulk = ess_bulk(chains);
    } else {
        s.rhat = kNaN;
    }
    return s;
}

Summary summarize(const PosteriorDraws& draws, double level, const std::vector<std::string>& only) {
    if (!(level > 0.0 && level < 1.0)) throw DomainError("summary level must lie in (0,1)");
    Summary out;
    out.level = level;
    const auto& names = only.empty() ? draws.constrained_names : only;
    for (const auto& name : names) out.parameters.push_back(summarize_chains(name, draws.by_chain(name), level));
    return out;
}

}  // namespace aemeta
