#include "aemeta/event_model.hpp"

#include "aemeta/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace aemeta {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// (1 - exp(-x)) / x, exact at and near zero.
double relative_decay(double x) {
    if (x == 0.0) return 1.0;
    return -std::expm1(-x) / x;
}

// Scaled category-3 mass D(a, b) = b * (relative_decay(b) - relative_decay(a + b))
// with a = lambda * tau, b = mu * tau. For small a + b the difference is
// expanded as a*b * sum_{k>=2} (-1)^k h_{k-2}(s, b) / k!, where h_j is the
// complete homogeneous polynomial of degree j in (s, b); this has no
// cancellation. Otherwise D = (a/s) * [(1 - e^-b) - b e^-b relative_decay(a)],
// whose bracket is well conditioned once s > 1.
double category3_mass(double a, double b) {
    const double s = a + b;
    if (a == 0.0 || b == 0.0) return 0.0;
    if (s <= 1.0) {
        double h = 1.0;        // h_0
        double b_pow = 1.0;    // b^j
        double inv_fact = 0.5; // 1 / k!
        double sum = 0.0;
        double sign = 1.0;
        for (int k = 2; k < 40; ++k) {
            const double term = sign * h * inv_fact;
            sum += term;
            if (std::abs(term) < 1e-18 * std::abs(sum)) break;
            b_pow *= b;
            h = s * h + b_pow;
            inv_fact /= static_cast<double>(k + 1);
            sign = -sign;
        }
        return a * b * sum;
    }
    const double bracket = -std::expm1(-b) - b * std::exp(-b) * relative_decay(a);
    return (a / s) * std::max(bracket, 0.0);
}

void check_params(const RateParams& p) {
    if (!std::isfinite(p.lambda) || !std::isfinite(p.mu) || !std::isfinite(p.q) || !std::isfinite(p.tau)) {
        throw DomainError("category_probs: non-finite parameter");
    }
    if (p.lambda < 0.0 || p.mu < 0.0) throw DomainError("category_probs: negative rate");
    if (p.q < 0.0 || p.q > 1.0) throw DomainError("category_probs: q outside [0,1]");
    if (p.tau <= 0.0) throw DomainError("category_probs: tau must be positive");
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

}  // namespace

CategoryProbs category_probs(const RateParams& params) {
    check_params(params);
    const double a = params.lambda * params.tau;
    const double b = params.mu * params.tau;
    const double s = a + b;
    const double q = params.q;
    const double decay = relative_decay(s);
    CategoryProbs out;
    out.p[0] = q * a * decay;
    out.p[1] = (1.0 - q) * (-std::expm1(-a)) * std::exp(-b);
    out.p[2] = (1.0 - q) * category3_mass(a, b);
    out.p[3] = std::exp(-s);
    out.p[4] = b * decay;
    return out;
}

std::array<double, 5> category_log_probs(const RateParams& params) {
    check_params(params);
    const double a = params.lambda * params.tau;
    const double b = params.mu * params.tau;
    const double s = a + b;
    const double log_decay = std::log(relative_decay(s));
    const double log_q = safe_log(params.q);
    const double log_1mq = params.q < 1.0 ? std::log1p(-params.q) : kNegInf;
    std::array<double, 5> out;
    out[0] = log_q + safe_log(a) + log_decay;
    out[1] = log_1mq + safe_log(-std::expm1(-a)) - b;
    out[2] = log_1mq + safe_log(category3_mass(a, b));
    out[3] = -s;
    out[4] = safe_log(b) + log_decay;
    return out;
}

CategoryLogProbGradient category_log_prob_gradient(const RateParams& params) {
    CategoryLogProbGradient g;
    g.log_probs = category_log_probs(params);
    const double a = params.lambda * params.tau;
    const double b = params.mu * params.tau;
    const double s = a + b;
    const double q = params.q;
    // d/ds log relative_decay(s) = 1/expm1(s) - 1/s.
    const double ds = s < 1e-4 ? -0.5 + s / 12.0 : 1.0 / std::expm1(s) - 1.0 / s;
    const double a_over = a < 1e-12 ? 1.0 : a / std::expm1(a);  // a d/da log(1 - e^-a)

    g.d_log_lambda = {1.0 + a * ds, a_over, 0.0, -a, a * ds};
    g.d_log_mu = {b * ds, -b, 0.0, -b, 1.0 + b * ds};
    g.d_q = {q > 0.0 ? 1.0 / q : 0.0, q < 1.0 ? -1.0 / (1.0 - q) : 0.0, q < 1.0 ? -1.0 / (1.0 - q) : 0.0, 0.0,
             0.0};
    // Category 3: forward differences of log D in log a and log b; the
    // sampler only needs the gradient to a few digits.
    if (a > 0.0 && b > 0.0 && std::isfinite(g.log_probs[2])) {
        constexpr double h = 1e-6;
        const double eh = std::exp(h);
        const double log_d = g.log_probs[2] - std::log1p(-q);
        g.d_log_lambda[2] = (std::log(category3_mass(a * eh, b)) - log_d) / h;
        g.d_log_mu[2] = (std::log(category3_mass(a, b * eh)) - log_d) / h;
    }
    return g;
}

FeasibleRange feasible_range(const ArmRecord& arm) {
    return {std::max<Count>(0, arm.y + arm.z - arm.m - arm.n), std::min(arm.y - arm.m, arm.z - arm.m)};
}

std::array<Count, 5> complete_counts(const ArmRecord& arm, Count r) {
    const auto range = feasible_range(arm);
    if (r < range.r1 || r > range.r2) {
        throw DomainError("complete_counts: r=" + std::to_string(r) + " outside [" + std::to_string(range.r1) +
                          ", " + std::to_string(range.r2) + "]");
    }
    std::array<Count, 5> w;
    w[0] = arm.m;
    w[2] = r;
    w[1] = arm.y - w[0] - w[2];
    w[4] = arm.z - w[0] - w[2];
    w[3] = arm.n - w[0] - w[1] - w[2] - w[4];
    return w;
}

ArmKernel::ArmKernel(const ArmRecord& arm) : arm_(arm), range_(feasible_range(arm)) {
    if (!validate_arm(arm).empty() || range_.r1 > range_.r2) {
        throw DomainError("ArmKernel: arm record violates count constraints");
    }
    log_prefactor_ = std::lgamma(static_cast<double>(arm.n) + 1.0) - std::lgamma(static_cast<double>(arm.m) + 1.0);
    base_ = complete_counts(arm, range_.r1);
    log_denom_.reserve(static_cast<std::size_t>(range_.r2 - range_.r1 + 1));
    for (Count r = range_.r1; r <= range_.r2; ++r) {
        const auto w = complete_counts(arm, r);
        double d = 0.0;
        for (int s = 1; s < 5; ++s) d -= std::lgamma(static_cast<double>(w[s]) + 1.0);
        log_denom_.push_back(d);
    }
}

double ArmKernel::log_likelihood(const std::array<double, 5>& lp) const {
    std::array<double, 5> unused;
    return log_likelihood(lp, unused);
}

double ArmKernel::log_likelihood(const std::array<double, 5>& lp, std::array<double, 5>& expected) const {
    expected.fill(0.0);
    // Zero counts contribute nothing even when the probability is zero.
    auto weighted = [](Count c, double logp) { return c == 0 ? 0.0 : static_cast<double>(c) * logp; };

    const double fatal = weighted(arm_.m, lp[0]);
    if (fatal == kNegInf) return kNegInf;

    const bool finite = std::isfinite(lp[1]) && std::isfinite(lp[2]) && std::isfinite(lp[3]) && std::isfinite(lp[4]);
    const std::size_t terms = log_denom_.size();
    double max_term = kNegInf;
    std::size_t arg_max = 0;
    thread_local std::vector<double> scratch;
    scratch.resize(terms);
    if (finite) {
        const double base = static_cast<double>(base_[1]) * lp[1] + static_cast<double>(base_[2]) * lp[2] +
                            static_cast<double>(base_[3]) * lp[3] + static_cast<double>(base_[4]) * lp[4];
        const double step = lp[2] + lp[3] - lp[1] - lp[4];
        for (std::size_t k = 0; k < terms; ++k) {
            scratch[k] = log_denom_[k] + base + static_cast<double>(k) * step;
            if (scratch[k] > max_term) {
                max_term = scratch[k];
                arg_max = k;
            }
        }
    } else {
        for (std::size_t k = 0; k < terms; ++k) {
            const auto kk = static_cast<Count>(k);
            const double t = log_denom_[k] + weighted(base_[1] - kk, lp[1]) + weighted(base_[2] + kk, lp[2]) +
                             weighted(base_[3] + kk, lp[3]) + weighted(base_[4] - kk, lp[4]);
            scratch[k] = t;
            max_term = std::max(max_term, t);
        }
    }
    if (max_term == kNegInf) return kNegInf;
    double sum = 0.0;
    double mean_k = 0.0;
    auto add = [&](std::size_t k) {
        const double w = std::exp(scratch[k] - max_term);
        sum += w;
        mean_k += w * static_cast<double>(k);
        return w;
    };
    if (finite) {
        // The terms are log-concave in k, so they fall off monotonically on
        // both sides of the largest; stop once they are below 1e-17 of it.
        constexpr double kCut = 1e-17;
        for (std::size_t k = arg_max; k < terms && add(k) > kCut; ++k) {
        }
        for (std::size_t k = arg_max; k-- > 0 && add(k) > kCut;) {
        }
    } else {
        for (std::size_t k = 0; k < terms; ++k) add(k);
    }
    mean_k /= sum;
    expected[0] = static_cast<double>(arm_.m);
    expected[1] = static_cast<double>(base_[1]) - mean_k;
    expected[2] = static_cast<double>(base_[2]) + mean_k;
    expected[3] = static_cast<double>(base_[3]) + mean_k;
    expected[4] = static_cast<double>(base_[4]) - mean_k;
    return log_prefactor_ + fatal + max_term + std::log(sum);
}

double log_likelihood_arm(const ArmRecord& arm, const CategoryProbs& probs) {
    std::array<double, 5> lp;
    for (int s = 0; s < 5; ++s) lp[s] = safe_log(probs.p[s]);
    return ArmKernel(arm).log_likelihood(lp);
}

double log_likelihood_dataset(const Dataset& dataset, std::span<const RateParams> rates) {
    if (rates.size() != dataset.arm_count()) {
        throw DomainError("log_likelihood_dataset: expected " + std::to_string(dataset.arm_count()) +
                          " rate sets, got " + std::to_string(rates.size()));
    }
    double total = 0.0;
    std::size_t k = 0;
    for (const auto& t : dataset.trials) {
        for (const auto& a : t.arms) {
            total += ArmKernel(a).log_likelihood(category_log_probs(rates[k++]));
        }
    }
    return total;
}

}  // namespace aemeta
