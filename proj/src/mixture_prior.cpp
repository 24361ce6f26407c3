#include "aemeta/mixture_prior.hpp"

#include "aemeta/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace aemeta {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

std::string scale_name(BlockScale s) { return s == BlockScale::Log ? "log" : "identity"; }

BlockScale scale_from_name(const std::string& s) {
    if (s == "log") return BlockScale::Log;
    if (s == "identity") return BlockScale::Identity;
    throw ConfigError("mixture prior: unknown scale '" + s + "'");
}

}  // namespace

void MixturePrior::check() const {
    const auto d = parameters.size();
    if (d == 0) throw ConfigError("mixture prior: empty parameter block");
    if (scales.size() != d) throw ConfigError("mixture prior: scales do not match parameters");
    if (components.empty()) throw ConfigError("mixture prior: no components");
    double total = 0.0;
    for (const auto& c : components) {
        if (c.mean.size() != d || c.sd.size() != d) throw ConfigError("mixture prior: component dimension mismatch");
        if (!(std::isfinite(c.weight) && c.weight > 0.0)) throw ConfigError("mixture prior: weights must be positive");
        for (std::size_t i = 0; i < d; ++i) {
            if (!std::isfinite(c.mean[i])) throw ConfigError("mixture prior: non-finite mean");
            if (!(std::isfinite(c.sd[i]) && c.sd[i] > 0.0)) throw ConfigError("mixture prior: sd must be positive");
        }
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("mixture prior: weights must sum to 1");
    if (!(robust_weight >= 0.0 && robust_weight <= 1.0)) {
        throw ConfigError("mixture prior: robust_weight must lie in [0,1]");
    }
    if (robust_weight < 1.0 && vague.size() != d) {
        throw ConfigError("mixture prior: a robust mixture needs one vague prior per parameter");
    }
    for (const auto& v : vague) {
        check_prior(v);
        if (is_point_mass(v)) throw ConfigError("mixture prior: vague component cannot be a point mass");
    }
}

double MixturePrior::log_informative_density(std::span<const double> x) const {
    double total = kNegInf;
    for (const auto& c : components) {
        double lp = std::log(c.weight);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double t = x[i];
            if (scales[i] == BlockScale::Log) {
                if (!(t > 0.0)) return kNegInf;
                t = std::log(t);
                lp -= t;
            }
            const double z = (t - c.mean[i]) / c.sd[i];
            lp += -kLogSqrt2Pi - std::log(c.sd[i]) - 0.5 * z * z;
        }
        total = log_add(total, lp);
    }
    return total;
}

double MixturePrior::log_vague_density(std::span<const double> x) const {
    double lp = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) lp += log_prior_density(vague[i], x[i]);
    return lp;
}

double MixturePrior::log_density(std::span<const double> x) const {
    if (x.size() != parameters.size()) throw DomainError("mixture prior: dimension mismatch");
    if (robust_weight >= 1.0) return log_informative_density(x);
    if (robust_weight <= 0.0) return log_vague_density(x);
    return log_add(std::log(robust_weight) + log_informative_density(x),
                   std::log1p(-robust_weight) + log_vague_density(x));
}

double MixturePrior::log_density_gradient(std::span<const double> x, std::span<double> grad) const {
    const auto d = parameters.size();
    if (x.size() != d || grad.size() != d) throw DomainError("mixture prior: dimension mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    // Each component (informative ones and the vague product) contributes its
    // score weighted by its posterior responsibility.
    std::vector<double> log_terms;
    std::vector<std::vector<double>> scores;
    if (robust_weight > 0.0) {
        for (const auto& c : components) {
            double lp = std::log(robust_weight) + std::log(c.weight);
            std::vector<double> s(d);
            for (std::size_t i = 0; i < d; ++i) {
                double t = x[i];
                double dt = 1.0;
                if (scales[i] == BlockScale::Log) {
                    if (!(t > 0.0)) return kNegInf;
                    t = std::log(t);
                    dt = 1.0 / x[i];
                    lp -= t;
                }
                const double z = (t - c.mean[i]) / c.sd[i];
                lp += -kLogSqrt2Pi - std::log(c.sd[i]) - 0.5 * z * z;
                s[i] = -z / c.sd[i] * dt - (scales[i] == BlockScale::Log ? dt : 0.0);
            }
            log_terms.push_back(lp);
            scores.push_back(std::move(s));
        }
    }
    if (robust_weight < 1.0) {
        double lp = robust_weight > 0.0 ? std::log1p(-robust_weight) : 0.0;
        std::vector<double> s(d);
        for (std::size_t i = 0; i < d; ++i) {
            lp += log_prior_density(vague[i], x[i]);
            s[i] = log_prior_gradient(vague[i], x[i]);
        }
        log_terms.push_back(lp);
        scores.push_back(std::move(s));
    }
    const double mx = *std::max_element(log_terms.begin(), log_terms.end());
    if (mx == kNegInf) return kNegInf;
    double den = 0.0;
    for (std::size_t k = 0; k < log_terms.size(); ++k) {
        const double r = std::exp(log_terms[k] - mx);
        den += r;
        for (std::size_t i = 0; i < d; ++i) grad[i] += r * scores[k][i];
    }
    for (auto& g : grad) g /= den;
    return mx + std::log(den);
}

NormalMixturePrior MixturePrior::marginal(std::size_t d) const {
    NormalMixturePrior m;
    for (const auto& c : components) m.components.push_back({c.weight, c.mean[d], c.sd[d]});
    return m;
}

std::vector<double> MixturePrior::informative_median() const {
    std::vector<double> out;
    for (std::size_t d = 0; d < parameters.size(); ++d) {
        const double med = prior_median(marginal(d));
        out.push_back(scales[d] == BlockScale::Log ? std::exp(med) : med);
    }
    return out;
}

PriorSpec default_vague_prior(const std::string& parameter) {
    if (parameter.rfind("sigma", 0) == 0) return HalfNormalPrior{100.0};
    return NormalPrior{0.0, 100.0};
}

MixturePrior robustify(const MixturePrior& prior, double w, const std::vector<PriorSpec>& vague) {
    if (!(w >= 0.0 && w <= 1.0)) throw DomainError("robustify: weight must lie in [0,1]");
    if (w == 1.0) return prior;
    if (vague.size() != prior.dimension()) throw ConfigError("robustify: one vague prior per parameter required");
    MixturePrior out = prior;
    if (prior.robust_weight < 1.0) {
        if (prior.vague != vague) throw ConfigError("robustify: input already carries a different vague component");
        out.robust_weight = prior.robust_weight * w;
    } else {
        out.robust_weight = w;
        out.vague = vague;
    }
    out.check();
    return out;
}

MixturePrior robustify(const MixturePrior& prior, double w) {
    std::vector<PriorSpec> vague;
    for (const auto& p : prior.parameters) vague.push_back(default_vague_prior(p));
    return robustify(prior, w, vague);
}

nlohmann::json mixture_to_json(const MixturePrior& prior) {
    using nlohmann::json;
    json j;
    j["parameters"] = prior.parameters;
    json scales = json::array();
    for (auto s : prior.scales) scales.push_back(scale_name(s));
    j["scales"] = scales;
    json comps = json::array();
    for (const auto& c : prior.components) comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"sd", c.sd}});
    j["components"] = comps;
    j["robust_weight"] = prior.robust_weight;
    json vague = json::array();
    for (const auto& v : prior.vague) vague.push_back(prior_to_json(v));
    j["vague"] = vague;
    return j;
}

MixturePrior mixture_from_json(const nlohmann::json& j) {
    MixturePrior out;
    try {
        out.parameters = j.at("parameters").get<std::vector<std::string>>();
        for (const auto& s : j.at("scales")) out.scales.push_back(scale_from_name(s.get<std::string>()));
        for (const auto& c : j.at("components")) {
            out.components.push_back({c.at("weight").get<double>(), c.at("mean").get<std::vector<double>>(),
                                      c.at("sd").get<std::vector<double>>()});
        }
        out.robust_weight = j.value("robust_weight", 1.0);
        if (j.contains("vague")) {
            for (const auto& v : j.at("vague")) out.vague.push_back(prior_from_json(v));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mixture prior: ") + e.what());
    }
    out.check();
    return out;
}

std::uint64_t mixture_hash(const MixturePrior& prior) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : mixture_to_json(prior).dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace aemeta
