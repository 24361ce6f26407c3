#include "aemeta/priors.hpp"

#include "aemeta/errors.hpp"

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace aemeta {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double normal_logpdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
}

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double std_normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

double mixture_cdf(const NormalMixturePrior& m, double x) {
    double c = 0.0;
    for (const auto& k : m.components) c += k.weight * std_normal_cdf((x - k.mean) / k.sd);
    return c;
}

double mixture_quantile(const NormalMixturePrior& m, double p) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    const double z = std::abs(std_normal_quantile(std::min(std::max(p, 1e-300), 1.0 - 1e-16))) + 1.0;
    for (const auto& k : m.components) {
        lo = std::min(lo, k.mean - z * k.sd);
        hi = std::max(hi, k.mean + z * k.sd);
    }
    for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo) + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (mixture_cdf(m, mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double require_number(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number()) {
        throw ConfigError(std::string("prior: missing numeric field '") + key + "'");
    }
    return j[key].get<double>();
}

}  // namespace

double normal_log_density(double x, double mean, double sd) { return normal_logpdf(x, mean, sd); }

Support support(const PriorSpec& prior) {
    return std::visit(overloaded{[](const HalfNormalPrior&) { return Support::Positive; },
                                 [](const BetaPrior&) { return Support::UnitInterval; },
                                 [](const auto&) { return Support::Real; }},
                      prior);
}

void check_prior(const PriorSpec& prior) {
    auto positive = [](double v, const char* what) {
        if (!(std::isfinite(v) && v > 0.0)) throw ConfigError(std::string(what) + " must be finite and positive");
    };
    auto finite = [](double v, const char* what) {
        if (!std::isfinite(v)) throw ConfigError(std::string(what) + " must be finite");
    };
    std::visit(overloaded{
                   [&](const NormalPrior& p) {
                       finite(p.mean, "Normal mean");
                       positive(p.sd, "Normal sd");
                   },
                   [&](const HalfNormalPrior& p) { positive(p.scale, "HalfNormal scale"); },
                   [&](const CauchyPrior& p) {
                       finite(p.location, "Cauchy location");
                       positive(p.scale, "Cauchy scale");
                   },
                   [&](const BetaPrior& p) {
                       positive(p.a, "Beta a");
                       positive(p.b, "Beta b");
                   },
                   [&](const NormalMixturePrior& p) {
                       if (p.components.empty()) throw ConfigError("NormalMixture needs at least one component");
                       double total = 0.0;
                       for (const auto& k : p.components) {
                           positive(k.weight, "NormalMixture weight");
                           finite(k.mean, "NormalMixture mean");
                           positive(k.sd, "NormalMixture sd");
                           total += k.weight;
                       }
                       if (std::abs(total - 1.0) > 1e-12) throw ConfigError("NormalMixture weights must sum to 1");
                   },
                   [&](const PointMassPrior& p) { finite(p.value, "PointMass value"); },
               },
               prior);
}

double log_prior_density(const PriorSpec& prior, double x) {
    if (std::isnan(x)) return kNegInf;
    return std::visit(
        overloaded{
            [x](const NormalPrior& p) { return normal_logpdf(x, p.mean, p.sd); },
            [x](const HalfNormalPrior& p) {
                return x < 0.0 ? kNegInf : std::numbers::ln2 + normal_logpdf(x, 0.0, p.scale);
            },
            [x](const CauchyPrior& p) {
                const double z = (x - p.location) / p.scale;
                return -std::log(std::numbers::pi * p.scale) - std::log1p(z * z);
            },
            [x](const BetaPrior& p) {
                if (x <= 0.0 || x >= 1.0) return kNegInf;
                return (p.a - 1.0) * std::log(x) + (p.b - 1.0) * std::log1p(-x) - std::lgamma(p.a) -
                       std::lgamma(p.b) + std::lgamma(p.a + p.b);
            },
            [x](const NormalMixturePrior& p) {
                double mx = kNegInf;
                std::vector<double> t;
                t.reserve(p.components.size());
                for (const auto& k : p.components) {
                    t.push_back(std::log(k.weight) + normal_logpdf(x, k.mean, k.sd));
                    mx = std::max(mx, t.back());
                }
                if (mx == kNegInf) return kNegInf;
                double s = 0.0;
                for (double v : t) s += std::exp(v - mx);
                return mx + std::log(s);
            },
            [x](const PointMassPrior& p) { return x == p.value ? 0.0 : kNegInf; },
        },
        prior);
}

double log_prior_gradient(const PriorSpec& prior, double x) {
    return std::visit(overloaded{
                          [x](const NormalPrior& p) { return -(x - p.mean) / (p.sd * p.sd); },
                          [x](const HalfNormalPrior& p) { return x < 0.0 ? 0.0 : -x / (p.scale * p.scale); },
                          [x](const CauchyPrior& p) {
                              const double d = x - p.location;
                              return -2.0 * d / (p.scale * p.scale + d * d);
                          },
                          [x](const BetaPrior& p) {
                              if (x <= 0.0 || x >= 1.0) return 0.0;
                              return (p.a - 1.0) / x - (p.b - 1.0) / (1.0 - x);
                          },
                          [x](const NormalMixturePrior& p) {
                              // Responsibility-weighted component scores.
                              double mx = kNegInf;
                              for (const auto& k : p.components)
                                  mx = std::max(mx, std::log(k.weight) + normal_logpdf(x, k.mean, k.sd));
                              if (mx == kNegInf) return 0.0;
                              double num = 0.0, den = 0.0;
                              for (const auto& k : p.components) {
                                  const double r = std::exp(std::log(k.weight) + normal_logpdf(x, k.mean, k.sd) - mx);
                                  num += r * (-(x - k.mean) / (k.sd * k.sd));
                                  den += r;
                              }
                              return num / den;
                          },
                          [](const PointMassPrior&) { return 0.0; },
                      },
                      prior);
}

double prior_cdf(const PriorSpec& prior, double x) {
    return std::visit(overloaded{
                          [x](const NormalPrior& p) { return std_normal_cdf((x - p.mean) / p.sd); },
                          [x](const HalfNormalPrior& p) { return x <= 0.0 ? 0.0 : std::erf(x / (p.scale * std::numbers::sqrt2)); },
                          [x](const CauchyPrior& p) { return 0.5 + std::atan((x - p.location) / p.scale) / std::numbers::pi; },
                          [x](const BetaPrior& p) {
                              if (x <= 0.0) return 0.0;
                              if (x >= 1.0) return 1.0;
                              return boost::math::cdf(boost::math::beta_distribution<double>(p.a, p.b), x);
                          },
                          [x](const NormalMixturePrior& p) { return mixture_cdf(p, x); },
                          [x](const PointMassPrior& p) { return x < p.value ? 0.0 : 1.0; },
                      },
                      prior);
}

double prior_quantile(const PriorSpec& prior, double prob) {
    if (!(prob > 0.0 && prob < 1.0)) throw DomainError("prior_quantile: probability must lie in (0,1)");
    return std::visit(overloaded{
                          [prob](const NormalPrior& p) { return p.mean + p.sd * std_normal_quantile(prob); },
                          [prob](const HalfNormalPrior& p) { return p.scale * std_normal_quantile(0.5 + 0.5 * prob); },
                          [prob](const CauchyPrior& p) {
                              return p.location + p.scale * std::tan(std::numbers::pi * (prob - 0.5));
                          },
                          [prob](const BetaPrior& p) {
                              return boost::math::quantile(boost::math::beta_distribution<double>(p.a, p.b), prob);
                          },
                          [prob](const NormalMixturePrior& p) { return mixture_quantile(p, prob); },
                          [](const PointMassPrior& p) { return p.value; },
                      },
                      prior);
}

double draw_prior(const PriorSpec& prior, Engine& rng) {
    return std::visit(overloaded{
                          [&](const NormalPrior& p) { return std::normal_distribution<double>(p.mean, p.sd)(rng); },
                          [&](const HalfNormalPrior& p) {
                              return std::abs(std::normal_distribution<double>(0.0, p.scale)(rng));
                          },
                          [&](const CauchyPrior& p) {
                              return std::cauchy_distribution<double>(p.location, p.scale)(rng);
                          },
                          [&](const BetaPrior& p) {
                              const double x = std::gamma_distribution<double>(p.a, 1.0)(rng);
                              const double y = std::gamma_distribution<double>(p.b, 1.0)(rng);
                              return x / (x + y);
                          },
                          [&](const NormalMixturePrior& p) {
                              std::vector<double> w;
                              for (const auto& k : p.components) w.push_back(k.weight);
                              const auto& k = p.components[std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng)];
                              return std::normal_distribution<double>(k.mean, k.sd)(rng);
                          },
                          [](const PointMassPrior& p) { return p.value; },
                      },
                      prior);
}

bool is_point_mass(const PriorSpec& prior) { return std::holds_alternative<PointMassPrior>(prior); }

std::string describe(const PriorSpec& prior) {
    std::ostringstream os;
    os.precision(6);
    std::visit(overloaded{
                   [&](const NormalPrior& p) { os << "Normal(" << p.mean << ", " << p.sd << "^2)"; },
                   [&](const HalfNormalPrior& p) { os << "HalfNormal(" << p.scale << ")"; },
                   [&](const CauchyPrior& p) { os << "Cauchy(" << p.location << ", " << p.scale << ")"; },
                   [&](const BetaPrior& p) { os << "Beta(" << p.a << ", " << p.b << ")"; },
                   [&](const NormalMixturePrior& p) {
                       os << "NormalMixture(";
                       for (std::size_t i = 0; i < p.components.size(); ++i) {
                           const auto& k = p.components[i];
                           os << (i ? ", " : "") << k.weight << "*N(" << k.mean << ", " << k.sd << "^2)";
                       }
                       os << ")";
                   },
                   [&](const PointMassPrior& p) { os << "PointMass(" << p.value << ")"; },
               },
               prior);
    return os.str();
}

nlohmann::json prior_to_json(const PriorSpec& prior) {
    using nlohmann::json;
    return std::visit(overloaded{
                          [](const NormalPrior& p) { return json{{"kind", "normal"}, {"mean", p.mean}, {"sd", p.sd}}; },
                          [](const HalfNormalPrior& p) { return json{{"kind", "half_normal"}, {"scale", p.scale}}; },
                          [](const CauchyPrior& p) {
                              return json{{"kind", "cauchy"}, {"location", p.location}, {"scale", p.scale}};
                          },
                          [](const BetaPrior& p) { return json{{"kind", "beta"}, {"a", p.a}, {"b", p.b}}; },
                          [](const NormalMixturePrior& p) {
                              json comps = json::array();
                              for (const auto& k : p.components) {
                                  comps.push_back({{"weight", k.weight}, {"mean", k.mean}, {"sd", k.sd}});
                              }
                              return json{{"kind", "normal_mixture"}, {"components", comps}};
                          },
                          [](const PointMassPrior& p) { return json{{"kind", "point_mass"}, {"value", p.value}}; },
                      },
                      prior);
}

PriorSpec prior_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
        throw ConfigError("prior: expected an object with a string 'kind'");
    }
    const auto kind = j["kind"].get<std::string>();
    PriorSpec out;
    if (kind == "normal") {
        out = NormalPrior{require_number(j, "mean"), require_number(j, "sd")};
    } else if (kind == "half_normal") {
        out = HalfNormalPrior{require_number(j, "scale")};
    } else if (kind == "cauchy") {
        out = CauchyPrior{require_number(j, "location"), require_number(j, "scale")};
    } else if (kind == "beta") {
        out = BetaPrior{require_number(j, "a"), require_number(j, "b")};
    } else if (kind == "normal_mixture") {
        if (!j.contains("components") || !j["components"].is_array()) {
            throw ConfigError("prior: normal_mixture needs a 'components' array");
        }
        NormalMixturePrior m;
        for (const auto& c : j["components"]) {
            m.components.push_back({require_number(c, "weight"), require_number(c, "mean"), require_number(c, "sd")});
        }
        out = m;
    } else if (kind == "point_mass") {
        out = PointMassPrior{require_number(j, "value")};
    } else {
        throw ConfigError("prior: unknown kind '" + kind + "'");
    }
    check_prior(out);
    return out;
}

}  // namespace aemeta
