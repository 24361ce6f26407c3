#include "aemeta/sampler.hpp"

#include "aemeta/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>

namespace aemeta {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_eval(const Target& t, std::span<const double> x) {
    const double v = t.log_density(x);
    return std::isnan(v) ? kNegInf : v;
}

bool accept(double log_ratio, Engine& rng) {
    if (log_ratio >= 0.0) return true;
    if (!(log_ratio > kNegInf)) return false;
    return std::log(std::uniform_real_distribution<double>(0.0, 1.0)(rng)) < log_ratio;
}

double acceptance_prob(double log_ratio) {
    if (std::isnan(log_ratio)) return 0.0;
    return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

/// Robbins-Monro gain for the t-th update within an adaptation window.
double gain(long t) { return std::pow(static_cast<double>(t) + 1.0, -0.6); }

struct ScaleMoveState {
    double log_step = std::log(0.5);
    long updates = 0;
};

/// Scale-group moves (see ScaleGroup). Returns true if any move was accepted.
bool scale_group_moves(const Target& t, std::vector<ScaleMoveState>& groups, std::vector<double>& x, double& lp,
                       std::vector<double>& proposal, Engine& rng, bool adapt) {
    std::normal_distribution<double> z(0.0, 1.0);
    bool moved = false;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& grp = t.scale_groups[g];
        auto& st = groups[g];
        const double delta = std::exp(st.log_step) * z(rng);
        proposal = x;
        const double c = grp.center ? x[*grp.center] : grp.center_value;
        proposal[grp.scale] += delta;
        const double f = std::exp(delta);
        for (auto m : grp.members) proposal[m] = c + (x[m] - c) * f;
        const double lp_new = safe_eval(t, proposal);
        const double r = lp_new - lp + static_cast<double>(grp.members.size()) * delta;
        if (accept(r, rng)) {
            x.swap(proposal);
            lp = lp_new;
            moved = true;
        }
        if (adapt) st.log_step += gain(st.updates++) * (acceptance_prob(r) - 0.44);
    }
    return moved;
}

/// Finite starting point from the target's initializer.
std::vector<double> find_start(const Target& t, const SamplerConfig& cfg, Engine& rng, double& lp) {
    std::string last_problem;
    for (int attempt = 0; attempt < cfg.max_init_attempts; ++attempt) {
        std::vector<double> x;
        if (t.initial_point) {
            x = t.initial_point(rng);
        } else {
            std::normal_distribution<double> z(0.0, 1.0);
            x.resize(t.dimension);
            for (auto& v : x) v = z(rng);
        }
        if (x.size() != t.dimension) throw DomainError("sampler: initial point has the wrong dimension");
        lp = safe_eval(t, x);
        if (std::isfinite(lp) && t.log_density_gradient) {
            thread_local std::vector<double> g;
            g.resize(t.dimension);
            const double lg = t.log_density_gradient(x, g);
            if (!std::isfinite(lg)) lp = kNegInf;
        }
        if (std::isfinite(lp)) return x;
        if (t.diagnose) last_problem = t.diagnose(x);
    }
    std::string msg = "no finite starting point after " + std::to_string(cfg.max_init_attempts) + " attempts";
    if (!last_problem.empty()) msg += "; first offending block: " + last_problem;
    throw InitializationError(msg);
}

class ChainRunner {
public:
    ChainRunner(const Target& target, const SamplerConfig& config, int chain_index)
        : t_(target),
          cfg_(config),
          d_(target.dimension),
          rng_(make_engine(config.seed, {static_cast<std::uint64_t>(chain_index)})),
          groups_(target.scale_groups.size()) {}

    ChainDraws run(int steps) {
        initialize();
        warmup(steps);
        return sample(steps);
    }

private:
    void initialize() { x_ = find_start(t_, cfg_, rng_, lp_); }

    void componentwise_sweep(std::vector<double>& log_scale, long t) {
        std::normal_distribution<double> z(0.0, 1.0);
        for (std::size_t j = 0; j < d_; ++j) {
            const double old = x_[j];
            x_[j] = old + std::exp(log_scale[j]) * z(rng_);
            const double lp = safe_eval(t_, x_);
            const double r = lp - lp_;
            if (accept(r, rng_)) {
                lp_ = lp;
            } else {
                x_[j] = old;
            }
            log_scale[j] += gain(t) * (acceptance_prob(r) - 0.44);
        }
    }

    bool joint_step() {
        std::normal_distribution<double> z(0.0, 1.0);
        for (std::size_t j = 0; j < d_; ++j) noise_[j] = z(rng_);
        const double c = std::exp(log_c_) * 2.38 / std::sqrt(static_cast<double>(d_));
        step_ = chol_.triangularView<Eigen::Lower>() * noise_;
        for (std::size_t j = 0; j < d_; ++j) proposal_[j] = x_[j] + c * step_[j];
        const double lp = safe_eval(t_, proposal_);
        last_ratio_ = lp - lp_;
        if (accept(last_ratio_, rng_)) {
            x_.swap(proposal_);
            lp_ = lp;
            return true;
        }
        return false;
    }

    void scale_moves(bool adapt) { scale_group_moves(t_, groups_, x_, lp_, proposal_, rng_, adapt); }

    void set_covariance(const std::vector<std::vector<double>>& window, const std::vector<double>& fallback_sd) {
        const auto n = window.size();
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d_, d_);
        if (n >= 2) {
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(d_);
            for (const auto& w : window) mean += Eigen::Map<const Eigen::VectorXd>(w.data(), d_);
            mean /= static_cast<double>(n);
            for (const auto& w : window) {
                const Eigen::VectorXd dv = Eigen::Map<const Eigen::VectorXd>(w.data(), d_) - mean;
                cov += dv * dv.transpose();
            }
            cov /= static_cast<double>(n - 1);
            const double nn = static_cast<double>(n);
            cov = (nn / (nn + 5.0)) * cov;
            cov.diagonal().array() += 1e-3 * 5.0 / (nn + 5.0);
        } else {
            for (std::size_t j = 0; j < d_; ++j) cov(j, j) = fallback_sd[j] * fallback_sd[j];
        }
        for (double jitter = 1e-10;; jitter *= 10.0) {
            Eigen::LLT<Eigen::MatrixXd> llt(cov);
            if (llt.info() == Eigen::Success) {
                chol_ = llt.matrixL();
                return;
            }
            cov.diagonal().array() += jitter;
        }
    }

    void warmup(int steps) {
        noise_.resize(d_);
        step_.resize(d_);
        proposal_.assign(d_, 0.0);
        if (d_ == 0) return;
        const int W = cfg_.warmup;
        const int phase_a = std::max(1, W / 5);

        std::vector<double> log_scale(d_, std::log(0.5));
        std::vector<std::vector<double>> window;
        for (int it = 0; it < std::min(phase_a, W); ++it) {
            componentwise_sweep(log_scale, it);
            scale_moves(true);
            if (it >= phase_a / 2) window.push_back(x_);
        }
        std::vector<double> sd(d_);
        for (std::size_t j = 0; j < d_; ++j) sd[j] = std::exp(log_scale[j]) * std::sqrt(static_cast<double>(d_)) / 2.38;
        set_covariance(window, sd);
        window.clear();

        // Doubling covariance windows up to slow_end, the last one absorbing
        // the remainder; after slow_end only the overall scale is tuned.
        const int remaining = W - phase_a;
        const int slow_end = W - std::max(1, remaining / 10);
        int window_len = std::max(25, remaining / 15);
        int window_start = phase_a;
        long t = 0;
        for (int it = phase_a; it < W; ++it) {
            for (int s = 0; s < steps; ++s) {
                joint_step();
                log_c_ += gain(t++) * (acceptance_prob(last_ratio_) - cfg_.target_acceptance.value_or(0.234));
            }
            scale_moves(true);
            if (it >= slow_end) continue;
            window.push_back(x_);
            int end = window_start + window_len;
            if (end + 2 * window_len > slow_end) end = slow_end;
            if (it + 1 == end) {
                set_covariance(window, sd);
                window.clear();
                window_start = end;
                window_len *= 2;
                t = 0;
            }
        }
    }

    ChainDraws sample(int steps) {
        ChainDraws out;
        const auto S = static_cast<std::size_t>(cfg_.samples);
        const std::size_t q = t_.constrain ? t_.constrained_names.size() : d_;
        out.unconstrained.reserve(S * d_);
        out.constrained.reserve(S * q);
        out.log_density.reserve(S);
        long accepted = 0;
        long proposed = 0;
        for (std::size_t it = 0; it < S; ++it) {
            if (d_ > 0) {
                for (int s = 0; s < steps; ++s) {
                    accepted += joint_step() ? 1 : 0;
                    ++proposed;
                }
                scale_moves(false);
            }
            out.unconstrained.insert(out.unconstrained.end(), x_.begin(), x_.end());
            if (t_.constrain) {
                const auto c = t_.constrain(x_);
                out.constrained.insert(out.constrained.end(), c.begin(), c.end());
            } else {
                out.constrained.insert(out.constrained.end(), x_.begin(), x_.end());
            }
            out.log_density.push_back(lp_);
        }
        out.acceptance_rate = proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 1.0;
        out.proposal_scale = std::exp(log_c_) * 2.38 / std::sqrt(std::max<double>(1.0, static_cast<double>(d_)));
        return out;
    }

    const Target& t_;
    const SamplerConfig& cfg_;
    std::size_t d_;
    Engine rng_;
    std::vector<double> x_;
    double lp_ = kNegInf;
    double log_c_ = 0.0;
    double last_ratio_ = 0.0;
    Eigen::MatrixXd chol_;
    Eigen::VectorXd noise_;
    Eigen::VectorXd step_;
    std::vector<double> proposal_;
    std::vector<ScaleMoveState> groups_;
};

/// Dual-averaging step size adaptation.
struct StepSizeAdapter {
    double mu = 0.0;
    double s_bar = 0.0;
    double x_bar = 0.0;
    long counter = 0;
    double delta = 0.8;

    void restart(double eps) {
        mu = std::log(10.0 * eps);
        s_bar = 0.0;
        x_bar = 0.0;
        counter = 0;
    }
    double learn(double stat) {
        ++counter;
        stat = std::min(1.0, stat);
        const double n = static_cast<double>(counter);
        const double eta = 1.0 / (n + 10.0);
        s_bar = (1.0 - eta) * s_bar + eta * (delta - stat);
        const double x = mu - s_bar * std::sqrt(n) / 0.05;
        const double x_eta = std::pow(n, -0.75);
        x_bar = (1.0 - x_eta) * x_bar + x_eta * x;
        return std::exp(x);
    }
    double final_step() const { return std::exp(x_bar); }
};

class NutsRunner {
public:
    NutsRunner(const Target& target, const SamplerConfig& config, int chain_index)
        : t_(target),
          cfg_(config),
          d_(target.dimension),
          rng_(make_engine(config.seed, {static_cast<std::uint64_t>(chain_index)})),
          groups_(target.scale_groups.size()) {}

    ChainDraws run() {
        std::vector<double> start = find_start(t_, cfg_, rng_, lp_);
        x_ = Eigen::Map<Eigen::VectorXd>(start.data(), static_cast<Eigen::Index>(d_));
        minv_ = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d_));
        g_.resize(static_cast<Eigen::Index>(d_));
        p_.resize(static_cast<Eigen::Index>(d_));
        scratch_.assign(start.begin(), start.end());
        proposal_.resize(d_);
        warmup();
        return sample();
    }

private:
    using Vec = Eigen::VectorXd;

    struct Point {
        Vec x, p, g;
        double lp = kNegInf;
    };

    double eval_gradient(const Vec& x, Vec& g) const {
        const double v = t_.log_density_gradient(std::span<const double>(x.data(), d_), std::span<double>(g.data(), d_));
        return std::isnan(v) ? kNegInf : v;
    }

    double kinetic(const Vec& p) const { return 0.5 * p.dot(minv_.cwiseProduct(p)); }
    double hamiltonian(const Point& z) const { return -z.lp + kinetic(z.p); }

    void leapfrog(Point& z, double eps) const {
        z.p += 0.5 * eps * z.g;
        z.x += eps * minv_.cwiseProduct(z.p);
        z.lp = eval_gradient(z.x, z.g);
        if (z.lp > kNegInf) z.p += 0.5 * eps * z.g;
    }

    void draw_momentum(Vec& p) {
        std::normal_distribution<double> z(0.0, 1.0);
        for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = z(rng_) / std::sqrt(minv_[i]);
    }

    static bool no_u_turn(const Vec& p_sharp_minus, const Vec& p_sharp_plus, const Vec& rho) {
        return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
    }

    static double log_add(double a, double b) {
        if (a == kNegInf) return b;
        if (b == kNegInf) return a;
        const double m = std::max(a, b);
        return m + std::log1p(std::exp(-std::abs(a - b)));
    }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

    // Builds a subtree of 2^depth leapfrog steps from z_ in direction `sign`.
    bool build_tree(int depth, Point& z_propose, Vec& p_sharp_beg, Vec& p_sharp_end, Vec& rho, Vec& p_beg, Vec& p_end,
                    double h0, double sign, double& log_sum_weight) {
        if (depth == 0) {
            leapfrog(z_, sign * eps_);
            ++n_leapfrog_;
            double h = hamiltonian(z_);
            if (std::isnan(h) || !(z_.lp > kNegInf)) h = std::numeric_limits<double>::infinity();
            if (h - h0 > 1000.0) divergent_ = true;
            log_sum_weight = log_add(log_sum_weight, h0 - h);
            sum_metro_prob_ += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
            z_propose = z_;
            p_sharp_beg = minv_.cwiseProduct(z_.p);
            p_sharp_end = p_sharp_beg;
            rho += z_.p;
            p_beg = z_.p;
            p_end = p_beg;
            return !divergent_;
        }
        const auto n = static_cast<Eigen::Index>(d_);
        Vec p_init_end(n), p_sharp_init_end(n), rho_init = Vec::Zero(n);
        double log_sum_weight_init = kNegInf;
        if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, h0, sign,
                        log_sum_weight_init)) {
            return false;
        }
        Point z_propose_final;
        Vec p_final_beg(n), p_sharp_final_beg(n), rho_final = Vec::Zero(n);
        double log_sum_weight_final = kNegInf;
        if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, h0,
                        sign, log_sum_weight_final)) {
            return false;
        }
        const double log_sum_weight_subtree = log_add(log_sum_weight_init, log_sum_weight_final);
        log_sum_weight = log_add(log_sum_weight, log_sum_weight_subtree);
        if (log_sum_weight_final > log_sum_weight_subtree) {
            z_propose = z_propose_final;
        } else if (uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
            z_propose = z_propose_final;
        }
        const Vec rho_subtree = rho_init + rho_final;
        rho += rho_subtree;
        bool persist = no_u_turn(p_sharp_beg, p_sharp_end, rho_subtree);
        persist = persist && no_u_turn(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
        persist = persist && no_u_turn(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
        return persist;
    }

    // One NUTS transition from (x_, lp_); returns the acceptance statistic.
    double transition() {
        const auto n = static_cast<Eigen::Index>(d_);
        Point z0;
        z0.x = x_;
        z0.g.resize(n);
        z0.lp = eval_gradient(z0.x, z0.g);
        z0.p.resize(n);
        draw_momentum(z0.p);
        const double h0 = hamiltonian(z0);

        Point z_fwd = z0, z_bck = z0, z_sample = z0, z_propose = z0;
        Vec p_fwd_bck = z0.p, p_sharp_fwd_bck = minv_.cwiseProduct(z0.p);
        Vec p_sharp_fwd = p_sharp_fwd_bck, p_bck_fwd = z0.p, p_sharp_bck_fwd = p_sharp_fwd_bck;
        Vec p_sharp_bck = p_sharp_fwd_bck, p_fwd = z0.p, p_bck = z0.p;
        Vec rho = z0.p;
        double log_sum_weight = 0.0;
        n_leapfrog_ = 0;
        sum_metro_prob_ = 0.0;
        divergent_ = false;

        for (int depth = 0; depth < cfg_.max_treedepth; ++depth) {
            Vec rho_fwd = Vec::Zero(n), rho_bck = Vec::Zero(n);
            double log_sum_weight_subtree = kNegInf;
            bool valid = false;
            if (uniform() > 0.5) {
                z_ = z_fwd;
                rho_bck = rho;
                p_bck_fwd = p_fwd_bck;
                p_sharp_bck_fwd = p_sharp_fwd_bck;
                valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd, rho_fwd, p_fwd_bck, p_fwd, h0, 1.0,
                                   log_sum_weight_subtree);
                z_fwd = z_;
            } else {
                z_ = z_bck;
                rho_fwd = rho;
                p_fwd_bck = p_bck_fwd;
                p_sharp_fwd_bck = p_sharp_bck_fwd;
                valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck, rho_bck, p_bck_fwd, p_bck, h0, -1.0,
                                   log_sum_weight_subtree);
                z_bck = z_;
            }
            if (!valid) break;
            if (log_sum_weight_subtree > log_sum_weight) {
                z_sample = z_propose;
            } else if (uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
                z_sample = z_propose;
            }
            log_sum_weight = log_add(log_sum_weight, log_sum_weight_subtree);
            rho = rho_bck + rho_fwd;
            bool persist = no_u_turn(p_sharp_bck, p_sharp_fwd, rho);
            persist = persist && no_u_turn(p_sharp_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
            persist = persist && no_u_turn(p_sharp_bck_fwd, p_sharp_fwd, rho_fwd + p_bck_fwd);
            if (!persist) break;
        }
        x_ = z_sample.x;
        lp_ = z_sample.lp;
        total_leapfrog_ += n_leapfrog_;
        if (divergent_) ++divergences_;
        return n_leapfrog_ > 0 ? sum_metro_prob_ / static_cast<double>(n_leapfrog_) : 0.0;
    }

    void scale_moves(bool adapt) {
        if (groups_.empty()) return;
        std::copy(x_.data(), x_.data() + d_, scratch_.begin());
        if (scale_group_moves(t_, groups_, scratch_, lp_, proposal_, rng_, adapt)) {
            x_ = Eigen::Map<Vec>(scratch_.data(), static_cast<Eigen::Index>(d_));
        }
    }

    // Doubles eps until the one-step acceptance crosses 0.8, as a restart
    // point for dual averaging.
    void init_step_size() {
        const auto n = static_cast<Eigen::Index>(d_);
        Point z0;
        z0.x = x_;
        z0.g.resize(n);
        z0.p.resize(n);
        z0.lp = eval_gradient(z0.x, z0.g);
        int direction = 0;
        for (int i = 0; i < 50; ++i) {
            draw_momentum(z0.p);
            const double h0 = hamiltonian(z0);
            Point z = z0;
            leapfrog(z, eps_);
            double h = hamiltonian(z);
            if (std::isnan(h) || !(z.lp > kNegInf)) h = std::numeric_limits<double>::infinity();
            const int dir = h0 - h > std::log(0.8) ? 1 : -1;
            if (direction == 0) direction = dir;
            if (dir != direction) break;
            eps_ = direction == 1 ? 2.0 * eps_ : 0.5 * eps_;
            if (eps_ > 1e7 || eps_ < 1e-10) break;
        }
        eps_ = std::clamp(eps_, 1e-10, 1e7);
    }

    void warmup() {
        const int W = cfg_.warmup;
        stepsize_.delta = cfg_.target_acceptance.value_or(0.8);
        if (d_ == 0) return;
        int init_buffer = 75, term_buffer = 50, window = 25;
        if (init_buffer + term_buffer + window > W) {
            init_buffer = static_cast<int>(0.15 * W);
            term_buffer = static_cast<int>(0.1 * W);
            window = W - init_buffer - term_buffer;
        }
        const int adapt_end = W - term_buffer;
        int window_end = init_buffer + window;
        if (window_end + 2 * window > adapt_end) window_end = adapt_end;

        init_step_size();
        stepsize_.restart(eps_);
        Vec mean = Vec::Zero(static_cast<Eigen::Index>(d_));
        Vec m2 = Vec::Zero(static_cast<Eigen::Index>(d_));
        long count = 0;
        for (int it = 0; it < W; ++it) {
            const double stat = transition();
            scale_moves(true);
            eps_ = stepsize_.learn(stat);
            if (window > 0 && it >= init_buffer && it < adapt_end) {
                ++count;
                const Vec delta = x_ - mean;
                mean += delta / static_cast<double>(count);
                m2 += delta.cwiseProduct(x_ - mean);
                if (it + 1 == window_end) {
                    const double nn = static_cast<double>(count);
                    if (count > 1) {
                        minv_ = (nn / (nn + 5.0)) * (m2 / (nn - 1.0)).array() + 1e-3 * 5.0 / (nn + 5.0);
                    }
                    mean.setZero();
                    m2.setZero();
                    count = 0;
                    window *= 2;
                    window_end = it + 1 + window;
                    if (window_end + 2 * window > adapt_end) window_end = adapt_end;
                    init_step_size();
                    stepsize_.restart(eps_);
                }
            }
        }
        if (W > 0) eps_ = stepsize_.final_step();
        total_leapfrog_ = 0;
        divergences_ = 0;
    }

    ChainDraws sample() {
        ChainDraws out;
        const auto S = static_cast<std::size_t>(cfg_.samples);
        const std::size_t q = t_.constrain ? t_.constrained_names.size() : d_;
        out.unconstrained.reserve(S * d_);
        out.constrained.reserve(S * q);
        out.log_density.reserve(S);
        double stat_sum = 0.0;
        std::vector<double> row(d_);
        for (std::size_t it = 0; it < S; ++it) {
            if (d_ > 0) {
                stat_sum += transition();
                scale_moves(false);
            }
            std::copy(x_.data(), x_.data() + d_, row.begin());
            out.unconstrained.insert(out.unconstrained.end(), row.begin(), row.end());
            if (t_.constrain) {
                const auto c = t_.constrain(row);
                out.constrained.insert(out.constrained.end(), c.begin(), c.end());
            } else {
                out.constrained.insert(out.constrained.end(), row.begin(), row.end());
            }
            out.log_density.push_back(lp_);
        }
        out.acceptance_rate = S > 0 && d_ > 0 ? stat_sum / static_cast<double>(S) : 1.0;
        out.proposal_scale = eps_;
        out.divergences = divergences_;
        out.mean_leapfrog_steps = S > 0 ? static_cast<double>(total_leapfrog_) / static_cast<double>(S) : 0.0;
        return out;
    }

    const Target& t_;
    const SamplerConfig& cfg_;
    std::size_t d_;
    Engine rng_;
    Vec x_, minv_, g_, p_;
    double lp_ = kNegInf;
    double eps_ = 1.0;
    StepSizeAdapter stepsize_;
    Point z_;
    long n_leapfrog_ = 0;
    long total_leapfrog_ = 0;
    double sum_metro_prob_ = 0.0;
    bool divergent_ = false;
    int divergences_ = 0;
    std::vector<double> scratch_;
    std::vector<double> proposal_;
    std::vector<ScaleMoveState> groups_;
};

}  // namespace

std::string_view to_string(Kernel k) {
    switch (k) {
        case Kernel::RandomWalk: return "random_walk";
        case Kernel::Nuts: return "nuts";
        case Kernel::Auto: break;
    }
    return "auto";
}

int PosteriorDraws::divergences() const {
    int n = 0;
    for (const auto& c : chains) n += c.divergences;
    return n;
}

void SamplerConfig::check() const {
    if (chains < 2) throw ConfigError("sampler: at least two chains are required");
    if (warmup < 1 || samples < 1) throw ConfigError("sampler: warmup and sampling iterations must be positive");
    if (target_acceptance && !(*target_acceptance > 0.0 && *target_acceptance < 1.0)) {
        throw ConfigError("sampler: target acceptance must lie in (0,1)");
    }
    if (steps_per_iteration < 0) throw ConfigError("sampler: steps_per_iteration must be nonnegative");
    if (max_init_attempts < 1) throw ConfigError("sampler: max_init_attempts must be positive");
    if (max_treedepth < 1 || max_treedepth > 20) throw ConfigError("sampler: max_treedepth must lie in [1, 20]");
}

std::optional<std::size_t> PosteriorDraws::constrained_index(const std::string& name) const {
    const auto it = std::find(constrained_names.begin(), constrained_names.end(), name);
    if (it == constrained_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - constrained_names.begin());
}

std::vector<std::vector<double>> PosteriorDraws::by_chain(const std::string& name) const {
    const auto idx = constrained_index(name);
    if (!idx) throw std::out_of_range("no parameter named '" + name + "'");
    const auto q = constrained_names.size();
    std::vector<std::vector<double>> out;
    for (const auto& c : chains) {
        std::vector<double> v(samples);
        for (std::size_t i = 0; i < samples; ++i) v[i] = c.constrained[i * q + *idx];
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<double> PosteriorDraws::pooled(const std::string& name) const {
    std::vector<double> out;
    for (auto& c : by_chain(name)) out.insert(out.end(), c.begin(), c.end());
    return out;
}

PosteriorDraws run(const Target& target, const SamplerConfig& config) {
    config.check();
    if (!target.log_density) throw ConfigError("sampler: target has no log density");
    if (target.constrain && target.constrained_names.empty() && target.dimension > 0) {
        throw ConfigError("sampler: constrained names missing");
    }
    for (const auto& g : target.scale_groups) {
        auto in_range = [&](std::size_t i) { return i < target.dimension; };
        if (!in_range(g.scale) || (g.center && !in_range(*g.center)) ||
            !std::all_of(g.members.begin(), g.members.end(), in_range)) {
            throw ConfigError("sampler: scale group index out of range");
        }
    }
    if (config.kernel == Kernel::Nuts && !target.log_density_gradient) {
        throw ConfigError("sampler: NUTS needs a target with a gradient");
    }
    const bool nuts = config.kernel == Kernel::Nuts || (config.kernel == Kernel::Auto && target.log_density_gradient);
    const int steps = nuts ? 1 : config.steps_per_iteration > 0
                          ? config.steps_per_iteration
                          : std::max(1, static_cast<int>((target.dimension + 2) / 3));

    PosteriorDraws out;
    out.names = target.names;
    if (out.names.empty()) {
        for (std::size_t j = 0; j < target.dimension; ++j) out.names.push_back("x[" + std::to_string(j) + "]");
    }
    out.constrained_names = target.constrain ? target.constrained_names : out.names;
    out.samples = static_cast<std::size_t>(config.samples);
    out.steps_per_iteration = steps;
    out.kernel = nuts ? Kernel::Nuts : Kernel::RandomWalk;
    out.chains.resize(config.chains);

    std::vector<std::exception_ptr> errors(config.chains);
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int k = next++; k < config.chains; k = next++) {
            try {
                out.chains[k] = nuts ? NutsRunner(target, config, k).run() : ChainRunner(target, config, k).run(steps);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    int threads = config.threads > 0 ? config.threads
                                     : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, config.chains);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::string draws_csv(const PosteriorDraws& draws) {
    std::string out = "chain,iteration";
    for (const auto& n : draws.constrained_names) out += "," + n;
    out += "\n";
    const auto q = draws.constrained_names.size();
    char buf[64];
    for (std::size_t c = 0; c < draws.chains.size(); ++c) {
        for (std::size_t i = 0; i < draws.samples; ++i) {
            out += std::to_string(c + 1) + "," + std::to_string(i + 1);
            for (std::size_t j = 0; j < q; ++j) {
                auto [p, ec] = std::to_chars(buf, buf + sizeof buf, draws.chains[c].constrained[i * q + j]);
                out += ",";
                out.append(buf, p);
            }
            out += "\n";
        }
    }
    return out;
}

}  // namespace aemeta
