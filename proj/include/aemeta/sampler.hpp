#pragma once

#include "aemeta/rng.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aemeta {

/// A group of coordinates whose spread around a centre is governed by one
/// log-scale coordinate, as in x_m ~ Normal(centre, exp(x_scale)^2). The
/// sampler proposes x_scale += d together with x_m -> c + (x_m - c) e^d, a
/// move that crosses the neck of hierarchical funnels in one step.
struct ScaleGroup {
    std::size_t scale = 0;
    std::optional<std::size_t> center;
    double center_value = 0.0;  // used when `center` is empty
    std::vector<std::size_t> members;
};

/// Unnormalized log density on R^d plus optional helpers.
struct Target {
    std::size_t dimension = 0;
    std::function<double(std::span<const double>)> log_density;
    /// Optional: returns the log density and writes its gradient. Enables
    /// the NUTS kernel.
    std::function<double(std::span<const double>, std::span<double>)> log_density_gradient;

    /// Starting point for one attempt; defaults to Normal(0, 1) draws.
    std::function<std::vector<double>(Engine&)> initial_point;
    /// Names the part of the density that is not finite at x.
    std::function<std::string(std::span<const double>)> diagnose;
    std::vector<ScaleGroup> scale_groups;

    std::vector<std::string> names;
    /// Map to reported quantities; identity when empty.
    std::function<std::vector<double>(std::span<const double>)> constrain;
    std::vector<std::string> constrained_names;
};

enum class Kernel { Auto, RandomWalk, Nuts };

std::string_view to_string(Kernel k);

struct SamplerConfig {
    int chains = 4;
    int warmup = 2000;
    int samples = 2000;
    std::uint64_t seed = 1;
    /// Auto picks NUTS when the target has a gradient, random-walk
    /// Metropolis otherwise.
    Kernel kernel = Kernel::Auto;
    /// Defaults to 0.234 for random-walk Metropolis and 0.8 for NUTS.
    std::optional<double> target_acceptance;
    /// Random-walk only: joint proposals per stored draw; 0 picks ceil(d / 3).
    int steps_per_iteration = 0;
    /// NUTS only.
    int max_treedepth = 10;
    /// Worker threads; 0 uses one per chain up to the hardware count.
    int threads = 0;
    int max_init_attempts = 100;

    /// Throws ConfigError on fewer than two chains or non-positive lengths.
    void check() const;
};

struct ChainDraws {
    std::vector<double> unconstrained;  // samples x dimension, row-major
    std::vector<double> constrained;    // samples x constrained_names.size()
    std::vector<double> log_density;
    double acceptance_rate = 0.0;  // NUTS: mean acceptance statistic
    double proposal_scale = 0.0;   // NUTS: step size
    int divergences = 0;
    double mean_leapfrog_steps = 0.0;
};

struct PosteriorDraws {
    std::vector<std::string> names;
    std::vector<std::string> constrained_names;
    std::size_t samples = 0;
    Kernel kernel = Kernel::RandomWalk;
    int steps_per_iteration = 1;
    std::vector<ChainDraws> chains;

    int divergences() const;

    std::optional<std::size_t> constrained_index(const std::string& name) const;
    /// Constrained draws of `name`, one vector per chain. Throws
    /// std::out_of_range for unknown names.
    std::vector<std::vector<double>> by_chain(const std::string& name) const;
    std::vector<double> pooled(const std::string& name) const;
};

/// Runs `config.chains` chains on `target`.
///
/// NUTS: multinomial no-U-turn sampling with a diagonal metric estimated
/// over doubling warmup windows and a dual-averaging step size.
/// Random-walk Metropolis: warmup starts with componentwise updates whose
/// step sizes are tuned individually, then switches to joint Gaussian
/// proposals whose covariance is re-estimated over doubling windows and whose
/// overall scale is tuned toward the target acceptance rate.
///
/// Both kernels interleave the scale-group moves. All tuning stops at the end
/// of warmup. Chain k draws from stream_seed(seed, k), so output does not
/// depend on `threads`.
///
/// Throws InitializationError if no finite starting point is found in
/// `max_init_attempts` tries.
PosteriorDraws run(const Target& target, const SamplerConfig& config);

/// One row per draw: chain, iteration, constrained values.
std::string draws_csv(const PosteriorDraws& draws);

}  // namespace aemeta
