#pragma once

// Stochastic control-affine plant, attackable measurement channel and
// seeded Euler-Maruyama integration.

#include "ftb/rng.hpp"
#include "ftb/types.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ftb {

/// dx = (f(x) + g(x) u) dt + sigma dW,   dy = (c x + a) dt + nu dV.
struct ControlAffineSdeSystem {
    int n = 0;  ///< state dimension
    int p = 0;  ///< input dimension
    int q = 0;  ///< output dimension
    std::function<Vec(const Vec&)> drift;
    std::function<Mat(const Vec&)> input_map;
    /// Optional analytic Jacobian of f(x) + g(x) u with respect to x.
    std::function<Mat(const Vec&, const Vec&)> drift_jacobian;
    Mat diffusion;      ///< n x n, time-constant
    Mat output_matrix;  ///< q x n
    Mat output_noise;   ///< q x q, time-constant

    /// Throws ConfigError on inconsistent dimensions.
    void validate() const;

    Vec closed_drift(const Vec& x, const Vec& u) const { return drift(x) + input_map(x) * u; }
};

/// How a compromised sensor row is corrupted while its pattern is active.
struct AttackSignal {
    enum class Kind { Constant, Gaussian, Callback };
    Kind kind = Kind::Constant;
    double mean = 0.0;    ///< constant bias, or Gaussian mean
    double stddev = 0.0;  ///< Gaussian only, drawn per row per step
    std::function<double(double t, const Vec& x)> callback;

    static AttackSignal constant(double bias) { return {Kind::Constant, bias, 0.0, {}}; }
    static AttackSignal gaussian(double mean, double stddev) { return {Kind::Gaussian, mean, stddev, {}}; }
};

struct AttackModel {
    std::vector<IndexSet> patterns;       ///< F(r_i), zero-based sensor rows
    std::vector<AttackSignal> generators;  ///< one per pattern
    std::optional<int> active;             ///< hidden from the controller

    int m() const { return static_cast<int>(patterns.size()); }
    void validate(int q) const;

    /// a_t in R^q for the active pattern; zero when none is active.
    Vec signal(double t, const Vec& x, int q, CounterRng& rng) const;
};

struct StateBox {
    Vec lo;
    Vec hi;
    bool contains(const Vec& x) const;
    Vec center() const { return 0.5 * (lo + hi); }
    int dim() const { return static_cast<int>(lo.size()); }
};

struct SafetySpec {
    std::function<double(const Vec&)> h;
    StateBox box;
    bool safe(const Vec& x) const { return h(x) >= 0.0; }
};

struct SimClock {
    double t = 0.0;
    double dt = 1e-2;
    std::uint64_t rng_seed = 0;
    double horizon = 1.0;

    void validate() const;
    long steps() const;
};

/// Euler-Maruyama step; `noise` holds unit normals and is scaled by sqrt(dt) here.
Vec step_state(const ControlAffineSdeSystem& sys, const Vec& x, const Vec& u, double dt, const Vec& noise);

/// Output increment dy = (c x + a) dt + nu sqrt(dt) noise.
Vec step_output(const ControlAffineSdeSystem& sys, const Vec& x, const Vec& attack_signal, double dt,
                const Vec& noise);

struct TrajectoryLog {
    std::vector<double> t;
    std::vector<Vec> x;
    std::vector<Vec> y;  ///< measured output rate dy/dt over each step
    std::vector<Vec> u;
    std::vector<Vec> a;  ///< injected attack signal
    std::optional<int> pattern_active;

    std::size_t size() const { return t.size(); }
};

using OpenLoopPolicy = std::function<Vec(double t, std::span<const Vec> outputs)>;

/// Deterministic given clock.rng_seed: same inputs give bit-identical logs.
TrajectoryLog run_open_loop(const ControlAffineSdeSystem& sys, const AttackModel& attack, const OpenLoopPolicy& policy,
                            const SimClock& clock, const Vec& x0);

}  // namespace ftb
