#pragma once

// Fixed-point dataset sampling, the volume / feasibility / correctness
// losses, and the gradient-descent loop that fits a fault-tolerant barrier.

#include "ftb/barrier.hpp"
#include "ftb/qp.hpp"
#include "ftb/sde.hpp"
#include "ftb/types.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ftb {

struct Dataset {
    Mat samples;  ///< n x N, one sample per column
    Vec grid_length;
    StateBox box;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(samples.cols()); }
    Vec sample(int k) const { return samples.col(k); }
};

/// One uniformly perturbed sample per grid cell; the last cell along an axis
/// may be truncated when L does not divide the box width.
Dataset sample_dataset(const StateBox& box, const Vec& grid_length, std::uint64_t seed, bool centers_only = false);

/// Filter matrices entering the feasibility constraint of one fault pattern.
struct PatternModel {
    Mat K;   ///< n x q'
    Mat c;   ///< q' x n
    Mat nu;  ///< q' x q'
    IndexSet excluded;
};

/// Representative gain for each pattern filter: the Riccati flow at x_lin
/// integrated to its fixpoint.
std::vector<PatternModel> steady_state_models(const ControlAffineSdeSystem& sys, const std::vector<IndexSet>& excluded,
                                              const Vec& x_lin, const Vec& u_lin, double tol = 1e-9);

/// Steady-state covariance of the continuous Riccati flow.
Mat steady_state_covariance(const ControlAffineSdeSystem& sys, const Mat& A, const Mat& c, const Mat& nu, double tol);

struct XiTerms {
    double xi = 0.0;
    Vec lambda;             ///< db/dx g(xhat)
    double lie_drift = 0.0;  ///< db/dx f(xhat)
    double trace_term = 0.0;
    double robust_term = 0.0;  ///< gamma |db/dx K c|
    double bhat = 0.0;
};

/// xi = db/dx f + 1/2 tr(nu^T K^T d2b K nu) - gamma |db/dx K c| + (b - b_bar).
XiTerms compute_xi(const BarrierDerivatives& d, const ControlAffineSdeSystem& sys, const Vec& xhat,
                   const PatternModel& model, double gamma, double bbar);

XiTerms compute_xi(const BarrierNetwork& net, const BarrierMargins& margins, const ControlAffineSdeSystem& sys,
                   const Vec& xhat, const PatternModel& model, int pattern);

/// Vol(D) = sum -ReLU(h) ReLU(-b); non-positive.
double loss_volume(const BarrierNetwork& net, const Dataset& data, const SafetySpec& safety);
/// L_c = sum ReLU(-h) ReLU(b); non-negative.
double loss_correctness(const BarrierNetwork& net, const Dataset& data, const SafetySpec& safety);

struct FeasibilityProblem {
    const ControlAffineSdeSystem* system = nullptr;
    std::vector<PatternModel> patterns;
    std::optional<InputBox> u_bounds;
};

struct FeasibilityResult {
    std::vector<double> per_pattern;  ///< L_f^i
    int band_samples = 0;
    int infeasible_samples = 0;
};

/// Band membership for pattern i: -eta <= b <= b_bar_i + eta.
inline bool in_band(double b, double bbar, double eta) { return b >= -eta && b <= bbar + eta; }

/// eta = fraction * (max b - min b) over the dataset.
double auto_band(const Vec& values, double fraction);

FeasibilityResult loss_feasibility(const BarrierNetwork& net, const BarrierMargins& margins, const Dataset& data,
                                   const FeasibilityProblem& problem, double eta);

/// Value and seeds of one sample's feasibility penalty
/// sum_i w_i * ReLU(-(xi_i + Lambda u)) with u held fixed.
struct SampleFeasibility {
    double value = 0.0;
    double seed_value = 0.0;
    Vec seed_grad;
    Mat seed_hess;
    std::vector<double> per_pattern;
    bool infeasible = false;
    bool any_band = false;
};

SampleFeasibility sample_feasibility(const BarrierDerivatives& d, const BarrierMargins& margins,
                                     const FeasibilityProblem& problem, const Vec& xhat, double eta,
                                     const std::optional<Vec>& u_override = std::nullopt);

struct TrainingConfig {
    double lambda_f = 1.0;
    double lambda_c = 10.0;
    std::vector<double> gammas;
    int epochs = 2000;
    double step_size = 1e-3;
    int batch_size = 256;  ///< 0 means full batch
    double grad_clip = 10.0;
    double band_fraction = 0.05;   ///< eta as a fraction of the b range over T
    double boundary_band = 0.0;    ///< fixed eta when > 0
    int bbar_refresh_every = 25;
    int bbar_resolution = 8;
    double converge_tol = 1e-4;
    int converge_patience = 10;
    std::vector<int> hidden = {32, 32};
    std::uint64_t seed = 0;
    std::string optimizer = "gd";  ///< gd | adam
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int warm_start_epochs = 0;  ///< supervised fit of b to h before the barrier losses
    double warm_start_step = 1e-2;
    double warm_start_scale = 0.0;  ///< target tanh((h - margin) / scale); raw h - margin when 0
    double warm_start_margin = 0.0;

    void validate() const;
};

struct LossReport {
    int epoch = 0;
    double vol = 0.0;
    std::vector<double> lf_per_pattern;
    double lc = 0.0;
    double total = 0.0;
    double eta = 0.0;
    int band_samples = 0;
    int infeasible_samples = 0;
    double grad_norm = 0.0;  ///< mean pre-clip minibatch gradient norm
    int clipped_steps = 0;

    double lf() const;
};

struct TrainingResult {
    std::vector<LossReport> history;
    BarrierMargins margins;
    bool converged = false;
    int epochs_run = 0;
};

/// Evaluates every loss term on the full dataset.
LossReport evaluate_losses(const BarrierNetwork& net, const BarrierMargins& margins, const Dataset& data,
                           const SafetySpec& safety, const FeasibilityProblem& problem, const TrainingConfig& cfg,
                           int epoch);

/// Gradient of the total loss over a subset of sample columns.
Vec total_loss_gradient(const BarrierNetwork& net, const BarrierMargins& margins, const Dataset& data,
                        const std::vector<int>& columns, const SafetySpec& safety, const FeasibilityProblem& problem,
                        const TrainingConfig& cfg, double eta, double* loss_out = nullptr);

/// Re-estimates b_bar for every gamma.
BarrierMargins refresh_margins(const BarrierNetwork& net, const std::vector<double>& gammas, const StateBox& box,
                               int resolution, std::uint64_t seed);

using EpochCallback = std::function<void(const LossReport&)>;

/// Adam on the mean squared error between b and the warm-start target; returns the final error.
double warm_start(BarrierNetwork& net, const Dataset& data, const SafetySpec& safety, const TrainingConfig& cfg);

TrainingResult train(BarrierNetwork& net, const Dataset& data, const TrainingConfig& cfg, const SafetySpec& safety,
                     const FeasibilityProblem& problem, const EpochCallback& on_epoch = {});

}  // namespace ftb
