#pragma once

// Runtime safety filter: one constraint per trusted fault pattern built from
// that pattern's filter, pairwise conflict pruning, residue fallback.

#include "ftb/barrier.hpp"
#include "ftb/estimation.hpp"
#include "ftb/qp.hpp"
#include "ftb/sde.hpp"
#include "ftb/training.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace ftb {

struct ControllerConfig {
    Mat alphas;  ///< m x m, alpha_ij for i < j (upper triangle read)
    std::vector<double> gammas;
    double delta = 0.1;
    double epsilon = 0.1;
    BarrierMargins margins;
    bool sticky_removals = false;
    bool blend_nominal = false;  ///< min |u - u_nom|^2 instead of min |u|^2
    std::optional<InputBox> u_bounds;

    double alpha(int i, int j) const { return i < j ? alphas(i, j) : alphas(j, i); }
    void validate(int m) const;
};

struct RemovalEvent {
    enum class Reason { Pairwise, Residue };
    double t = 0.0;
    int index = -1;
    Reason reason = Reason::Pairwise;
    long step = 0;
};

const char* to_string(RemovalEvent::Reason r);

struct ConflictState {
    IndexSet z;
    std::vector<RemovalEvent> removals;

    static ConflictState all(int m);
    std::uint32_t bitmask() const;
};

/// One pattern's constraint together with its shifted barrier value.
struct PatternConstraint {
    FeasibilityRow row;
    double bhat = 0.0;
    XiTerms terms;
};

/// Rows for every i in z, each from filter i's own estimate and live gain.
std::vector<PatternConstraint> build_rows(const EkfBank& bank, const BarrierNetwork& net, const BarrierMargins& margins,
                                          const ControlAffineSdeSystem& sys, const IndexSet& z);

/// Keeps rows with b_hat < delta; delta = +inf keeps everything.
std::vector<PatternConstraint> activation_gate(const std::vector<PatternConstraint>& rows, double delta);

struct StepOutcome {
    Vec u;
    std::vector<FeasibilityRow> rows;  ///< rows the returned u was certified against
    bool any_active = false;
    bool degraded = false;  ///< no certified input existed; u = 0
    int removals_this_step = 0;
    std::vector<std::size_t> z_sizes;  ///< |Z_t| after each stage, for invariant checks
};

/// Algorithm 1 for one control instant.
StepOutcome control_step(double t, long step, const EkfBank& bank, const BarrierNetwork& net,
                         const ControlAffineSdeSystem& sys, const ControllerConfig& cfg, ConflictState& state,
                         const Vec& u_nominal);

/// Single-constraint filter on the full-sensor estimate, no conflict handling.
StepOutcome baseline_step(const EkfBank& bank, const BarrierNetwork& net, const ControlAffineSdeSystem& sys,
                          const ControllerConfig& cfg, const Vec& u_nominal);

using NominalPolicy = std::function<Vec(double t, const Vec& xhat)>;

enum class ControllerKind { FaultTolerant, Baseline };

struct ClosedLoopLog {
    std::vector<double> t;
    std::vector<Vec> x;
    std::vector<Vec> y;
    std::vector<std::vector<Vec>> xhat;  ///< per step, one estimate per filter slot
    std::vector<std::uint32_t> z;
    std::vector<Vec> u;
    std::vector<double> h;
    std::vector<double> b;  ///< b at the full-sensor estimate
    std::vector<bool> degraded;
    std::vector<RemovalEvent> removals;
    std::optional<int> pattern_active;
    double min_h = std::numeric_limits<double>::infinity();
    bool safe = true;
    bool any_degraded = false;
    bool z_invariants_ok = true;

    std::size_t size() const { return t.size(); }
};

struct ClosedLoopSetup {
    const ControlAffineSdeSystem* system = nullptr;
    const SafetySpec* safety = nullptr;
    AttackModel attack;
    ControllerKind kind = ControllerKind::FaultTolerant;
    NominalPolicy nominal;
    double p0_scale = 0.1;
    double init_var = 0.01;
    int residue_window = 20;
};

ClosedLoopLog run_closed_loop(const ClosedLoopSetup& setup, const BarrierNetwork& net, const ControllerConfig& cfg,
                              const SimClock& clock, const Vec& x0);

}  // namespace ftb
