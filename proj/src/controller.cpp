#include "ftb/controller.hpp"

#include <algorithm>
#include <cmath>

namespace ftb {

void ControllerConfig::validate(int m) const {
    if (alphas.rows() < m || alphas.cols() < m) throw ConfigError("alphas must be an m x m matrix");
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j)
            if (!(alpha(i, j) > 0.0)) throw ConfigError("alphas must be positive");
    if (static_cast<int>(gammas.size()) != m) throw ConfigError("gammas must list one value per pattern");
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
    if (static_cast<int>(margins.bbar.size()) != m) throw ConfigError("margins must list one b_bar per pattern");
}

const char* to_string(RemovalEvent::Reason r) { return r == RemovalEvent::Reason::Pairwise ? "pairwise" : "residue"; }

ConflictState ConflictState::all(int m) {
    ConflictState s;
    for (int i = 0; i < m; ++i) s.z.push_back(i);
    return s;
}

std::uint32_t ConflictState::bitmask() const {
    std::uint32_t mask = 0;
    for (int i : z) mask |= 1u << i;
    return mask;
}

namespace {

PatternConstraint make_constraint(const EkfState& f, const BarrierNetwork& net, const ControlAffineSdeSystem& sys,
                                  double gamma, double bbar, int pattern) {
    PatternModel model{f.K, f.c, f.noise, {}};
    const auto d = net.derivatives(f.xhat);
    PatternConstraint pc;
    pc.terms = compute_xi(d, sys, f.xhat, model, gamma, bbar);
    pc.row = {pc.terms.lambda, pc.terms.xi, pattern};
    pc.bhat = pc.terms.bhat;
    return pc;
}

std::vector<FeasibilityRow> plain_rows(const std::vector<PatternConstraint>& rows) {
    std::vector<FeasibilityRow> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.row);
    return out;
}

// Solves the safety QP. With blending the decision variable is v = u - u_nom.
struct Attempt {
    bool ok = false;
    Vec u;
    std::vector<FeasibilityRow> rows;
};

Attempt attempt(const std::vector<PatternConstraint>& gated, const ControllerConfig& cfg, const Vec& u_nominal) {
    Attempt a;
    a.rows = plain_rows(gated);
    if (a.rows.empty()) {
        a.ok = true;
        a.u = u_nominal;
        return a;
    }
    std::vector<FeasibilityRow> shifted = a.rows;
    std::optional<InputBox> box = cfg.u_bounds;
    if (cfg.blend_nominal) {
        for (auto& r : shifted) r.xi += r.lambda.dot(u_nominal);
        if (box) {
            box->lo -= u_nominal;
            box->hi -= u_nominal;
        }
    }
    const QpSolution sol = solve_min_norm(shifted, static_cast<int>(u_nominal.size()), box);
    if (sol.status == QpStatus::Infeasible) return a;
    a.ok = true;
    a.u = cfg.blend_nominal ? Vec(u_nominal + sol.u) : sol.u;
    return a;
}

void remove_index(IndexSet& z, int i) { z.erase(std::remove(z.begin(), z.end(), i), z.end()); }

}  // namespace

std::vector<PatternConstraint> build_rows(const EkfBank& bank, const BarrierNetwork& net, const BarrierMargins& margins,
                                          const ControlAffineSdeSystem& sys, const IndexSet& z) {
    std::vector<PatternConstraint> rows;
    rows.reserve(z.size());
    for (int i : z)
        rows.push_back(make_constraint(bank.pattern(i), net, sys, margins.gamma[static_cast<std::size_t>(i)],
                                       margins.bbar[static_cast<std::size_t>(i)], i));
    return rows;
}

std::vector<PatternConstraint> activation_gate(const std::vector<PatternConstraint>& rows, double delta) {
    std::vector<PatternConstraint> out;
    for (const auto& r : rows)
        if (r.bhat < delta) out.push_back(r);
    return out;
}

StepOutcome control_step(double t, long step, const EkfBank& bank, const BarrierNetwork& net,
                         const ControlAffineSdeSystem& sys, const ControllerConfig& cfg, ConflictState& state,
                         const Vec& u_nominal) {
    if (!cfg.sticky_removals || state.z.empty()) state.z = ConflictState::all(bank.m()).z;
    StepOutcome out;

    // Rows are built once per step; pruning only selects among them.
    const IndexSet initial = state.z;
    const auto all_rows = build_rows(bank, net, cfg.margins, sys, initial);
    auto rows_for = [&](const IndexSet& z) {
        std::vector<PatternConstraint> r;
        for (const auto& pc : all_rows)
            if (std::find(z.begin(), z.end(), pc.row.pattern) != z.end()) r.push_back(pc);
        return activation_gate(r, cfg.delta);
    };
    auto finish = [&](const Attempt& a) {
        out.u = a.u;
        out.rows = a.rows;
        out.any_active = !a.rows.empty();
        out.z_sizes.push_back(state.z.size());
        return out;
    };
    auto log_removal = [&](int i, RemovalEvent::Reason why) {
        remove_index(state.z, i);
        state.removals.push_back({t, i, why, step});
        ++out.removals_this_step;
        out.z_sizes.push_back(state.z.size());
    };

    out.z_sizes.push_back(state.z.size());
    Attempt a = attempt(rows_for(state.z), cfg, u_nominal);
    if (a.ok) return finish(a);

    // Pairwise cross-checks in ascending (i, j).
    const int m = bank.m();
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            const bool has_i = std::find(state.z.begin(), state.z.end(), i) != state.z.end();
            const bool has_j = std::find(state.z.begin(), state.z.end(), j) != state.z.end();
            if (!has_i || !has_j || state.z.size() <= 1) continue;
            const double alpha = cfg.alpha(i, j);
            const auto dist = pairwise_distance(bank, i, j);
            if (!(dist[0] > alpha)) continue;
            const bool i_far = dist[1] > 0.5 * alpha;
            const bool j_far = dist[2] > 0.5 * alpha;
            int drop;
            if (i_far && j_far)
                drop = dist[1] >= dist[2] ? i : j;
            else
                drop = i_far ? i : j;
            log_removal(drop, RemovalEvent::Reason::Pairwise);
            a = attempt(rows_for(state.z), cfg, u_nominal);
            if (a.ok) return finish(a);
        }
    }

    // Residue fallback: drop the pattern whose filter explains the data worst.
    while (state.z.size() > 1) {
        int worst = state.z.front();
        for (int i : state.z)
            if (bank.residue(i) > bank.residue(worst)) worst = i;
        log_removal(worst, RemovalEvent::Reason::Residue);
        a = attempt(rows_for(state.z), cfg, u_nominal);
        if (a.ok) return finish(a);
    }

    out.u = Vec::Zero(u_nominal.size());
    out.rows = plain_rows(rows_for(state.z));
    out.any_active = true;
    out.degraded = true;
    out.z_sizes.push_back(state.z.size());
    return out;
}

StepOutcome baseline_step(const EkfBank& bank, const BarrierNetwork& net, const ControlAffineSdeSystem& sys,
                          const ControllerConfig& cfg, const Vec& u_nominal) {
    StepOutcome out;
    const auto pc = make_constraint(bank.full(), net, sys, cfg.margins.gamma.front(), cfg.margins.bbar.front(), 0);
    const auto gated = activation_gate({pc}, cfg.delta);
    const Attempt a = attempt(gated, cfg, u_nominal);
    out.rows = a.rows;
    out.any_active = !a.rows.empty();
    if (a.ok) {
        out.u = a.u;
    } else {
        out.u = Vec::Zero(u_nominal.size());
        out.degraded = true;
    }
    return out;
}

ClosedLoopLog run_closed_loop(const ClosedLoopSetup& setup, const BarrierNetwork& net, const ControllerConfig& cfg,
                              const SimClock& clock, const Vec& x0) {
    clock.validate();
    const auto& sys = *setup.system;
    const auto& safety = *setup.safety;
    const bool ft = setup.kind == ControllerKind::FaultTolerant;
    setup.attack.validate(sys.q);
    if (ft) cfg.validate(setup.attack.m());
    if (!setup.nominal) throw ConfigError("closed loop requires a nominal policy");

    CounterRng plant_rng(clock.rng_seed, Stream::Plant);
    CounterRng meas_rng(clock.rng_seed, Stream::Measurement);
    CounterRng attack_rng(clock.rng_seed, Stream::Attack);
    const CounterRng filter_rng(clock.rng_seed, Stream::FilterInit);

    const std::vector<IndexSet> patterns = ft ? setup.attack.patterns : std::vector<IndexSet>{};
    EkfBank bank = EkfBank::initialize(sys, patterns, x0, filter_rng, setup.p0_scale, setup.init_var,
                                       setup.residue_window);
    ConflictState state = ConflictState::all(bank.m());

    ClosedLoopLog log;
    log.pattern_active = setup.attack.active;
    Vec x = x0;
    const long steps = clock.steps();
    for (long k = 0; k <= steps; ++k) {
        const double t = clock.t + static_cast<double>(k) * clock.dt;
        const double hx = safety.h(x);
        log.min_h = std::min(log.min_h, hx);
        if (k == steps) break;

        const Vec u_nom = setup.nominal(t, bank.full().xhat);
        StepOutcome so;
        if (ft) {
            const std::size_t before = state.removals.size();
            so = control_step(t, k, bank, net, sys, cfg, state, u_nom);
            for (std::size_t e = before; e < state.removals.size(); ++e) log.removals.push_back(state.removals[e]);
            const bool monotone = std::is_sorted(so.z_sizes.rbegin(), so.z_sizes.rend());
            const bool reset_ok = cfg.sticky_removals || so.z_sizes.front() == static_cast<std::size_t>(bank.m());
            if (!monotone || !reset_ok || state.z.empty()) log.z_invariants_ok = false;
        } else {
            so = baseline_step(bank, net, sys, cfg, u_nom);
        }
        log.any_degraded = log.any_degraded || so.degraded;

        const Vec a = setup.attack.signal(t, x, sys.q, attack_rng);
        const Vec dy = step_output(sys, x, a, clock.dt, meas_rng.normals(sys.q));

        log.t.push_back(t);
        log.x.push_back(x);
        log.y.push_back(dy / clock.dt);
        std::vector<Vec> est;
        for (int s = 0; s < bank.size(); ++s) est.push_back(bank.filter(s).xhat);
        log.xhat.push_back(std::move(est));
        log.z.push_back(ft ? state.bitmask() : 1u);
        log.u.push_back(so.u);
        log.h.push_back(hx);
        log.b.push_back(net.forward(bank.full().xhat));
        log.degraded.push_back(so.degraded);

        try {
            x = step_state(sys, x, so.u, clock.dt, plant_rng.normals(sys.n));
        } catch (const IntegrationDiverged& e) {
            throw IntegrationDiverged(e.what(), e.state(), k);
        }
        try {
            bank.step(sys, dy, so.u, clock.dt);
        } catch (const FilterDiverged& e) {
            throw FilterDiverged(std::string(e.what()) + " at step " + std::to_string(k), e.filter_id());
        }
    }
    log.safe = log.min_h >= 0.0;
    return log;
}

}  // namespace ftb
