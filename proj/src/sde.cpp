#include "ftb/sde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ftb {

void ControlAffineSdeSystem::validate() const {
    if (n < 1 || p < 1 || q < 1) throw ConfigError("system dimensions must be >= 1");
    if (!drift || !input_map) throw ConfigError("system requires drift and input_map");
    if (diffusion.rows() != n || diffusion.cols() != n) throw ConfigError("diffusion must be n x n");
    if (output_matrix.rows() != q || output_matrix.cols() != n) throw ConfigError("output_matrix must be q x n");
    if (output_noise.rows() != q || output_noise.cols() != q) throw ConfigError("output_noise must be q x q");
}

void AttackModel::validate(int q) const {
    if (patterns.empty()) throw ConfigError("attack model needs at least one pattern");
    if (generators.size() != patterns.size()) throw ConfigError("one attack generator per pattern required");
    for (std::size_t i = 0; i < patterns.size(); ++i) {
        if (patterns[i].empty()) throw ConfigError("attack pattern must name at least one sensor");
        for (int k : patterns[i])
            if (k < 0 || k >= q) throw ConfigError("attack pattern sensor index out of range");
        for (std::size_t j = 0; j < i; ++j) {
            IndexSet a = patterns[i], b = patterns[j];
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            if (a == b) throw ConfigError("attack patterns must be distinct");
        }
    }
    if (active && (*active < 0 || *active >= m())) throw ConfigError("active attack pattern out of range");
}

Vec AttackModel::signal(double t, const Vec& x, int q, CounterRng& rng) const {
    Vec a = Vec::Zero(q);
    if (!active) return a;
    const auto& gen = generators[*active];
    for (int k : patterns[*active]) {
        switch (gen.kind) {
            case AttackSignal::Kind::Constant: a[k] = gen.mean; break;
            case AttackSignal::Kind::Gaussian: a[k] = gen.mean + gen.stddev * rng.normal(); break;
            case AttackSignal::Kind::Callback: a[k] = gen.callback ? gen.callback(t, x) : 0.0; break;
        }
    }
    return a;
}

bool StateBox::contains(const Vec& x) const {
    return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

void SimClock::validate() const {
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (horizon < t) throw ConfigError("horizon must not precede start time");
}

long SimClock::steps() const { return std::lround((horizon - t) / dt); }

Vec step_state(const ControlAffineSdeSystem& sys, const Vec& x, const Vec& u, double dt, const Vec& noise) {
    Vec next = x + sys.closed_drift(x, u) * dt + sys.diffusion * (std::sqrt(dt) * noise);
    if (!next.allFinite()) {
        std::ostringstream os;
        os << "integration diverged at state [" << x.transpose() << "]";
        throw IntegrationDiverged(os.str(), x);
    }
    return next;
}

Vec step_output(const ControlAffineSdeSystem& sys, const Vec& x, const Vec& attack_signal, double dt,
                const Vec& noise) {
    return (sys.output_matrix * x + attack_signal) * dt + sys.output_noise * (std::sqrt(dt) * noise);
}

TrajectoryLog run_open_loop(const ControlAffineSdeSystem& sys, const AttackModel& attack, const OpenLoopPolicy& policy,
                            const SimClock& clock, const Vec& x0) {
    clock.validate();
    CounterRng plant_rng(clock.rng_seed, Stream::Plant);
    CounterRng meas_rng(clock.rng_seed, Stream::Measurement);
    CounterRng attack_rng(clock.rng_seed, Stream::Attack);

    TrajectoryLog log;
    log.pattern_active = attack.active;
    const long steps = clock.steps();
    Vec x = x0;
    double t = clock.t;
    for (long k = 0; k < steps; ++k) {
        const Vec u = policy(t, std::span<const Vec>(log.y));
        const Vec a = attack.signal(t, x, sys.q, attack_rng);
        const Vec dy = step_output(sys, x, a, clock.dt, meas_rng.normals(sys.q));
        log.t.push_back(t);
        log.x.push_back(x);
        log.y.push_back(dy / clock.dt);
        log.u.push_back(u);
        log.a.push_back(a);
        try {
            x = step_state(sys, x, u, clock.dt, plant_rng.normals(sys.n));
        } catch (const IntegrationDiverged& e) {
            throw IntegrationDiverged(e.what(), e.state(), k);
        }
        t = clock.t + static_cast<double>(k + 1) * clock.dt;
    }
    return log;
}

}  // namespace ftb
