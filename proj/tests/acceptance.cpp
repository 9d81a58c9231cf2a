// End-to-end acceptance run: oracles, training, falsification, campaigns and
// reproducibility. Prints one PASS/FAIL line per criterion and always exits 0
// once every criterion has been reported; the verdicts are also written to
// <work>/acceptance.json.

#include "ftb/barrier.hpp"
#include "ftb/campaign.hpp"
#include "ftb/estimation.hpp"
#include "ftb/io.hpp"
#include "ftb/qp.hpp"
#include "ftb/scenarios.hpp"
#include "ftb/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace ftb;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ------------------------------------------------------------------ oracles

BarrierNetwork perturbed_net(int n, std::uint64_t seed) {
    auto net = BarrierNetwork::random({n, 16, 16, 1}, seed);
    CounterRng rng(seed, Stream::NetworkInit);
    for (int k = 0; k < net.param_count(); ++k) net.params()[k] += 0.1 * rng.normal();
    return net;
}

Verdict derivative_suite() {
    const Stopwatch sw;
    CounterRng rng(2, Stream::Falsifier);
    double grad_err = 0.0, hess_err = 0.0;
    int pairs = 0;
    for (int n : {3, 6}) {
        for (int trial = 0; trial < 100; ++trial, ++pairs) {
            const auto net = perturbed_net(n, 1000 * n + trial);
            Vec x(n);
            for (int i = 0; i < n; ++i) x[i] = rng.uniform(-1.5, 1.5);
            const auto d = net.derivatives(x);
            const double h = 1e-5;
            for (int i = 0; i < n; ++i) {
                Vec e = Vec::Zero(n);
                e[i] = h;
                const double g = (net.forward(x + e) - net.forward(x - e)) / (2 * h);
                grad_err = std::max(grad_err, std::abs(d.grad[i] - g));
                const Vec hc = (net.input_gradient(x + e) - net.input_gradient(x - e)) / (2 * h);
                hess_err = std::max(hess_err, (d.hess.col(i) - hc).cwiseAbs().maxCoeff());
            }
        }
    }

    // full training loss on a 16-sample batch; a tight input box keeps the feasibility term active
    const auto sc = dubins_scenario();
    auto net = BarrierNetwork::random({3, 12, 12, 1}, 8);
    CounterRng prng(8, Stream::Falsifier);
    for (int k = 0; k < net.param_count(); ++k) net.params()[k] += 0.05 * prng.normal();
    Dataset data;
    data.box = sc.config.box;
    data.samples.resize(3, 16);
    for (int k = 0; k < 16; ++k)
        for (int i = 0; i < 3; ++i) data.samples(i, k) = prng.uniform(-2.0, 2.0);
    FeasibilityProblem problem = sc.feasibility_problem();
    problem.u_bounds = InputBox{Vec::Constant(1, -0.05), Vec::Constant(1, 0.05)};
    TrainingConfig cfg = sc.config.training;
    cfg.boundary_band = 10.0;
    const BarrierMargins margins{{0.002, 0.0015}, {0.01, 0.02}};
    std::vector<int> cols(16);
    for (int k = 0; k < 16; ++k) cols[static_cast<std::size_t>(k)] = k;
    const Vec g = total_loss_gradient(net, margins, data, cols, *sc.safety, problem, cfg, cfg.boundary_band);
    auto total = [&](const BarrierNetwork& b) {
        return evaluate_losses(b, margins, data, *sc.safety, problem, cfg, 0).total;
    };
    const bool lf_active = evaluate_losses(net, margins, data, *sc.safety, problem, cfg, 0).lf() > 0.0;
    double loss_err = 0.0;
    for (int k = 0; k < net.param_count(); ++k) {
        auto plus = net, minus = net;
        plus.params()[k] += 1e-6;
        minus.params()[k] -= 1e-6;
        const double fd = (total(plus) - total(minus)) / 2e-6;
        loss_err = std::max(loss_err, std::abs(g[k] - fd) / std::max(1.0, std::abs(fd)));
    }
    const double t = sw.seconds();
    const bool pass = grad_err <= 1e-6 && hess_err <= 1e-5 && loss_err <= 1e-4 && lf_active && t < 30.0;
    return {pass, fmt("%d pairs: grad %.2e (<=1e-6), hess %.2e (<=1e-5); loss grad rel %.2e (<=1e-4, "
                      "feasibility term %s); %.1f s (<30)",
                      pairs, grad_err, hess_err, loss_err, lf_active ? "active" : "INACTIVE", t)};
}

ControlAffineSdeSystem oscillator() {
    ControlAffineSdeSystem s;
    s.n = 2;
    s.p = 1;
    s.q = 3;
    Mat A(2, 2);
    A << 0.0, 1.0, -2.0, -0.3;
    s.drift = [A](const Vec& x) -> Vec { return A * x; };
    s.input_map = [](const Vec&) {
        Mat g(2, 1);
        g << 0.0, 1.0;
        return g;
    };
    s.diffusion = 0.2 * Mat::Identity(2, 2);
    s.output_matrix = Mat(3, 2);
    s.output_matrix << 1.0, 0.0, 1.0, 0.0, 0.0, 1.0;
    s.output_noise = Vec::Constant(3, 0.3).asDiagonal();
    return s;
}

Verdict estimation_oracle() {
    const Stopwatch sw;
    const auto sys = oscillator();
    Mat A(2, 2);
    A << 0.0, 1.0, -2.0, -0.3;
    Mat B(2, 1);
    B << 0.0, 1.0;
    const Mat& C = sys.output_matrix;
    const Mat Q = sys.diffusion * sys.diffusion.transpose();
    const Mat Ri = (sys.output_noise * sys.output_noise.transpose()).inverse();

    Vec x0(2);
    x0 << 0.5, -0.2;
    const Mat P0 = 0.3 * Mat::Identity(2, 2);
    EkfState ekf = make_ekf(sys, {}, x0, P0);
    Vec kx = x0;
    Mat kP = P0;
    CounterRng rng(5, Stream::Measurement);
    const double dt = 0.01, h = dt / 100;
    Vec x_true(2);
    x_true << 1.0, 0.0;
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const Vec u = Vec::Constant(1, std::sin(0.1 * k));
        const Vec dy = step_output(sys, x_true, Vec::Zero(3), dt, rng.normals(3));
        ekf = ekf_step(ekf, sys, u, dy, dt);
        // Kalman-Bucy flow with RK4 on dt/100
        const Vec z = dy / dt;
        auto fx = [&](const Vec& x, const Mat& P) -> Vec { return A * x + B * u + P * C.transpose() * Ri * (z - C * x); };
        auto fP = [&](const Mat& P) -> Mat {
            return A * P + P * A.transpose() + Q - P * C.transpose() * Ri * C * P;
        };
        for (int i = 0; i < 100; ++i) {
            const Vec x1 = fx(kx, kP);
            const Mat p1 = fP(kP);
            const Vec x2 = fx(kx + h / 2 * x1, kP + h / 2 * p1);
            const Mat p2 = fP(kP + h / 2 * p1);
            const Vec x3 = fx(kx + h / 2 * x2, kP + h / 2 * p2);
            const Mat p3 = fP(kP + h / 2 * p2);
            const Vec x4 = fx(kx + h * x3, kP + h * p3);
            const Mat p4 = fP(kP + h * p3);
            kx += h / 6 * (x1 + 2 * x2 + 2 * x3 + x4);
            kP += h / 6 * (p1 + 2 * p2 + 2 * p3 + p4);
        }
        worst = std::max({worst, (ekf.xhat - kx).cwiseAbs().maxCoeff(), (ekf.P - kP).cwiseAbs().maxCoeff()});
        x_true = step_state(sys, x_true, u, dt, rng.normals(2));
    }

    EkfState a = make_ekf(sys, {1}, x0, 0.1 * Mat::Identity(2, 2));
    EkfState b = a;
    CounterRng grng(9, Stream::Measurement);
    bool exact = true;
    for (int k = 0; k < 200 && exact; ++k) {
        const Vec dy = 0.01 * grng.normals(3);
        Vec bad = dy;
        bad[1] = k % 2 ? std::numeric_limits<double>::quiet_NaN() : 1e12;
        ekf_advance(a, sys, Vec::Zero(1), restrict_rows(dy, a.sensors), 0.01);
        ekf_advance(b, sys, Vec::Zero(1), restrict_rows(bad, b.sensors), 0.01);
        exact = (a.xhat.array() == b.xhat.array()).all() && (a.P.array() == b.P.array()).all();
    }
    const double t = sw.seconds();
    return {worst <= 1e-6 && exact && t < 10.0,
            fmt("Kalman-Bucy max error %.2e over 1 s (<=1e-6); exclusion under garbage %s; %.1f s (<10)", worst,
                exact ? "bit-exact" : "DIFFERS", t)};
}

// Smallest feasible norm over the 0.01-step grid, restricted to the cube that
// can hold a point no longer than `radius`.
double grid_min_norm(const std::vector<FeasibilityRow>& rows, int p, double radius) {
    const double step = 0.01;
    const int half = static_cast<int>(std::ceil(radius / step)) + 1;
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> idx(static_cast<std::size_t>(p), -half);
    Vec u(p);
    while (true) {
        for (int d = 0; d < p; ++d) u[d] = step * idx[static_cast<std::size_t>(d)];
        const double nu = u.squaredNorm();
        if (nu < best) {
            bool ok = true;
            for (const auto& r : rows)
                if (r.xi + r.lambda.dot(u) < 0.0) {
                    ok = false;
                    break;
                }
            if (ok) best = nu;
        }
        int d = 0;
        while (d < p && ++idx[static_cast<std::size_t>(d)] > half) idx[static_cast<std::size_t>(d++)] = -half;
        if (d == p) break;
    }
    return std::sqrt(best);
}

Verdict qp_oracle() {
    const Stopwatch sw;
    CounterRng rng(1, Stream::Falsifier);
    double closed_err = 0.0;
    for (int k = 0; k < 200; ++k) {
        const int p = 1 + k % 4;
        FeasibilityRow r;
        r.lambda = rng.normals(p);
        r.xi = -rng.uniform(0.01, 3.0);
        const auto sol = solve_min_norm({r}, p);
        const Vec expect = -r.xi * r.lambda / r.lambda.squaredNorm();
        closed_err = std::max(closed_err, (sol.u - expect).cwiseAbs().maxCoeff() / std::max(1.0, expect.norm()));
    }

    int checked = 0, beaten = 0;
    double kkt = 0.0, worst_gap = -std::numeric_limits<double>::infinity();
    CounterRng irng(2, Stream::Falsifier);
    while (checked < 50) {
        const int p = checked < 25 ? 2 : 3;
        const int m = 2 + static_cast<int>(irng.uniform() * 3);
        std::vector<FeasibilityRow> rows;
        for (int i = 0; i < m; ++i) rows.push_back({irng.normals(p), irng.uniform(-0.6, 0.3), i});
        const auto sol = solve_min_norm(rows, p);
        if (sol.status == QpStatus::Infeasible || !feasible(rows, sol.u)) continue;
        ++checked;
        kkt = std::max(kkt, kkt_residual(rows, sol));
        const double grid = grid_min_norm(rows, p, sol.u.norm() + 0.02);
        const double gap = sol.u.norm() - grid;
        worst_gap = std::max(worst_gap, gap);
        if (gap > 1e-12) ++beaten;
    }
    const double t = sw.seconds();
    return {closed_err <= 1e-14 && beaten == 0 && kkt <= 1e-8 && t < 10.0,
            fmt("half-space closed form rel error %.1e (<=1e-14); grid beats QP on %d/%d instances (max norm "
                "gap %+.2e); KKT %.1e (<=1e-8); %.1f s (<10)",
                closed_err, beaten, checked, worst_gap, kkt, t)};
}

// ------------------------------------------------------------------ training

struct Trained {
    ScenarioConfig cfg;
    ScenarioBundle sc;
    Dataset data;
    BarrierNetwork net;
    TrainingResult res;
    double seconds = 0.0;
};

Trained train_scenario(ScenarioConfig cfg, bool baseline = false) {
    const Stopwatch sw;
    cfg.validate();
    ScenarioBundle sc = build_scenario(cfg);
    const TrainingConfig tc = baseline ? sc.baseline_training() : cfg.training;
    const FeasibilityProblem fp = baseline ? sc.baseline_problem() : sc.feasibility_problem();
    Dataset data = sample_dataset(cfg.box, cfg.grid_length, tc.seed);
    std::vector<int> sizes{sc.system->n};
    sizes.insert(sizes.end(), tc.hidden.begin(), tc.hidden.end());
    sizes.push_back(1);
    BarrierNetwork net = BarrierNetwork::random(sizes, CounterRng(tc.seed, Stream::NetworkInit).next_u64());
    TrainingResult res = train(net, data, tc, *sc.safety, fp);
    return {cfg, std::move(sc), std::move(data), std::move(net), std::move(res), sw.seconds()};
}

ScenarioConfig acceptance_config(const std::string& id) {
    ScenarioConfig cfg = default_config(id);
    if (id == "dubins") cfg.grid_length = Vec::Constant(3, 0.25);
    return cfg;
}

// trailing mean over up to 50 epochs, checked on the second half of the run
bool moving_average_non_increasing(const std::vector<double>& v, double& worst_rise) {
    const std::size_t w = 50;
    std::vector<double> ma(v.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        sum += v[k];
        if (k >= w) sum -= v[k - w];
        ma[k] = sum / static_cast<double>(std::min(k + 1, w));
    }
    worst_rise = 0.0;
    for (std::size_t k = std::max<std::size_t>(v.size() / 2, 1); k < v.size(); ++k)
        worst_rise = std::max(worst_rise, ma[k] - ma[k - 1]);
    return worst_rise <= 1e-12;
}

Verdict training_convergence(const std::map<std::string, Trained>& runs) {
    bool pass = true;
    std::string detail;
    for (const auto& [id, r] : runs) {
        std::vector<double> obj;
        for (const auto& e : r.res.history) obj.push_back(e.lf() + e.lc);
        const double last = obj.empty() ? std::numeric_limits<double>::infinity() : obj.back();
        double rise = 0.0;
        const bool mono = moving_average_non_increasing(obj, rise);
        const bool ok = last <= 1e-3 && r.res.epochs_run <= 2000 && mono && r.seconds <= 600.0;
        pass &= ok;
        detail += fmt("%s N=%d: Lf+Lc %.2e after %d epochs (<=1e-3 within 2000), moving-average rise %.1e, "
                      "%.0f s; ",
                      id.c_str(), r.data.size(), last, r.res.epochs_run, rise, r.seconds);
    }
    return {pass, detail};
}

BarrierMargins margins_for(const Trained& r, const std::vector<double>& gammas) {
    return refresh_margins(r.net, gammas, r.cfg.box, r.cfg.training.bbar_resolution, r.cfg.training.seed);
}

Verdict correctness_property(const std::map<std::string, Trained>& runs) {
    bool pass = true;
    std::string detail;
    for (const auto& [id, r] : runs) {
        const double lc = loss_correctness(r.net, r.data, *r.sc.safety);
        CounterRng rng(r.cfg.training.seed, Stream::Falsifier);
        const int n = r.sc.system->n, samples = 100000;
        int bad = 0;
        Vec x(n);
        for (int k = 0; k < samples; ++k) {
            for (int i = 0; i < n; ++i) x[i] = rng.uniform(r.cfg.box.lo[i], r.cfg.box.hi[i]);
            if (r.net.forward(x) > 0.0 && r.sc.safety->h(x) < 0.0) ++bad;
        }
        const double frac = static_cast<double>(bad) / samples;
        const auto rep = falsify(r.net, margins_for(r, r.cfg.training.gammas), r.sc, r.sc.feasibility_problem(),
                                 0.5 * r.cfg.grid_length);
        const bool ok = lc == 0.0 && frac <= 0.01 && rep.ok();
        pass &= ok;
        detail += fmt("%s: training Lc %.3g (==0), fresh-sample violations %d/%d = %.4f (<=0.01), check %ld points "
                      "%d correctness %d uncontrollable (exit %d); ",
                      id.c_str(), lc, bad, samples, frac, rep.points, rep.correctness, rep.uncontrollable,
                      rep.ok() ? 0 : 3);
    }
    return {pass, detail};
}

// ------------------------------------------------------------------ campaigns

struct Campaigns {
    CampaignResult dubins;
    CampaignResult cwh;
    double seconds = 0.0;
};

std::string cell_line(const CellSummary& s) {
    return fmt("%s %d/%d", s.condition.label().c_str(), s.safe_runs, s.runs);
}

Verdict closed_loop_safety(const Campaigns& c) {
    bool ft_ok = true, baseline_fails = false, cwh_ok = true;
    std::string detail = "dubins: ";
    for (const auto& s : c.dubins.cells) {
        detail += cell_line(s) + ", ";
        if (!s.condition.pattern) continue;
        if (s.condition.kind == ControllerKind::FaultTolerant) ft_ok &= s.safe_fraction >= 0.9;
        else baseline_fails |= s.safe_runs < s.runs;
    }
    detail += "cwh: ";
    for (const auto& s : c.cwh.cells) {
        detail += cell_line(s) + ", ";
        if (s.condition.kind == ControllerKind::FaultTolerant) cwh_ok &= s.safe_runs >= 90;
    }
    const bool pass = ft_ok && baseline_fails && cwh_ok && c.seconds <= 900.0;
    detail += fmt("ft under attack >= 0.90: %s; baseline unsafe under attack: %s; cwh >= 90/100: %s; %.0f s (<=900)",
                  ft_ok ? "yes" : "no", baseline_fails ? "yes" : "no", cwh_ok ? "yes" : "no", c.seconds);
    return {pass, detail};
}

std::pair<int, int> removals_of(const CampaignResult& r, int pattern, int index) {
    int total = 0, hits = 0;
    for (std::size_t k = 0; k < r.cells.size(); ++k) {
        const auto& cond = r.cells[k].condition;
        if (cond.kind != ControllerKind::FaultTolerant || cond.pattern != pattern) continue;
        for (const auto& v : r.verdicts[k])
            for (const auto& e : v.removals) {
                ++total;
                hits += e.index == index;
            }
    }
    return {total, hits};
}

bool z_invariants(const CampaignResult& r, int m, long& steps) {
    const std::uint32_t all = (1u << m) - 1u;
    bool ok = true;
    for (std::size_t k = 0; k < r.cells.size(); ++k) {
        ok &= r.cells[k].z_invariants_ok;
        if (k < r.logs.size())
            for (const auto& log : r.logs[k])
                for (std::uint32_t z : log.z) {
                    ++steps;
                    ok &= z != 0u && (z & ~all) == 0u;
                }
    }
    return ok;
}

Verdict conflict_resolution(const Campaigns& c) {
    // pattern r_1 is the first configured pattern, stored at 0-based index 0
    const auto [total, hits] = removals_of(c.dubins, 0, 0);
    const auto [cwh_total, cwh_hits] = removals_of(c.cwh, 0, 0);
    long steps = 0;
    const bool inv = z_invariants(c.dubins, 2, steps) && z_invariants(c.cwh, 2, steps);
    const bool frac_ok = total > 0 && hits >= 0.9 * total;
    std::string frac = total > 0 ? fmt("%.3f", static_cast<double>(hits) / total) : std::string("undefined");
    return {frac_ok && inv,
            fmt("dubins ft/r1: %d of %d removals eliminate r1 (fraction %s, need >= 0.90); cwh ft/r1 for reference: "
                "%d of %d; Z invariants on %ld logged steps: %s",
                hits, total, frac.c_str(), cwh_hits, cwh_total, steps, inv ? "hold" : "VIOLATED")};
}

// ------------------------------------------------------------------ determinism

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(FTB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Compares every file of two output directories; manifests only by hash since they carry wall time.
bool same_outputs(const fs::path& a, const fs::path& b, int& files, std::string& diff) {
    bool same = true;
    for (const auto& e : fs::directory_iterator(a)) {
        const auto name = e.path().filename();
        ++files;
        if (!fs::exists(b / name)) {
            same = false;
            diff += name.string() + " missing; ";
            continue;
        }
        if (name == "manifest.json") {
            const auto ha = nlohmann::json::parse(read_text(e.path()))["hash"];
            const auto hb = nlohmann::json::parse(read_text(b / name))["hash"];
            if (ha != hb) {
                same = false;
                diff += "manifest hash; ";
            }
        } else if (read_text(e.path()) != read_text(b / name)) {
            same = false;
            diff += name.string() + " differs; ";
        }
    }
    return same;
}

Verdict determinism(const fs::path& work) {
    const Stopwatch sw;
    const fs::path dir = work / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string detail, diff;
    int files = 0;
    bool pass = true;
    const std::string train = "train --scenario dubins --reduced --quiet --out ";
    for (const char* run : {"train_a", "train_b"}) {
        const int code = run_cli(train + (dir / run).string(), dir / (std::string(run) + ".log"));
        if (code != 0) {
            pass = false;
            detail += fmt("%s exit %d; ", run, code);
        }
    }
    pass &= same_outputs(dir / "train_a", dir / "train_b", files, diff);

    const std::string camp = "campaign --scenario dubins --runs 20 --trajectories 3 --model " +
                             (dir / "train_a" / "model.bin").string() + " --out ";
    for (const char* run : {"campaign_a", "campaign_b"}) {
        const int code = run_cli(camp + (dir / run).string(), dir / (std::string(run) + ".log"));
        if (code != 0) {
            pass = false;
            detail += fmt("%s exit %d; ", run, code);
        }
    }
    pass &= same_outputs(dir / "campaign_a", dir / "campaign_b", files, diff);
    detail += fmt("%d output files compared across reruns: %s; %.0f s", files,
                  diff.empty() ? "byte-identical" : diff.c_str(), sw.seconds());
    return {pass && diff.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance run"};
    std::string work = "acceptance_work";
    app.add_option("--work", work, "scratch directory for models and outputs");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    std::map<int, Verdict> verdicts;
    auto record = [&](int id, const char* name, const std::function<Verdict()>& fn) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        std::printf("criterion %d %-24s %s  %s\n", id, name, v.pass ? "PASS" : "FAIL", v.detail.c_str());
        std::fflush(stdout);
        verdicts[id] = v;
    };

    record(1, "derivative-suite", derivative_suite);
    record(2, "estimation-oracle", estimation_oracle);
    record(3, "qp-oracle", qp_oracle);

    std::map<std::string, Trained> runs;
    std::optional<Trained> dubins_baseline;
    std::string train_error;
    try {
        for (const std::string id : {"dubins", "cwh"}) {
            auto r = train_scenario(acceptance_config(id));
            r.net.save_binary(fs::path(work) / (id + "_model.bin"));
            runs.emplace(id, std::move(r));
        }
        dubins_baseline = train_scenario(acceptance_config("dubins"), true);
        dubins_baseline->net.save_binary(fs::path(work) / "dubins_baseline.bin");
    } catch (const std::exception& e) {
        train_error = e.what();
    }
    auto need_training = [&] {
        if (!train_error.empty()) throw Error("training failed: " + train_error);
    };

    record(4, "training-convergence", [&] {
        need_training();
        return training_convergence(runs);
    });
    record(5, "correctness", [&] {
        need_training();
        return correctness_property(runs);
    });

    Campaigns camp;
    std::string camp_error;
    try {
        need_training();
        const Stopwatch sw;
        CampaignOptions opt;
        opt.runs = 100;
        opt.keep_logs = true;
        const auto& d = runs.at("dubins");
        const ControllerModel ft{&d.net, margins_for(d, d.cfg.training.gammas)};
        const ControllerModel base{&dubins_baseline->net,
                                   margins_for(*dubins_baseline, {d.cfg.training.gammas.front()})};
        camp.dubins = run_campaign(d.sc, ft, base, opt);
        const auto& c = runs.at("cwh");
        camp.cwh = run_campaign(c.sc, {&c.net, margins_for(c, c.cfg.training.gammas)}, std::nullopt, opt);
        camp.seconds = sw.seconds();
        write_text(fs::path(work) / "dubins_aggregate.json", campaign_to_json(camp.dubins, "dubins", 0) + "\n");
        write_text(fs::path(work) / "cwh_aggregate.json", campaign_to_json(camp.cwh, "cwh", 0) + "\n");
    } catch (const std::exception& e) {
        camp_error = e.what();
    }
    auto need_campaigns = [&] {
        if (!camp_error.empty()) throw Error("campaign failed: " + camp_error);
    };
    record(6, "closed-loop-safety", [&] {
        need_campaigns();
        return closed_loop_safety(camp);
    });
    record(7, "conflict-resolution", [&] {
        need_campaigns();
        return conflict_resolution(camp);
    });
    record(8, "determinism", [&] { return determinism(work); });

    nlohmann::json out = nlohmann::json::object();
    int passed = 0;
    for (const auto& [id, v] : verdicts) {
        out[std::to_string(id)] = {{"pass", v.pass}, {"detail", v.detail}};
        passed += v.pass;
    }
    write_text(fs::path(work) / "acceptance.json", out.dump(2) + "\n");
    std::printf("%d of %zu criteria passed\n", passed, verdicts.size());
    return 0;
}
