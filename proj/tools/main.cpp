// Command-line entry point: train | campaign | check | selftest | config.

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
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace ftb;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNotConverged = 2;
constexpr int kExitCounterexamples = 3;

struct Common {
    std::string scenario;  ///< empty: take it from --config, else dubins
    std::string config;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out = "out";
    bool reduced = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--scenario", c.scenario, "dubins or cwh");
    app->add_option("--config", c.config, "scenario config file (JSON); missing keys keep defaults");
    app->add_option("--seed", c.seed, "base seed")->each([&c](const std::string&) { c.seed_given = true; });
    app->add_option("--out", c.out, "output directory");
    app->add_flag("--reduced", c.reduced, "use the reduced training grid of the scenario");
}

ScenarioConfig resolve_config(const Common& c) {
    ScenarioConfig cfg =
        c.config.empty() ? default_config(c.scenario.empty() ? "dubins" : c.scenario) : load_config(c.config);
    if (!c.scenario.empty() && cfg.id != c.scenario)
        throw ConfigError("--scenario disagrees with the config id '" + cfg.id + "'");
    if (c.reduced) {
        if (!(cfg.reduced_grid_length > 0.0)) throw ConfigError("reduced_grid_length: scenario has no reduced grid");
        cfg.grid_length = Vec::Constant(cfg.grid_length.size(), cfg.reduced_grid_length);
    }
    cfg.validate();
    return cfg;
}

RunManifest manifest_for(const std::string& command, const Common& c, const ScenarioConfig& cfg, std::uint64_t seed,
                         std::vector<std::string> extra) {
    RunManifest m;
    m.command = command;
    m.scenario = cfg.id;
    m.config_path = c.config;
    m.resolved_config = config_to_json(cfg);
    m.seed = seed;
    m.out_dir = c.out;
    m.extra = std::move(extra);
    return m;
}

BarrierNetwork load_model(const std::string& path, int n) {
    if (path.empty()) throw ConfigError("--model is required");
    if (!fs::exists(path)) throw ConfigError("model file not found: " + path);
    BarrierNetwork net = BarrierNetwork::load_binary(path);
    if (net.input_dim() != n) throw ConfigError("model input dimension does not match the scenario");
    return net;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- train

int cmd_train(const Common& c, bool baseline, int epochs_override, bool quiet) {
    const auto t0 = std::chrono::steady_clock::now();
    ScenarioConfig cfg = resolve_config(c);
    if (c.seed_given) cfg.training.seed = c.seed;
    if (epochs_override > 0) cfg.training.epochs = epochs_override;
    cfg.validate();
    const ScenarioBundle sc = build_scenario(cfg);

    const TrainingConfig tc = baseline ? sc.baseline_training() : cfg.training;
    const FeasibilityProblem fp = baseline ? sc.baseline_problem() : sc.feasibility_problem();
    const Dataset data = sample_dataset(cfg.box, cfg.grid_length, tc.seed);

    std::vector<int> sizes{sc.system->n};
    sizes.insert(sizes.end(), tc.hidden.begin(), tc.hidden.end());
    sizes.push_back(1);
    BarrierNetwork net = BarrierNetwork::random(sizes, CounterRng(tc.seed, Stream::NetworkInit).next_u64());

    const TrainingResult res = train(net, data, tc, *sc.safety, fp, [&](const LossReport& r) {
        if (!quiet && (r.epoch == 1 || r.epoch % 50 == 0))
            std::fprintf(stderr, "epoch %5d  vol %.4g  lf %.4g  lc %.4g  total %.6g  band %d  |g| %.3g\n", r.epoch,
                         r.vol, r.lf(), r.lc, r.total, r.band_samples, r.grad_norm);
    });

    fs::create_directories(c.out);
    const std::string stem = baseline ? "baseline" : "model";
    net.save_binary(fs::path(c.out) / (stem + ".bin"));
    write_text(fs::path(c.out) / (stem + ".json"), net.to_json() + "\n");
    write_loss_csv(res.history, fs::path(c.out) / (stem + "_loss.csv"));
    nlohmann::json margins = {{"gamma", res.margins.gamma}, {"bbar", res.margins.bbar},
                              {"converged", res.converged}, {"epochs_run", res.epochs_run},
                              {"samples", data.size()}};
    write_text(fs::path(c.out) / (stem + "_summary.json"), margins.dump(2) + "\n");

    RunManifest m = manifest_for("train", c, cfg, tc.seed, {baseline ? "kind=baseline" : "kind=ft"});
    m.wall_time = seconds_since(t0);
    write_manifest(m, c.out);
    const auto& last = res.history.back();
    std::printf("%s: epochs=%d converged=%s lf=%.6g lc=%.6g vol=%.6g wall=%.1fs\n", stem.c_str(), res.epochs_run,
                res.converged ? "yes" : "no", last.lf(), last.lc, last.vol, m.wall_time);
    return res.converged ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------- campaign

BarrierMargins margins_for(const BarrierNetwork& net, const std::vector<double>& gammas, const ScenarioConfig& cfg) {
    return refresh_margins(net, gammas, cfg.box, cfg.training.bbar_resolution, cfg.training.seed);
}

int cmd_campaign(const Common& c, const std::string& model_path, const std::string& baseline_path, int runs,
                 std::optional<int> jobs, int trajectories) {
    const auto t0 = std::chrono::steady_clock::now();
    const ScenarioConfig cfg = resolve_config(c);
    const ScenarioBundle sc = build_scenario(cfg);
    const BarrierNetwork net = load_model(model_path, sc.system->n);
    ControllerModel ft{&net, margins_for(net, cfg.training.gammas, cfg)};
    std::optional<BarrierNetwork> base_net;
    std::optional<ControllerModel> base;
    if (!baseline_path.empty()) {
        base_net = load_model(baseline_path, sc.system->n);
        base = ControllerModel{&*base_net, margins_for(*base_net, {cfg.training.gammas.front()}, cfg)};
    }
    CampaignOptions opt;
    opt.runs = runs;
    opt.base_seed = c.seed;
    opt.jobs = jobs;
    opt.keep_logs = trajectories > 0;
    const CampaignResult res = run_campaign(sc, ft, base, opt);

    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "aggregate.json", campaign_to_json(res, cfg.id, c.seed) + "\n");
    for (std::size_t k = 0; k < res.cells.size(); ++k) {
        std::string label = res.cells[k].condition.label();
        std::replace(label.begin(), label.end(), '/', '_');
        write_text(fs::path(c.out) / ("verdicts_" + label + ".json"), verdicts_to_json(res.verdicts[k]) + "\n");
        for (int r = 0; r < trajectories && r < runs; ++r) {
            const auto& log = res.logs[k][static_cast<std::size_t>(r)];
            const std::string base_name = "traj_" + label + "_" + std::to_string(r);
            write_closed_loop_csv(log, fs::path(c.out) / (base_name + ".csv"));
            write_text(fs::path(c.out) / (base_name + "_events.json"), removal_events_json(log.removals) + "\n");
        }
        const auto& s = res.cells[k];
        std::printf("%-14s safe %3d/%d  min_h(min) %+.4f  removals %d (pairwise %d, residue %d)  degraded %d\n",
                    s.condition.label().c_str(), s.safe_runs, s.runs, s.min_h_min, s.removals, s.pairwise_removals,
                    s.residue_removals, s.degraded_runs);
    }
    RunManifest m = manifest_for("campaign", c, cfg, c.seed,
                                 {"model=" + model_path, "baseline=" + baseline_path, "runs=" + std::to_string(runs)});
    m.wall_time = seconds_since(t0);
    write_manifest(m, c.out);
    return kExitOk;
}

// ---------------------------------------------------------------- check

int cmd_check(const Common& c, const std::string& model_path, double grid_scale) {
    const auto t0 = std::chrono::steady_clock::now();
    const ScenarioConfig cfg = resolve_config(c);
    const ScenarioBundle sc = build_scenario(cfg);
    const BarrierNetwork net = load_model(model_path, sc.system->n);
    const BarrierMargins margins = margins_for(net, cfg.training.gammas, cfg);
    const CheckReport rep = falsify(net, margins, sc, sc.feasibility_problem(), grid_scale * cfg.grid_length);
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "check.json", check_to_json(rep) + "\n");
    RunManifest m = manifest_for("check", c, cfg, c.seed, {"model=" + model_path});
    m.wall_time = seconds_since(t0);
    write_manifest(m, c.out);
    std::printf("check: %ld points, %d correctness violations, %d uncontrollable points%s\n", rep.points,
                rep.correctness, rep.uncontrollable, rep.empty_region ? " (empty region)" : "");
    return rep.ok() ? kExitOk : kExitCounterexamples;
}

// ---------------------------------------------------------------- selftest

bool report(const char* name, bool ok, double value, double tol) {
    std::printf("%-28s %s  (%.3g, tol %.1g)\n", name, ok ? "ok  " : "FAIL", value, tol);
    return ok;
}

int cmd_selftest(std::uint64_t seed) {
    bool all = true;
    CounterRng rng(seed, Stream::Falsifier);
    // derivative oracles
    double grad_err = 0.0, hess_err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int n = trial % 2 ? 6 : 3;
        const BarrierNetwork net = BarrierNetwork::random({n, 16, 16, 1}, rng.next_u64());
        const Vec x = rng.normals(n);
        const auto d = net.derivatives(x);
        for (int i = 0; i < n; ++i) {
            Vec e = Vec::Zero(n);
            e[i] = 1e-5;
            const double fd = (net.forward(x + e) - net.forward(x - e)) / 2e-5;
            grad_err = std::max(grad_err, std::abs(fd - d.grad[i]) / std::max(1.0, std::abs(fd)));
            const Vec gfd = (net.input_gradient(x + e) - net.input_gradient(x - e)) / 2e-5;
            hess_err = std::max(hess_err, (gfd - d.hess.col(i)).lpNorm<Eigen::Infinity>());
        }
    }
    all &= report("input gradient vs FD", grad_err <= 1e-6, grad_err, 1e-6);
    all &= report("input Hessian vs FD", hess_err <= 1e-5, hess_err, 1e-5);

    // QP against a brute-force grid
    double qp_gap = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<FeasibilityRow> rows;
        for (int k = 0; k < 3; ++k) rows.push_back({rng.normals(2), rng.uniform(-1.0, 0.5), k});
        const QpSolution s = solve_min_norm(rows, 2);
        if (s.status == QpStatus::Infeasible) continue;
        double best = std::numeric_limits<double>::infinity();
        const double lim = 2.0 * s.u.lpNorm<Eigen::Infinity>() + 1.0;
        for (double a = -lim; a <= lim; a += 0.01)
            for (double b = -lim; b <= lim; b += 0.01) {
                Vec u(2);
                u << a, b;
                if (feasible(rows, u)) best = std::min(best, u.squaredNorm());
            }
        qp_gap = std::max(qp_gap, s.u.squaredNorm() - best);
    }
    all &= report("QP vs grid (norm gap)", qp_gap <= 1e-12, qp_gap, 1e-12);

    // Kalman gain consistency along a Dubins run
    const ScenarioBundle sc = dubins_scenario();
    EkfBank bank = EkfBank::initialize(*sc.system, sc.attacks.patterns, sc.config.x0, CounterRng(seed, Stream::FilterInit));
    CounterRng meas(seed, Stream::Measurement);
    Vec x = sc.config.x0;
    double gain_err = 0.0;
    for (int k = 0; k < 100; ++k) {
        const Vec u = Vec::Zero(1);
        const Vec dy = step_output(*sc.system, x, Vec::Zero(5), 0.01, meas.normals(5));
        x = step_state(*sc.system, x, u, 0.01, Vec::Zero(3));
        bank.step(*sc.system, dy, u, 0.01);
        for (int s = 0; s < bank.size(); ++s) gain_err = std::max(gain_err, gain_consistency_error(bank.filter(s)));
    }
    all &= report("EKF gain consistency", gain_err <= 1e-9, gain_err, 1e-9);
    return all ? kExitOk : kExitCounterexamples;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fault-tolerant neural barrier toolkit"};
    app.require_subcommand(1);

    Common train_c, camp_c, check_c, cfg_c;
    bool baseline = false, quiet = false;
    int epochs = 0;
    auto* train = app.add_subcommand("train", "train a barrier network");
    add_common(train, train_c);
    train->add_flag("--baseline", baseline, "train the fault-oblivious baseline (single full-sensor pattern)");
    train->add_option("--epochs", epochs, "override the configured epoch budget");
    train->add_flag("--quiet", quiet, "no per-epoch progress");

    std::string model, baseline_model;
    int runs = 100, trajectories = 0;
    std::optional<int> jobs;
    auto* camp = app.add_subcommand("campaign", "seeded closed-loop Monte-Carlo campaign");
    add_common(camp, camp_c);
    camp->add_option("--model", model, "fault-tolerant model file")->required();
    camp->add_option("--baseline-model", baseline_model, "baseline model file");
    camp->add_option("--runs", runs, "runs per condition");
    camp->add_option("--jobs", jobs, "worker threads (default FT_BARRIER_JOBS or all cores)");
    camp->add_option("--trajectories", trajectories, "write the first N trajectory CSVs per condition");

    std::string check_model;
    double grid_scale = 0.5;
    auto* check = app.add_subcommand("check", "dense-sampling falsifier for a trained model");
    add_common(check, check_c);
    check->add_option("--model", check_model, "model file")->required();
    check->add_option("--grid-scale", grid_scale, "scan spacing as a fraction of the training grid");

    std::uint64_t self_seed = 0;
    auto* self = app.add_subcommand("selftest", "derivative, QP and filter oracles");
    self->add_option("--seed", self_seed, "seed");

    auto* dump = app.add_subcommand("config", "print the resolved scenario config as JSON");
    add_common(dump, cfg_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train) return cmd_train(train_c, baseline, epochs, quiet);
        if (*camp) return cmd_campaign(camp_c, model, baseline_model, runs, jobs, trajectories);
        if (*check) return cmd_check(check_c, check_model, grid_scale);
        if (*self) return cmd_selftest(self_seed);
        if (*dump) {
            std::cout << config_to_json(resolve_config(cfg_c)) << '\n';
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitOk;
}
