#include "ftb/campaign.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

namespace ftb {

using nlohmann::json;

int resolve_jobs(std::optional<int> requested) {
    if (requested && *requested > 0) return *requested;
    if (const char* env = std::getenv("FT_BARRIER_JOBS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::uint64_t run_seed(std::uint64_t base_seed, int run) {
    return CounterRng(base_seed, Stream::Campaign).split(static_cast<std::uint64_t>(run)).next_u64();
}

std::string Condition::label() const {
    const std::string who = kind == ControllerKind::FaultTolerant ? "ft" : "baseline";
    return who + "/" + (pattern ? "r" + std::to_string(*pattern + 1) : std::string("none"));
}

std::vector<Condition> standard_conditions(int m, bool include_baseline) {
    std::vector<Condition> out;
    for (ControllerKind k : {ControllerKind::FaultTolerant, ControllerKind::Baseline}) {
        if (k == ControllerKind::Baseline && !include_baseline) continue;
        out.push_back({k, std::nullopt});
        for (int i = 0; i < m; ++i) out.push_back({k, i});
    }
    return out;
}

ClosedLoopLog simulate(const ScenarioBundle& scenario, const ControllerModel& model, const Condition& condition,
                       std::uint64_t seed) {
    ClosedLoopSetup setup;
    setup.system = scenario.system.get();
    setup.safety = scenario.safety.get();
    setup.attack = scenario.attacks;
    setup.attack.active = condition.pattern;
    setup.kind = condition.kind;
    setup.nominal = scenario.nominal;
    setup.p0_scale = scenario.config.p0_scale;
    setup.init_var = scenario.config.init_var;
    setup.residue_window = scenario.config.residue_window;
    const ControllerConfig cfg = scenario.controller(model.margins);
    return run_closed_loop(setup, *model.net, cfg, scenario.clock(seed), scenario.initial_state(seed));
}

CellSummary summarize(const Condition& c, const std::vector<RunVerdict>& verdicts, int m) {
    CellSummary s;
    s.condition = c;
    s.runs = static_cast<int>(verdicts.size());
    s.removals_by_index.assign(static_cast<std::size_t>(m), 0);
    std::vector<double> mins;
    for (const auto& v : verdicts) {
        s.safe_runs += v.safe ? 1 : 0;
        s.degraded_runs += v.degraded ? 1 : 0;
        s.diverged_runs += v.diverged ? 1 : 0;
        s.z_invariants_ok = s.z_invariants_ok && v.z_invariants_ok;
        mins.push_back(v.min_h);
        for (const auto& e : v.removals) {
            ++s.removals;
            if (e.reason == RemovalEvent::Reason::Pairwise)
                ++s.pairwise_removals;
            else
                ++s.residue_removals;
            if (e.index >= 0 && e.index < m) ++s.removals_by_index[static_cast<std::size_t>(e.index)];
        }
    }
    if (!mins.empty()) {
        std::sort(mins.begin(), mins.end());
        s.safe_fraction = static_cast<double>(s.safe_runs) / s.runs;
        s.min_h_min = mins.front();
        s.min_h_median = mins[mins.size() / 2];
        s.min_h_p05 = mins[static_cast<std::size_t>(0.05 * static_cast<double>(mins.size() - 1))];
    }
    return s;
}

CampaignResult run_campaign(const ScenarioBundle& scenario, const ControllerModel& ft,
                            const std::optional<ControllerModel>& baseline, const CampaignOptions& opt) {
    if (opt.runs < 1) throw ConfigError("runs must be >= 1");
    const auto conditions = opt.conditions.empty() ? standard_conditions(scenario.m(), baseline.has_value())
                                                   : opt.conditions;
    for (const auto& c : conditions)
        if (c.kind == ControllerKind::Baseline && !baseline) throw ConfigError("baseline condition without a model");

    const std::size_t cells = conditions.size();
    const std::size_t total = cells * static_cast<std::size_t>(opt.runs);
    CampaignResult res;
    res.verdicts.assign(cells, std::vector<RunVerdict>(static_cast<std::size_t>(opt.runs)));
    if (opt.keep_logs) res.logs.assign(cells, std::vector<ClosedLoopLog>(static_cast<std::size_t>(opt.runs)));

    // Every task writes only its own slot, so the result is independent of scheduling.
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t task = next++; task < total; task = next++) {
            const std::size_t cell = task / static_cast<std::size_t>(opt.runs);
            const int run = static_cast<int>(task % static_cast<std::size_t>(opt.runs));
            const Condition& c = conditions[cell];
            const ControllerModel& model = c.kind == ControllerKind::FaultTolerant ? ft : *baseline;
            RunVerdict& v = res.verdicts[cell][static_cast<std::size_t>(run)];
            v.run = run;
            v.seed = run_seed(opt.base_seed, run);
            v.condition = c;
            try {
                ClosedLoopLog log = simulate(scenario, model, c, v.seed);
                v.min_h = log.min_h;
                v.safe = log.safe;
                v.degraded = log.any_degraded;
                v.z_invariants_ok = log.z_invariants_ok;
                v.removals = log.removals;
                v.steps = static_cast<int>(log.size());
                if (opt.keep_logs) res.logs[cell][static_cast<std::size_t>(run)] = std::move(log);
            } catch (const Error& e) {
                v.diverged = true;
                v.safe = false;
                v.min_h = -std::numeric_limits<double>::infinity();
                v.error = e.what();
            }
        }
    };
    const int jobs = std::min<int>(resolve_jobs(opt.jobs), static_cast<int>(total));
    std::vector<std::thread> pool;
    for (int k = 1; k < jobs; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    for (std::size_t c = 0; c < cells; ++c) res.cells.push_back(summarize(conditions[c], res.verdicts[c], scenario.m()));
    return res;
}

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json cell_json(const CellSummary& s) {
    return {{"condition", s.condition.label()},
            {"controller", s.condition.kind == ControllerKind::FaultTolerant ? "ft" : "baseline"},
            {"pattern", s.condition.pattern ? json(*s.condition.pattern) : json(nullptr)},
            {"runs", s.runs},
            {"safe_runs", s.safe_runs},
            {"safe_fraction", s.safe_fraction},
            {"degraded_runs", s.degraded_runs},
            {"diverged_runs", s.diverged_runs},
            {"min_h", {{"min", finite_or_null(s.min_h_min)},
                       {"p05", finite_or_null(s.min_h_p05)},
                       {"median", finite_or_null(s.min_h_median)}}},
            {"removals", {{"total", s.removals},
                          {"pairwise", s.pairwise_removals},
                          {"residue", s.residue_removals},
                          {"by_index", s.removals_by_index}}},
            {"z_invariants_ok", s.z_invariants_ok}};
}

json verdict_json(const RunVerdict& v) {
    json removals = json::array();
    for (const auto& e : v.removals)
        removals.push_back({{"t", e.t}, {"step", e.step}, {"index", e.index}, {"reason", to_string(e.reason)}});
    json j = {{"run", v.run},
              {"seed", v.seed},
              {"condition", v.condition.label()},
              {"pattern", v.condition.pattern ? json(*v.condition.pattern) : json(nullptr)},
              {"min_h", finite_or_null(v.min_h)},
              {"safe", v.safe},
              {"safety_degraded", v.degraded},
              {"removal_count", v.removals.size()},
              {"removals", removals}};
    if (v.diverged) j["error"] = v.error;
    return j;
}

}  // namespace

std::string campaign_to_json(const CampaignResult& r, const std::string& scenario_id, std::uint64_t base_seed) {
    json cells = json::array();
    for (const auto& c : r.cells) cells.push_back(cell_json(c));
    return json{{"scenario", scenario_id}, {"base_seed", base_seed}, {"cells", cells}}.dump(2);
}

std::string verdicts_to_json(const std::vector<RunVerdict>& verdicts) {
    json arr = json::array();
    for (const auto& v : verdicts) arr.push_back(verdict_json(v));
    return arr.dump(2);
}

CheckReport falsify(const BarrierNetwork& net, const BarrierMargins& margins, const ScenarioBundle& scenario,
                    const FeasibilityProblem& problem, const Vec& grid_length, double lambda_tol,
                    std::size_t max_listed) {
    const Dataset grid = sample_dataset(scenario.config.box, grid_length, 0, true);
    const auto& sys = *scenario.system;
    const int m = static_cast<int>(problem.patterns.size());
    CheckReport rep;
    rep.points = grid.size();
    rep.region_points.assign(static_cast<std::size_t>(m), 0);
    auto record = [&](Counterexample c) {
        if (rep.counterexamples.size() < max_listed) rep.counterexamples.push_back(std::move(c));
    };
    for (int k = 0; k < grid.size(); ++k) {
        const Vec x = grid.samples.col(k);
        const double h = scenario.safety->h(x);
        const auto d = net.derivatives(x);
        if (d.value > 0.0 && h < 0.0) {
            ++rep.correctness;
            record({Counterexample::Kind::Correctness, x, -1, d.value, h, 0.0, 0.0});
        }
        for (int i = 0; i < m; ++i) {
            if (d.value - margins.bbar[static_cast<std::size_t>(i)] < 0.0) continue;
            ++rep.region_points[static_cast<std::size_t>(i)];
            const auto t = compute_xi(d, sys, x, problem.patterns[static_cast<std::size_t>(i)],
                                      margins.gamma[static_cast<std::size_t>(i)],
                                      margins.bbar[static_cast<std::size_t>(i)]);
            const double ln = t.lambda.norm();
            if (ln <= lambda_tol && t.xi < 0.0) {
                ++rep.uncontrollable;
                record({Counterexample::Kind::Uncontrollable, x, i, d.value, h, t.xi, ln});
            }
        }
    }
    rep.empty_region = std::all_of(rep.region_points.begin(), rep.region_points.end(), [](long v) { return v == 0; });
    return rep;
}

std::string check_to_json(const CheckReport& r) {
    json list = json::array();
    for (const auto& c : r.counterexamples) {
        list.push_back({{"kind", c.kind == Counterexample::Kind::Correctness ? "correctness" : "uncontrollable"},
                        {"x", std::vector<double>(c.x.data(), c.x.data() + c.x.size())},
                        {"pattern", c.pattern},
                        {"b", c.b},
                        {"h", c.h},
                        {"xi", c.xi},
                        {"lambda_norm", c.lambda_norm}});
    }
    json j = {{"points", r.points},
              {"region_points", r.region_points},
              {"correctness_violations", r.correctness},
              {"uncontrollable_points", r.uncontrollable},
              {"counterexamples", list},
              {"ok", r.ok()}};
    if (r.empty_region) j["note"] = "every shifted superlevel set is empty on the scanned grid";
    return j.dump(2);
}

}  // namespace ftb
