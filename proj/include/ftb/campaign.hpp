#pragma once

// Seeded Monte-Carlo campaigns over attack conditions and controller kinds,
// and the dense-sampling falsifier for trained barriers.

#include "ftb/controller.hpp"
#include "ftb/scenarios.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ftb {

/// --jobs value, else FT_BARRIER_JOBS, else hardware concurrency.
int resolve_jobs(std::optional<int> requested);

/// Seed of run k under a base seed; shared by every condition of the campaign.
std::uint64_t run_seed(std::uint64_t base_seed, int run);

struct Condition {
    ControllerKind kind = ControllerKind::FaultTolerant;
    std::optional<int> pattern;  ///< active attack, none for the clean case

    std::string label() const;
};

/// {no attack, r_1, ..., r_m} x {ft, baseline}.
std::vector<Condition> standard_conditions(int m, bool include_baseline = true);

struct RunVerdict {
    int run = 0;
    std::uint64_t seed = 0;
    Condition condition;
    double min_h = 0.0;
    bool safe = false;
    bool degraded = false;
    bool z_invariants_ok = true;
    bool diverged = false;
    std::string error;
    std::vector<RemovalEvent> removals;
    int steps = 0;
};

struct CellSummary {
    Condition condition;
    int runs = 0;
    int safe_runs = 0;
    int degraded_runs = 0;
    int diverged_runs = 0;
    double safe_fraction = 0.0;
    double min_h_min = 0.0;
    double min_h_median = 0.0;
    double min_h_p05 = 0.0;
    int removals = 0;
    int pairwise_removals = 0;
    int residue_removals = 0;
    std::vector<int> removals_by_index;
    bool z_invariants_ok = true;
};

struct ControllerModel {
    const BarrierNetwork* net = nullptr;
    BarrierMargins margins;
};

struct CampaignOptions {
    int runs = 100;
    std::uint64_t base_seed = 0;
    std::optional<int> jobs;
    std::vector<Condition> conditions;
    bool keep_logs = false;  ///< retain full trajectory logs (memory heavy)
};

struct CampaignResult {
    std::vector<CellSummary> cells;
    std::vector<std::vector<RunVerdict>> verdicts;  ///< per cell, in run order
    std::vector<std::vector<ClosedLoopLog>> logs;   ///< filled when keep_logs
};

/// One closed-loop run; attack pattern and controller kind taken from `condition`.
ClosedLoopLog simulate(const ScenarioBundle& scenario, const ControllerModel& model, const Condition& condition,
                       std::uint64_t seed);

CampaignResult run_campaign(const ScenarioBundle& scenario, const ControllerModel& ft,
                            const std::optional<ControllerModel>& baseline, const CampaignOptions& opt);

CellSummary summarize(const Condition& c, const std::vector<RunVerdict>& verdicts, int m);

std::string campaign_to_json(const CampaignResult& r, const std::string& scenario_id, std::uint64_t base_seed);
std::string verdicts_to_json(const std::vector<RunVerdict>& verdicts);

struct Counterexample {
    enum class Kind { Uncontrollable, Correctness };
    Kind kind = Kind::Correctness;
    Vec x;
    int pattern = -1;
    double b = 0.0;
    double h = 0.0;
    double xi = 0.0;
    double lambda_norm = 0.0;
};

struct CheckReport {
    std::vector<Counterexample> counterexamples;  ///< first max_listed only; counters are exact
    long points = 0;
    std::vector<long> region_points;  ///< grid points inside D^{gamma_i}, per pattern
    int correctness = 0;
    int uncontrollable = 0;
    bool empty_region = false;

    bool ok() const { return correctness == 0 && uncontrollable == 0; }
};

/// Scans cell centers of a grid of spacing `grid_length` over the state box.
CheckReport falsify(const BarrierNetwork& net, const BarrierMargins& margins, const ScenarioBundle& scenario,
                    const FeasibilityProblem& problem, const Vec& grid_length, double lambda_tol = 1e-6,
                    std::size_t max_listed = 1000);

std::string check_to_json(const CheckReport& r);

}  // namespace ftb
