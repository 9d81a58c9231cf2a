#pragma once

// Benchmark plants: Dubins obstacle avoidance and Clohessy-Wiltshire-Hill
// rendezvous. Every constant lives in ScenarioConfig so it can round-trip
// through a JSON file.

#include "ftb/controller.hpp"
#include "ftb/rng.hpp"
#include "ftb/sde.hpp"
#include "ftb/training.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace ftb {

struct ScenarioConfig {
    static constexpr int kSchemaVersion = 1;

    std::string id;  ///< "dubins" or "cwh"

    // plant
    double mean_motion = 0.0;       ///< CWH only
    Vec output_noise_cov;           ///< diagonal of nu nu^T
    Vec state_diffusion;            ///< diagonal of sigma
    StateBox box;

    // adversary
    std::vector<IndexSet> patterns;
    std::string attack_kind = "constant";  ///< constant | gaussian
    double attack_mean = 0.0;
    double attack_std = 0.0;

    // training
    Vec grid_length;
    double reduced_grid_length = 0.0;  ///< quick preset, 0 if none
    TrainingConfig training;
    std::optional<InputBox> train_u_bounds;

    // controller
    double alpha = 0.1;  ///< alpha_ij for every pair
    double delta = 0.1;
    double epsilon = 0.1;
    bool sticky_removals = false;
    bool blend_nominal = false;
    std::optional<InputBox> control_u_bounds;

    // simulation
    double dt = 1e-2;
    double horizon = 3.0;
    Vec x0;                     ///< Dubins start
    double x0_jitter = 0.0;     ///< std of Gaussian start perturbation
    double r0_lo = 0.0;         ///< CWH start radius range
    double r0_hi = 0.0;
    Vec nominal_gains;          ///< Dubins: (k_psi, k_lateral, psi_ref, lateral_ref); CWH: (kp, kd, r_target)

    double p0_scale = 0.1;
    double init_var = 0.01;
    int residue_window = 20;

    void validate() const;
};

struct ScenarioBundle {
    ScenarioConfig config;
    std::shared_ptr<const ControlAffineSdeSystem> system;
    std::shared_ptr<const SafetySpec> safety;
    AttackModel attacks;  ///< active unset
    NominalPolicy nominal;

    int m() const { return attacks.m(); }
    /// Initial state for run `run` drawn from the InitialState stream.
    Vec initial_state(std::uint64_t seed) const;
    ControllerConfig controller(const BarrierMargins& margins) const;
    FeasibilityProblem feasibility_problem() const;
    /// Single pattern with no exclusion, gamma_1, for the fault-oblivious baseline.
    FeasibilityProblem baseline_problem() const;
    TrainingConfig baseline_training() const;
    SimClock clock(std::uint64_t seed) const;
};

ScenarioConfig dubins_config();
ScenarioConfig cwh_config();
ScenarioConfig default_config(const std::string& id);

ScenarioBundle build_scenario(const ScenarioConfig& cfg);
ScenarioBundle dubins_scenario();
ScenarioBundle cwh_scenario();

/// CWH drift matrix for mean motion n.
Mat cwh_matrix(double n);

std::string config_to_json(const ScenarioConfig& cfg);
ScenarioConfig config_from_json(const std::string& text);
ScenarioConfig load_config(const std::filesystem::path& path);
void save_config(const ScenarioConfig& cfg, const std::filesystem::path& path);

}  // namespace ftb
