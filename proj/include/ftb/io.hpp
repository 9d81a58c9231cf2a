#pragma once

// CSV and JSON output, and the per-directory run manifest.

#include "ftb/controller.hpp"
#include "ftb/sde.hpp"
#include "ftb/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ftb {

inline constexpr const char* kToolkitVersion = "0.3.0";

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Columns t, x0.., y0.., u0.., pattern_active.
void write_trajectory_csv(const TrajectoryLog& log, const std::filesystem::path& path);

/// Open-loop columns plus xhat_<fid>_<dim> per filter slot, z_t, h, b, degraded.
void write_closed_loop_csv(const ClosedLoopLog& log, const std::filesystem::path& path);

/// Removal events as a JSON array.
std::string removal_events_json(const std::vector<RemovalEvent>& events);

/// Columns epoch, vol, lf_1.., lc, total, eta, band_samples, infeasible_samples, grad_norm, clipped_steps.
void write_loss_csv(const std::vector<LossReport>& history, const std::filesystem::path& path);

struct RunManifest {
    std::string command;
    std::string scenario;
    std::string config_path;
    std::string resolved_config;  ///< JSON text of every effective parameter
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string version = kToolkitVersion;
    double wall_time = 0.0;
    std::vector<std::string> extra;  ///< additional key=value arguments

    /// FNV-1a over everything that determines the outputs (not wall time).
    std::uint64_t hash() const;
    std::string to_json() const;
};

void write_manifest(const RunManifest& m, const std::filesystem::path& dir);

}  // namespace ftb
