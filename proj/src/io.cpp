#include "ftb/io.hpp"

#include "json.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ftb {

using nlohmann::json;

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

void put_vec(std::string& line, const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        line += ',';
        line += format_double(v[i]);
    }
}

void header_block(std::string& line, const char* prefix, Eigen::Index count) {
    for (Eigen::Index i = 0; i < count; ++i) line += std::string(",") + prefix + std::to_string(i);
}

}  // namespace

void write_trajectory_csv(const TrajectoryLog& log, const std::filesystem::path& path) {
    std::string out = "t";
    if (log.size()) {
        header_block(out, "x", log.x[0].size());
        header_block(out, "y", log.y[0].size());
        header_block(out, "u", log.u[0].size());
    }
    out += ",pattern_active\n";
    const std::string pat = log.pattern_active ? std::to_string(*log.pattern_active) : "-1";
    for (std::size_t k = 0; k < log.size(); ++k) {
        std::string line = format_double(log.t[k]);
        put_vec(line, log.x[k]);
        put_vec(line, log.y[k]);
        put_vec(line, log.u[k]);
        line += ',' + pat + '\n';
        out += line;
    }
    write_text(path, out);
}

void write_closed_loop_csv(const ClosedLoopLog& log, const std::filesystem::path& path) {
    std::string out = "t";
    if (log.size()) {
        header_block(out, "x", log.x[0].size());
        header_block(out, "y", log.y[0].size());
        header_block(out, "u", log.u[0].size());
    }
    out += ",pattern_active";
    if (log.size())
        for (std::size_t f = 0; f < log.xhat[0].size(); ++f)
            for (Eigen::Index d = 0; d < log.xhat[0][f].size(); ++d)
                out += ",xhat_" + std::to_string(f) + "_" + std::to_string(d);
    out += ",z_t,h,b,degraded\n";
    const std::string pat = log.pattern_active ? std::to_string(*log.pattern_active) : "-1";
    for (std::size_t k = 0; k < log.size(); ++k) {
        std::string line = format_double(log.t[k]);
        put_vec(line, log.x[k]);
        put_vec(line, log.y[k]);
        put_vec(line, log.u[k]);
        line += ',' + pat;
        for (const auto& xh : log.xhat[k]) put_vec(line, xh);
        line += ',' + std::to_string(log.z[k]) + ',' + format_double(log.h[k]) + ',' + format_double(log.b[k]) + ',' +
                (log.degraded[k] ? "1" : "0") + '\n';
        out += line;
    }
    write_text(path, out);
}

std::string removal_events_json(const std::vector<RemovalEvent>& events) {
    json arr = json::array();
    for (const auto& e : events)
        arr.push_back({{"t", e.t}, {"step", e.step}, {"index", e.index}, {"reason", to_string(e.reason)}});
    return arr.dump(2);
}

void write_loss_csv(const std::vector<LossReport>& history, const std::filesystem::path& path) {
    std::string out = "epoch,vol";
    const std::size_t m = history.empty() ? 0 : history.front().lf_per_pattern.size();
    for (std::size_t i = 0; i < m; ++i) out += ",lf_" + std::to_string(i + 1);
    out += ",lc,total,eta,band_samples,infeasible_samples,grad_norm,clipped_steps\n";
    for (const auto& r : history) {
        std::string line = std::to_string(r.epoch) + ',' + format_double(r.vol);
        for (double v : r.lf_per_pattern) line += ',' + format_double(v);
        line += ',' + format_double(r.lc) + ',' + format_double(r.total) + ',' + format_double(r.eta) + ',' +
                std::to_string(r.band_samples) + ',' + std::to_string(r.infeasible_samples) + ',' +
                format_double(r.grad_norm) + ',' + std::to_string(r.clipped_steps) + '\n';
        out += line;
    }
    write_text(path, out);
}

std::uint64_t RunManifest::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= 0xff;
        h *= 0x100000001b3ULL;
    };
    mix(command);
    mix(scenario);
    mix(resolved_config);
    mix(std::to_string(seed));
    mix(version);
    for (const auto& e : extra) mix(e);
    return h;
}

std::string RunManifest::to_json() const {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash()));
    json j = {{"command", command},
              {"scenario", scenario},
              {"config_path", config_path},
              {"seed", seed},
              {"out_dir", out_dir},
              {"version", version},
              {"wall_time_s", wall_time},
              {"arguments", extra},
              {"hash", hex},
              {"resolved_config", json::parse(resolved_config.empty() ? "null" : resolved_config)}};
    return j.dump(2);
}

void write_manifest(const RunManifest& m, const std::filesystem::path& dir) {
    write_text(dir / "manifest.json", m.to_json() + "\n");
}

}  // namespace ftb
