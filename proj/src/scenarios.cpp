#include "ftb/scenarios.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ftb {

using nlohmann::json;

namespace {

Vec filled(int n, double v) { return Vec::Constant(n, v); }

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json box_json(const std::optional<InputBox>& b) {
    if (!b) return nullptr;
    return json{{"lo", vec_json(b->lo)}, {"hi", vec_json(b->hi)}};
}

std::optional<InputBox> json_box(const json& j) {
    if (j.is_null()) return std::nullopt;
    return InputBox{json_vec(j.at("lo")), json_vec(j.at("hi"))};
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void read_vec(const json& j, const char* key, Vec& out) {
    if (j.contains(key)) out = json_vec(j.at(key));
}

void read_box(const json& j, const char* key, std::optional<InputBox>& out) {
    if (j.contains(key)) out = json_box(j.at(key));
}

}  // namespace

Mat cwh_matrix(double n) {
    Mat A = Mat::Zero(6, 6);
    A.block(0, 3, 3, 3) = Mat::Identity(3, 3);
    A(3, 0) = 3.0 * n * n;
    A(5, 2) = -n * n;
    A(3, 4) = 2.0 * n;
    A(4, 3) = -2.0 * n;
    return A;
}

void ScenarioConfig::validate() const {
    if (id != "dubins" && id != "cwh") throw ConfigError("id: unknown scenario '" + id + "'");
    const int n = id == "dubins" ? 3 : 6;
    const int q = id == "dubins" ? 5 : 8;
    if (box.lo.size() != n || box.hi.size() != n) throw ConfigError("box: wrong dimension");
    if (output_noise_cov.size() != q) throw ConfigError("output_noise_cov: wrong dimension");
    if ((output_noise_cov.array() <= 0.0).any()) throw ConfigError("output_noise_cov: entries must be positive");
    if (state_diffusion.size() != n) throw ConfigError("state_diffusion: wrong dimension");
    if (patterns.empty()) throw ConfigError("patterns: at least one fault pattern required");
    if (attack_kind != "constant" && attack_kind != "gaussian") throw ConfigError("attack_kind: constant or gaussian");
    if (attack_std < 0.0) throw ConfigError("attack_std must be non-negative");
    if (grid_length.size() != n) throw ConfigError("grid_length: wrong dimension");
    if (static_cast<int>(training.gammas.size()) != static_cast<int>(patterns.size()))
        throw ConfigError("gammas: one value per pattern required");
    training.validate();
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    if (id == "dubins" && (x0.size() != 3 || nominal_gains.size() != 4))
        throw ConfigError("dubins: x0 needs 3 entries and nominal_gains 4");
    if (id == "cwh" && (!(r0_lo > 0.0) || r0_hi < r0_lo || nominal_gains.size() != 3))
        throw ConfigError("cwh: invalid r0 range or nominal_gains");
    if (!(p0_scale > 0.0) || init_var < 0.0 || residue_window < 1)
        throw ConfigError("filter initialization parameters out of range");
}

ScenarioConfig dubins_config() {
    ScenarioConfig c;
    c.id = "dubins";
    c.output_noise_cov = filled(5, 0.001);
    c.state_diffusion = filled(3, 1e-3);
    c.box = {filled(3, -2.0), filled(3, 2.0)};
    c.patterns = {{1}, {3}};
    c.attack_kind = "constant";
    c.attack_mean = 1.0;
    c.grid_length = filled(3, 0.125);
    c.reduced_grid_length = 0.25;
    c.training.gammas = {0.002, 0.0015};
    c.training.seed = 1;
    c.training.warm_start_epochs = 300;
    c.training.warm_start_scale = 0.5;
    c.training.warm_start_margin = 0.04;  // keeps the zero level off the curved obstacle edge between samples
    c.alpha = 0.1;
    c.delta = 0.1;
    c.dt = 1e-2;
    c.horizon = 3.0;
    c.x0 = Vec(3);
    c.x0 << -1.5, 0.05, std::numbers::pi / 2.0;
    c.x0_jitter = 0.01;
    c.nominal_gains = Vec(4);
    c.nominal_gains << 2.0, 1.0, std::numbers::pi / 2.0, 0.05;
    return c;
}

ScenarioConfig cwh_config() {
    ScenarioConfig c;
    c.id = "cwh";
    c.mean_motion = 0.056;
    c.output_noise_cov = Vec(8);
    c.output_noise_cov << 100, 100, 100, 1, 1, 1, 1, 1;
    c.output_noise_cov *= 1e-5;
    c.state_diffusion = filled(6, 1e-3);
    c.box = {filled(6, -2.0), filled(6, 2.0)};
    c.patterns = {{1}, {3}};
    c.attack_kind = "gaussian";
    c.attack_mean = -1.0;
    c.attack_std = 0.1;
    c.grid_length = filled(6, 1.0);
    c.reduced_grid_length = 0.0;
    c.training.gammas = {0.01, 0.01};
    c.training.seed = 1;
    c.training.warm_start_epochs = 300;
    c.training.warm_start_scale = 0.5;
    c.training.warm_start_margin = 0.02;
    c.alpha = 0.1;
    c.delta = 0.1;
    c.dt = 1e-2;
    c.horizon = 10.0;
    c.r0_lo = 0.5;
    c.r0_hi = 1.2;
    // thrust limit; without it a near-zero Lambda after pruning asks for unbounded input
    c.control_u_bounds = InputBox{filled(3, -1.0), filled(3, 1.0)};
    c.nominal_gains = Vec(3);
    c.nominal_gains << 1.0, 2.0, 0.875;
    return c;
}

ScenarioConfig default_config(const std::string& id) {
    if (id == "dubins") return dubins_config();
    if (id == "cwh") return cwh_config();
    throw ConfigError("unknown scenario '" + id + "'");
}

ScenarioBundle build_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    ScenarioBundle b;
    b.config = cfg;
    auto sys = std::make_shared<ControlAffineSdeSystem>();
    auto safety = std::make_shared<SafetySpec>();
    safety->box = cfg.box;
    const Vec nu_diag = cfg.output_noise_cov.cwiseSqrt();

    if (cfg.id == "dubins") {
        sys->n = 3;
        sys->p = 1;
        sys->q = 5;
        sys->drift = [](const Vec& x) {
            Vec f(3);
            f << std::sin(x[2]), std::cos(x[2]), 0.0;
            return f;
        };
        sys->input_map = [](const Vec&) {
            Mat g = Mat::Zero(3, 1);
            g(2, 0) = 1.0;
            return g;
        };
        sys->drift_jacobian = [](const Vec& x, const Vec&) {
            Mat A = Mat::Zero(3, 3);
            A(0, 2) = std::cos(x[2]);
            A(1, 2) = -std::sin(x[2]);
            return A;
        };
        sys->output_matrix = Mat::Zero(5, 3);
        sys->output_matrix(0, 0) = 1.0;
        sys->output_matrix(1, 0) = 1.0;
        sys->output_matrix(2, 1) = 1.0;
        sys->output_matrix(3, 1) = 1.0;
        sys->output_matrix(4, 2) = 1.0;
        safety->h = [](const Vec& x) { return std::min(x[0] * x[0] + x[1] * x[1] - 0.04, x[1] + 0.3); };
        const double k_psi = cfg.nominal_gains[0], k_lat = cfg.nominal_gains[1];
        const double psi_ref = cfg.nominal_gains[2], lat_ref = cfg.nominal_gains[3];
        // heading regulation with a lateral correction: dx2/dt = cos(psi) ~ -(psi - pi/2)
        b.nominal = [=](double, const Vec& xh) {
            Vec u(1);
            u[0] = -k_psi * (xh[2] - psi_ref - k_lat * (xh[1] - lat_ref));
            return u;
        };
    } else {
        const Mat A = cwh_matrix(cfg.mean_motion);
        sys->n = 6;
        sys->p = 3;
        sys->q = 8;
        sys->drift = [A](const Vec& x) -> Vec { return A * x; };
        sys->input_map = [](const Vec&) {
            Mat g = Mat::Zero(6, 3);
            g.block(3, 0, 3, 3) = Mat::Identity(3, 3);
            return g;
        };
        sys->drift_jacobian = [A](const Vec&, const Vec&) { return A; };
        sys->output_matrix = Mat::Zero(8, 6);
        sys->output_matrix(0, 0) = 1.0;
        sys->output_matrix(1, 0) = 1.0;
        sys->output_matrix(2, 1) = 1.0;
        sys->output_matrix(3, 1) = 1.0;
        sys->output_matrix(4, 1) = 1.0;
        sys->output_matrix(5, 3) = 1.0;
        sys->output_matrix(6, 4) = 1.0;
        sys->output_matrix(7, 5) = 1.0;
        safety->h = [](const Vec& x) {
            const double r = x.head(3).norm();
            return std::min(r - 0.25, 1.5 - r);
        };
        const double kp = cfg.nominal_gains[0], kd = cfg.nominal_gains[1], r_target = cfg.nominal_gains[2];
        const Mat A21 = A.block(3, 0, 3, 3), A22 = A.block(3, 3, 3, 3);
        // cancel the relative dynamics, then a radial PD drive toward r_target
        b.nominal = [=](double, const Vec& xh) -> Vec {
            const Vec p = xh.head(3), v = xh.tail(3);
            const double r = std::max(p.norm(), 1e-9);
            return -A21 * p - A22 * v - kp * (r - r_target) * p / r - kd * v;
        };
    }
    sys->diffusion = cfg.state_diffusion.asDiagonal();
    sys->output_noise = nu_diag.asDiagonal();
    sys->validate();

    b.attacks.patterns = cfg.patterns;
    for (std::size_t i = 0; i < cfg.patterns.size(); ++i)
        b.attacks.generators.push_back(cfg.attack_kind == "gaussian"
                                           ? AttackSignal::gaussian(cfg.attack_mean, cfg.attack_std)
                                           : AttackSignal::constant(cfg.attack_mean));
    b.attacks.validate(sys->q);
    b.system = std::move(sys);
    b.safety = std::move(safety);
    return b;
}

ScenarioBundle dubins_scenario() { return build_scenario(dubins_config()); }
ScenarioBundle cwh_scenario() { return build_scenario(cwh_config()); }

Vec ScenarioBundle::initial_state(std::uint64_t seed) const {
    CounterRng rng(seed, Stream::InitialState);
    if (config.id == "dubins") return config.x0 + config.x0_jitter * rng.normals(3);
    Vec dir = rng.normals(3);
    dir /= std::max(dir.norm(), 1e-12);
    const double r = rng.uniform(config.r0_lo, config.r0_hi);
    Vec x = Vec::Zero(6);
    x.head(3) = r * dir;
    return x;
}

ControllerConfig ScenarioBundle::controller(const BarrierMargins& margins) const {
    ControllerConfig c;
    const int m = this->m();
    c.alphas = Mat::Constant(m, m, config.alpha);
    c.gammas = config.training.gammas;
    c.delta = config.delta;
    c.epsilon = config.epsilon;
    c.margins = margins;
    c.sticky_removals = config.sticky_removals;
    c.blend_nominal = config.blend_nominal;
    c.u_bounds = config.control_u_bounds;
    return c;
}

FeasibilityProblem ScenarioBundle::feasibility_problem() const {
    FeasibilityProblem fp;
    fp.system = system.get();
    fp.patterns = steady_state_models(*system, attacks.patterns, config.box.center(), Vec::Zero(system->p));
    fp.u_bounds = config.train_u_bounds;
    return fp;
}

FeasibilityProblem ScenarioBundle::baseline_problem() const {
    FeasibilityProblem fp;
    fp.system = system.get();
    fp.patterns = steady_state_models(*system, {IndexSet{}}, config.box.center(), Vec::Zero(system->p));
    fp.u_bounds = config.train_u_bounds;
    return fp;
}

TrainingConfig ScenarioBundle::baseline_training() const {
    TrainingConfig t = config.training;
    t.gammas = {config.training.gammas.front()};
    return t;
}

SimClock ScenarioBundle::clock(std::uint64_t seed) const {
    SimClock c;
    c.dt = config.dt;
    c.horizon = config.horizon;
    c.rng_seed = seed;
    return c;
}

std::string config_to_json(const ScenarioConfig& c) {
    const auto& t = c.training;
    json j;
    j["schema_version"] = ScenarioConfig::kSchemaVersion;
    j["id"] = c.id;
    j["plant"] = {{"mean_motion", c.mean_motion},
                  {"output_noise_cov", vec_json(c.output_noise_cov)},
                  {"state_diffusion", vec_json(c.state_diffusion)},
                  {"box_lo", vec_json(c.box.lo)},
                  {"box_hi", vec_json(c.box.hi)}};
    j["attack"] = {{"patterns", c.patterns}, {"kind", c.attack_kind}, {"mean", c.attack_mean}, {"std", c.attack_std}};
    j["training"] = {{"grid_length", vec_json(c.grid_length)},
                     {"reduced_grid_length", c.reduced_grid_length},
                     {"lambda_f", t.lambda_f},
                     {"lambda_c", t.lambda_c},
                     {"gammas", t.gammas},
                     {"epochs", t.epochs},
                     {"step_size", t.step_size},
                     {"batch_size", t.batch_size},
                     {"grad_clip", t.grad_clip},
                     {"band_fraction", t.band_fraction},
                     {"boundary_band", t.boundary_band},
                     {"bbar_refresh_every", t.bbar_refresh_every},
                     {"bbar_resolution", t.bbar_resolution},
                     {"converge_tol", t.converge_tol},
                     {"converge_patience", t.converge_patience},
                     {"hidden", t.hidden},
                     {"seed", t.seed},
                     {"optimizer", t.optimizer},
                     {"adam_beta1", t.adam_beta1},
                     {"adam_beta2", t.adam_beta2},
                     {"adam_eps", t.adam_eps},
                     {"warm_start_epochs", t.warm_start_epochs},
                     {"warm_start_step", t.warm_start_step},
                     {"warm_start_scale", t.warm_start_scale},
                     {"warm_start_margin", t.warm_start_margin},
                     {"u_bounds", box_json(c.train_u_bounds)}};
    j["controller"] = {{"alpha", c.alpha},
                       {"delta", c.delta},
                       {"epsilon", c.epsilon},
                       {"sticky_removals", c.sticky_removals},
                       {"blend_nominal", c.blend_nominal},
                       {"u_bounds", box_json(c.control_u_bounds)}};
    j["simulation"] = {{"dt", c.dt},
                       {"horizon", c.horizon},
                       {"x0", vec_json(c.x0)},
                       {"x0_jitter", c.x0_jitter},
                       {"r0_lo", c.r0_lo},
                       {"r0_hi", c.r0_hi},
                       {"nominal_gains", vec_json(c.nominal_gains)}};
    j["filters"] = {{"p0_scale", c.p0_scale}, {"init_var", c.init_var}, {"residue_window", c.residue_window}};
    return j.dump(2);
}

ScenarioConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    try {
        if (!j.contains("id")) throw ConfigError("id: missing scenario id");
        const int version = j.value("schema_version", ScenarioConfig::kSchemaVersion);
        if (version != ScenarioConfig::kSchemaVersion)
            throw ConfigError("schema_version: unsupported version " + std::to_string(version));
        // missing keys keep the scenario defaults
        ScenarioConfig c = default_config(j.at("id").get<std::string>());
        auto& t = c.training;
        if (j.contains("plant")) {
            const auto& p = j["plant"];
            read(p, "mean_motion", c.mean_motion);
            read_vec(p, "output_noise_cov", c.output_noise_cov);
            read_vec(p, "state_diffusion", c.state_diffusion);
            read_vec(p, "box_lo", c.box.lo);
            read_vec(p, "box_hi", c.box.hi);
        }
        if (j.contains("attack")) {
            const auto& a = j["attack"];
            read(a, "patterns", c.patterns);
            read(a, "kind", c.attack_kind);
            read(a, "mean", c.attack_mean);
            read(a, "std", c.attack_std);
        }
        if (j.contains("training")) {
            const auto& s = j["training"];
            read_vec(s, "grid_length", c.grid_length);
            read(s, "reduced_grid_length", c.reduced_grid_length);
            read(s, "lambda_f", t.lambda_f);
            read(s, "lambda_c", t.lambda_c);
            read(s, "gammas", t.gammas);
            read(s, "epochs", t.epochs);
            read(s, "step_size", t.step_size);
            read(s, "batch_size", t.batch_size);
            read(s, "grad_clip", t.grad_clip);
            read(s, "band_fraction", t.band_fraction);
            read(s, "boundary_band", t.boundary_band);
            read(s, "bbar_refresh_every", t.bbar_refresh_every);
            read(s, "bbar_resolution", t.bbar_resolution);
            read(s, "converge_tol", t.converge_tol);
            read(s, "converge_patience", t.converge_patience);
            read(s, "hidden", t.hidden);
            read(s, "seed", t.seed);
            read(s, "optimizer", t.optimizer);
            read(s, "adam_beta1", t.adam_beta1);
            read(s, "adam_beta2", t.adam_beta2);
            read(s, "adam_eps", t.adam_eps);
            read(s, "warm_start_epochs", t.warm_start_epochs);
            read(s, "warm_start_step", t.warm_start_step);
            read(s, "warm_start_scale", t.warm_start_scale);
            read(s, "warm_start_margin", t.warm_start_margin);
            read_box(s, "u_bounds", c.train_u_bounds);
        }
        if (j.contains("controller")) {
            const auto& s = j["controller"];
            read(s, "alpha", c.alpha);
            read(s, "delta", c.delta);
            read(s, "epsilon", c.epsilon);
            read(s, "sticky_removals", c.sticky_removals);
            read(s, "blend_nominal", c.blend_nominal);
            read_box(s, "u_bounds", c.control_u_bounds);
        }
        if (j.contains("simulation")) {
            const auto& s = j["simulation"];
            read(s, "dt", c.dt);
            read(s, "horizon", c.horizon);
            read_vec(s, "x0", c.x0);
            read(s, "x0_jitter", c.x0_jitter);
            read(s, "r0_lo", c.r0_lo);
            read(s, "r0_hi", c.r0_hi);
            read_vec(s, "nominal_gains", c.nominal_gains);
        }
        if (j.contains("filters")) {
            const auto& s = j["filters"];
            read(s, "p0_scale", c.p0_scale);
            read(s, "init_var", c.init_var);
            read(s, "residue_window", c.residue_window);
        }
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const ScenarioConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write config " + path.string());
    out << config_to_json(cfg) << '\n';
}

}  // namespace ftb
