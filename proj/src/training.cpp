#include "ftb/training.hpp"

#include "ftb/estimation.hpp"
#include "ftb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ftb {

namespace {

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

Vec h_values(const Dataset& data, const SafetySpec& safety) {
    Vec h(data.size());
    for (int k = 0; k < data.size(); ++k) h[k] = safety.h(data.samples.col(k));
    return h;
}

}  // namespace

Dataset sample_dataset(const StateBox& box, const Vec& L, std::uint64_t seed, bool centers_only) {
    const int n = box.dim();
    if (L.size() != n) throw ConfigError("grid length must match the state dimension");
    std::vector<int> cells(static_cast<std::size_t>(n));
    long total = 1;
    for (int d = 0; d < n; ++d) {
        const double width = box.hi[d] - box.lo[d];
        if (!(width > 0.0)) throw ConfigError("state box is empty along an axis");
        if (!(L[d] > 0.0)) throw ConfigError("grid length must be positive");
        cells[static_cast<std::size_t>(d)] = std::max(1, static_cast<int>(std::ceil(width / L[d] - 1e-9)));
        total *= cells[static_cast<std::size_t>(d)];
    }
    Dataset data;
    data.grid_length = L;
    data.box = box;
    data.seed = seed;
    data.samples.resize(n, total);
    CounterRng rng(seed, Stream::Dataset);
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (long k = 0; k < total; ++k) {
        long rem = k;
        for (int d = n - 1; d >= 0; --d) {
            idx[static_cast<std::size_t>(d)] = static_cast<int>(rem % cells[static_cast<std::size_t>(d)]);
            rem /= cells[static_cast<std::size_t>(d)];
        }
        for (int d = 0; d < n; ++d) {
            const double lo = box.lo[d] + idx[static_cast<std::size_t>(d)] * L[d];
            const double hi = std::min(box.hi[d], lo + L[d]);
            const double center = 0.5 * (lo + hi);
            data.samples(d, k) = centers_only ? center : rng.uniform(lo, hi);
        }
    }
    return data;
}

Mat steady_state_covariance(const ControlAffineSdeSystem& sys, const Mat& A, const Mat& c, const Mat& nu, double tol) {
    const int n = sys.n;
    const Mat Q = sys.diffusion * sys.diffusion.transpose();
    const Mat R = nu * nu.transpose();
    const Mat S = c.transpose() * R.llt().solve(c);
    Mat P = 0.1 * Mat::Identity(n, n);
    auto flow = [&](const Mat& X) -> Mat { return A * X + X * A.transpose() + Q - X * S * X; };
    for (long it = 0; it < 2'000'000; ++it) {
        const Mat r = flow(P);
        const double scale = std::max(Q.norm() + (P * S * P).norm(), 1e-300);
        if (r.norm() <= tol * scale) break;
        const double h = 0.5 / (A.norm() + 2.0 * P.norm() * S.norm() + 1e-12);
        const Mat k1 = r;
        const Mat k2 = flow(P + 0.5 * h * k1);
        const Mat k3 = flow(P + 0.5 * h * k2);
        const Mat k4 = flow(P + h * k3);
        P += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        P = 0.5 * (P + P.transpose());
    }
    return P;
}

std::vector<PatternModel> steady_state_models(const ControlAffineSdeSystem& sys, const std::vector<IndexSet>& excluded,
                                              const Vec& x_lin, const Vec& u_lin, double tol) {
    const Mat A = jacobian_fbar(sys, x_lin, u_lin);
    std::vector<PatternModel> out;
    for (const auto& ex : excluded) {
        auto obs = exclude_sensors(sys.output_matrix, sys.output_noise, ex);
        const Mat P = steady_state_covariance(sys, A, obs.c, obs.noise, tol);
        const Mat R = obs.noise * obs.noise.transpose();
        PatternModel m;
        m.K = P * obs.c.transpose() * R.llt().solve(Mat::Identity(R.rows(), R.cols()));
        m.c = std::move(obs.c);
        m.nu = std::move(obs.noise);
        m.excluded = ex;
        out.push_back(std::move(m));
    }
    return out;
}

XiTerms compute_xi(const BarrierDerivatives& d, const ControlAffineSdeSystem& sys, const Vec& xhat,
                   const PatternModel& model, double gamma, double bbar) {
    XiTerms t;
    t.lie_drift = d.grad.dot(sys.drift(xhat));
    const Mat Knu = model.K * model.nu;
    t.trace_term = 0.5 * (Knu.transpose() * d.hess * Knu).trace();
    t.robust_term = gamma * (d.grad.transpose() * model.K * model.c).norm();
    t.bhat = d.value - bbar;
    t.xi = t.lie_drift + t.trace_term - t.robust_term + t.bhat;
    t.lambda = (d.grad.transpose() * sys.input_map(xhat)).transpose();
    return t;
}

XiTerms compute_xi(const BarrierNetwork& net, const BarrierMargins& margins, const ControlAffineSdeSystem& sys,
                   const Vec& xhat, const PatternModel& model, int pattern) {
    const auto d = net.derivatives(xhat);
    return compute_xi(d, sys, xhat, model, margins.gamma[static_cast<std::size_t>(pattern)],
                      margins.bbar[static_cast<std::size_t>(pattern)]);
}

double loss_volume(const BarrierNetwork& net, const Dataset& data, const SafetySpec& safety) {
    const Vec b = net.forward_batch(data.samples);
    const Vec h = h_values(data, safety);
    double vol = 0.0;
    for (int k = 0; k < data.size(); ++k) vol += -relu(h[k]) * relu(-b[k]);
    return vol;
}

double loss_correctness(const BarrierNetwork& net, const Dataset& data, const SafetySpec& safety) {
    const Vec b = net.forward_batch(data.samples);
    const Vec h = h_values(data, safety);
    double lc = 0.0;
    for (int k = 0; k < data.size(); ++k) lc += relu(-h[k]) * relu(b[k]);
    return lc;
}

double auto_band(const Vec& values, double fraction) {
    if (values.size() == 0) return fraction;
    const double range = values.maxCoeff() - values.minCoeff();
    return std::max(fraction * range, 1e-12);
}

SampleFeasibility sample_feasibility(const BarrierDerivatives& d, const BarrierMargins& margins,
                                     const FeasibilityProblem& problem, const Vec& xhat, double eta,
                                     const std::optional<Vec>& u_override) {
    const auto& sys = *problem.system;
    const int m = static_cast<int>(problem.patterns.size());
    const int n = sys.n;
    SampleFeasibility out;
    out.per_pattern.assign(static_cast<std::size_t>(m), 0.0);
    out.seed_grad = Vec::Zero(n);
    out.seed_hess = Mat::Zero(n, n);

    std::vector<int> band;
    for (int i = 0; i < m; ++i)
        if (in_band(d.value, margins.bbar[static_cast<std::size_t>(i)], eta)) band.push_back(i);
    if (band.empty()) return out;
    out.any_band = true;

    std::vector<XiTerms> terms;
    std::vector<FeasibilityRow> rows;
    for (int i = 0; i < m; ++i) {
        terms.push_back(compute_xi(d, sys, xhat, problem.patterns[static_cast<std::size_t>(i)],
                                   margins.gamma[static_cast<std::size_t>(i)], margins.bbar[static_cast<std::size_t>(i)]));
        rows.push_back({terms.back().lambda, terms.back().xi, i});
    }
    Vec u = Vec::Zero(sys.p);
    if (u_override) {
        u = *u_override;
    } else {
        const QpSolution sol = solve_min_norm(rows, sys.p, problem.u_bounds);
        if (sol.status == QpStatus::Infeasible)
            out.infeasible = true;
        else
            u = sol.u;
    }

    const Mat G = sys.input_map(xhat);
    const Vec fx = sys.drift(xhat);
    for (int i : band) {
        const auto& t = terms[static_cast<std::size_t>(i)];
        const double v = t.xi + t.lambda.dot(u);
        // an active QP constraint lands on zero up to round-off; that is not a violation
        if (v >= -1e-9 * (std::abs(t.xi) + std::abs(t.lambda.dot(u)))) continue;
        out.per_pattern[static_cast<std::size_t>(i)] = -v;
        out.value += -v;
        // d(-v) with respect to b, db/dx and d2b/dx2, u held fixed
        const auto& model = problem.patterns[static_cast<std::size_t>(i)];
        const Mat M = model.K * model.c;
        const Vec w = M.transpose() * d.grad;
        const double wn = w.norm();
        Vec dv_dgrad = fx + G * u;
        if (wn > 0.0) dv_dgrad -= margins.gamma[static_cast<std::size_t>(i)] * (M * w) / wn;
        const Mat Knu = model.K * model.nu;
        out.seed_value -= 1.0;
        out.seed_grad -= dv_dgrad;
        out.seed_hess -= 0.5 * (Knu * Knu.transpose());
    }
    return out;
}

FeasibilityResult loss_feasibility(const BarrierNetwork& net, const BarrierMargins& margins, const Dataset& data,
                                   const FeasibilityProblem& problem, double eta) {
    FeasibilityResult res;
    res.per_pattern.assign(problem.patterns.size(), 0.0);
    const Vec b = net.forward_batch(data.samples);
    const double hi = margins.max_bbar() + eta;
    for (int k = 0; k < data.size(); ++k) {
        if (b[k] < -eta || b[k] > hi) continue;
        const Vec x = data.samples.col(k);
        const auto d = net.derivatives(x);
        const auto s = sample_feasibility(d, margins, problem, x, eta);
        if (!s.any_band) continue;
        ++res.band_samples;
        if (s.infeasible) ++res.infeasible_samples;
        for (std::size_t i = 0; i < res.per_pattern.size(); ++i) res.per_pattern[i] += s.per_pattern[i];
    }
    return res;
}

void TrainingConfig::validate() const {
    if (lambda_f < 0.0) throw ConfigError("lambda_f must be non-negative");
    if (lambda_c < 0.0) throw ConfigError("lambda_c must be non-negative");
    for (double g : gammas)
        if (!(g >= 0.0)) throw ConfigError("gammas must be non-negative");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(step_size > 0.0)) throw ConfigError("step_size must be positive");
    if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
    if (!(band_fraction > 0.0) && !(boundary_band > 0.0)) throw ConfigError("boundary band eta must be positive");
    if (bbar_refresh_every < 1) throw ConfigError("bbar_refresh_every must be >= 1");
    if (bbar_resolution < 8) throw ConfigError("bbar_resolution must be >= 8");
    if (hidden.empty()) throw ConfigError("at least one hidden layer required");
    if (optimizer != "gd" && optimizer != "adam") throw ConfigError("optimizer must be gd or adam");
    if (warm_start_epochs < 0) throw ConfigError("warm_start_epochs must be >= 0");
    if (warm_start_scale < 0.0) throw ConfigError("warm_start_scale must be >= 0");
    if (warm_start_margin < 0.0) throw ConfigError("warm_start_margin must be >= 0");
}

double LossReport::lf() const { return std::accumulate(lf_per_pattern.begin(), lf_per_pattern.end(), 0.0); }

LossReport evaluate_losses(const BarrierNetwork& net, const BarrierMargins& margins, const Dataset& data,
                           const SafetySpec& safety, const FeasibilityProblem& problem, const TrainingConfig& cfg,
                           int epoch) {
    LossReport r;
    r.epoch = epoch;
    const Vec b = net.forward_batch(data.samples);
    r.eta = cfg.boundary_band > 0.0 ? cfg.boundary_band : auto_band(b, cfg.band_fraction);
    for (int k = 0; k < data.size(); ++k) {
        const double h = safety.h(data.samples.col(k));
        r.vol += -relu(h) * relu(-b[k]);
        r.lc += relu(-h) * relu(b[k]);
    }
    const auto f = loss_feasibility(net, margins, data, problem, r.eta);
    r.lf_per_pattern = f.per_pattern;
    r.band_samples = f.band_samples;
    r.infeasible_samples = f.infeasible_samples;
    r.total = -r.vol + cfg.lambda_f * r.lf() + cfg.lambda_c * r.lc;
    return r;
}

Vec total_loss_gradient(const BarrierNetwork& net, const BarrierMargins& margins, const Dataset& data,
                        const std::vector<int>& columns, const SafetySpec& safety, const FeasibilityProblem& problem,
                        const TrainingConfig& cfg, double eta, double* loss_out) {
    const int n = net.input_dim();
    const int count = static_cast<int>(columns.size());
    Mat X(n, count);
    for (int k = 0; k < count; ++k) X.col(k) = data.samples.col(columns[static_cast<std::size_t>(k)]);
    const Vec b = net.forward_batch(X);

    Vec seeds = Vec::Zero(count);
    double loss = 0.0;
    for (int k = 0; k < count; ++k) {
        const double h = safety.h(X.col(k));
        // -Vol contributes ReLU(h) ReLU(-b); L_c contributes ReLU(-h) ReLU(b)
        if (h > 0.0 && b[k] < 0.0) {
            loss += h * -b[k];
            seeds[k] -= h;
        }
        if (h < 0.0 && b[k] > 0.0) {
            loss += cfg.lambda_c * -h * b[k];
            seeds[k] += cfg.lambda_c * -h;
        }
    }
    Vec grad = Vec::Zero(net.param_count());
    net.accumulate_value_param_gradient_batch(X, seeds, grad);

    if (cfg.lambda_f > 0.0) {
        const double hi = margins.max_bbar() + eta;
        for (int k = 0; k < count; ++k) {
            if (b[k] < -eta || b[k] > hi) continue;
            const Vec x = X.col(k);
            const auto d = net.derivatives(x);
            const auto s = sample_feasibility(d, margins, problem, x, eta);
            if (s.value <= 0.0) continue;
            loss += cfg.lambda_f * s.value;
            net.accumulate_param_gradient(x, cfg.lambda_f * s.seed_value, cfg.lambda_f * s.seed_grad,
                                          cfg.lambda_f * s.seed_hess, grad);
        }
    }
    if (loss_out) *loss_out = loss;
    return grad;
}

BarrierMargins refresh_margins(const BarrierNetwork& net, const std::vector<double>& gammas, const StateBox& box,
                               int resolution, std::uint64_t seed) {
    BarrierMargins m;
    m.gamma = gammas;
    BbarOptions opt;
    opt.resolution = resolution;
    opt.seed = seed;
    for (const auto& e : estimate_bbar_multi(net, gammas, box, opt)) m.bbar.push_back(e.value);
    return m;
}

namespace {

struct Adam {
    Vec m, v;
    long t = 0;

    void step(Vec& theta, const Vec& g, double lr, double b1, double b2, double eps) {
        if (m.size() != g.size()) {
            m = Vec::Zero(g.size());
            v = Vec::Zero(g.size());
        }
        ++t;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

void shuffle(std::vector<int>& order, CounterRng& rng) {
    // Fisher-Yates with the counter stream keeps the order reproducible.
    for (int k = static_cast<int>(order.size()) - 1; k > 0; --k) {
        const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(k + 1));
        std::swap(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(j)]);
    }
}

}  // namespace

double warm_start(BarrierNetwork& net, const Dataset& data, const SafetySpec& safety, const TrainingConfig& cfg) {
    const int N = data.size();
    Vec h = h_values(data, safety);
    h.array() -= cfg.warm_start_margin;
    if (cfg.warm_start_scale > 0.0) h = (h / cfg.warm_start_scale).array().tanh().matrix();
    const int batch = cfg.batch_size > 0 ? std::min(cfg.batch_size, N) : N;
    std::vector<int> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng = CounterRng(cfg.seed, Stream::Dataset).split(0x3a17);
    Adam adam;
    for (int epoch = 0; epoch < cfg.warm_start_epochs; ++epoch) {
        shuffle(order, rng);
        for (int start = 0; start < N; start += batch) {
            const int stop = std::min(N, start + batch);
            Mat X(data.samples.rows(), stop - start);
            Vec target(stop - start);
            for (int k = start; k < stop; ++k) {
                X.col(k - start) = data.samples.col(order[static_cast<std::size_t>(k)]);
                target[k - start] = h[order[static_cast<std::size_t>(k)]];
            }
            const Vec seeds = 2.0 * (net.forward_batch(X) - target) / static_cast<double>(stop - start);
            Vec g = Vec::Zero(net.param_count());
            net.accumulate_value_param_gradient_batch(X, seeds, g);
            adam.step(net.params(), g, cfg.warm_start_step, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        }
    }
    return (net.forward_batch(data.samples) - h).squaredNorm() / std::max(1, N);
}

TrainingResult train(BarrierNetwork& net, const Dataset& data, const TrainingConfig& cfg, const SafetySpec& safety,
                     const FeasibilityProblem& problem, const EpochCallback& on_epoch) {
    cfg.validate();
    if (cfg.gammas.size() != problem.patterns.size()) throw ConfigError("one gamma per fault pattern required");
    TrainingResult result;
    if (cfg.warm_start_epochs > 0) warm_start(net, data, safety, cfg);
    result.margins = refresh_margins(net, cfg.gammas, data.box, cfg.bbar_resolution, cfg.seed);

    const int N = data.size();
    const int batch = cfg.batch_size > 0 ? std::min(cfg.batch_size, N) : N;
    std::vector<int> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    CounterRng shuffle_rng(cfg.seed, Stream::Dataset);
    shuffle_rng = shuffle_rng.split(0x5eed);

    Adam adam;
    int streak = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (epoch > 1 && (epoch - 1) % cfg.bbar_refresh_every == 0)
            result.margins = refresh_margins(net, cfg.gammas, data.box, cfg.bbar_resolution, cfg.seed);

        shuffle(order, shuffle_rng);
        const double eta =
            cfg.boundary_band > 0.0 ? cfg.boundary_band : auto_band(net.forward_batch(data.samples), cfg.band_fraction);
        double gn_sum = 0.0;
        int batches = 0, clipped = 0;
        for (int start = 0; start < N; start += batch) {
            const int stop = std::min(N, start + batch);
            std::vector<int> cols(order.begin() + start, order.begin() + stop);
            Vec g = total_loss_gradient(net, result.margins, data, cols, safety, problem, cfg, eta);
            const double gn = g.norm();
            if (!std::isfinite(gn)) throw Error("non-finite loss gradient at epoch " + std::to_string(epoch));
            gn_sum += gn;
            ++batches;
            if (gn > cfg.grad_clip) {
                g *= cfg.grad_clip / gn;
                ++clipped;
            }
            if (cfg.optimizer == "adam")
                adam.step(net.params(), g, cfg.step_size, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            else
                net.params() -= cfg.step_size * g;
        }

        LossReport rep = evaluate_losses(net, result.margins, data, safety, problem, cfg, epoch);
        rep.grad_norm = gn_sum / std::max(1, batches);
        rep.clipped_steps = clipped;
        if (!std::isfinite(rep.total)) throw Error("non-finite loss at epoch " + std::to_string(epoch));
        result.history.push_back(rep);
        result.epochs_run = epoch;
        if (on_epoch) on_epoch(rep);

        streak = (rep.lf() + rep.lc <= cfg.converge_tol) ? streak + 1 : 0;
        if (streak >= cfg.converge_patience) {
            result.converged = true;
            break;
        }
    }
    return result;
}

}  // namespace ftb
