#include "ftb/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace ftb {

RestrictedObservation exclude_sensors(const Mat& c, const Mat& noise, const IndexSet& excluded) {
    const int q = static_cast<int>(c.rows());
    std::set<int> drop(excluded.begin(), excluded.end());
    for (int k : drop)
        if (k < 0 || k >= q) throw DegenerateObservation("excluded sensor index out of range");
    RestrictedObservation out;
    for (int k = 0; k < q; ++k)
        if (!drop.count(k)) out.kept.push_back(k);
    if (out.kept.empty()) throw DegenerateObservation("excluding every sensor leaves nothing to observe");
    const int qp = static_cast<int>(out.kept.size());
    out.c.resize(qp, c.cols());
    out.noise.resize(qp, qp);
    for (int a = 0; a < qp; ++a) {
        out.c.row(a) = c.row(out.kept[a]);
        for (int b = 0; b < qp; ++b) out.noise(a, b) = noise(out.kept[a], out.kept[b]);
    }
    return out;
}

Vec restrict_rows(const Vec& full, const IndexSet& kept) {
    Vec out(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t a = 0; a < kept.size(); ++a) out[static_cast<Eigen::Index>(a)] = full[kept[a]];
    return out;
}

namespace {

Mat invert_covariance(const Mat& noise) {
    const Mat R = noise * noise.transpose();
    Eigen::SelfAdjointEigenSolver<Mat> es(R);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e14) throw IllConditionedNoise("retained measurement noise covariance is singular");
    Mat inv = R.llt().solve(Mat::Identity(R.rows(), R.cols()));
    return 0.5 * (inv + inv.transpose());
}

void symmetrize_and_clamp(Mat& P) {
    P = 0.5 * (P + P.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(P);
    if (es.eigenvalues().minCoeff() < 0.0) {
        const Vec clamped = es.eigenvalues().cwiseMax(0.0);
        P = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
        P = 0.5 * (P + P.transpose());
    }
}

}  // namespace

EkfState make_ekf(const ControlAffineSdeSystem& sys, const IndexSet& excluded, const Vec& x0, const Mat& P0) {
    auto obs = exclude_sensors(sys.output_matrix, sys.output_noise, excluded);
    EkfState s;
    s.xhat = x0;
    s.P = P0;
    s.sensors = std::move(obs.kept);
    s.c = std::move(obs.c);
    s.noise = std::move(obs.noise);
    s.r_inv = invert_covariance(s.noise);
    s.K = s.P * s.c.transpose() * s.r_inv;
    return s;
}

Mat jacobian_fbar_fd(const ControlAffineSdeSystem& sys, const Vec& xhat, const Vec& u) {
    const int n = static_cast<int>(xhat.size());
    Mat A(n, n);
    Vec xp = xhat, xm = xhat;
    for (int j = 0; j < n; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(xhat[j]));
        xp[j] = xhat[j] + h;
        xm[j] = xhat[j] - h;
        A.col(j) = (sys.closed_drift(xp, u) - sys.closed_drift(xm, u)) / (xp[j] - xm[j]);
        xp[j] = xhat[j];
        xm[j] = xhat[j];
    }
    return A;
}

Mat jacobian_fbar(const ControlAffineSdeSystem& sys, const Vec& xhat, const Vec& u) {
    if (sys.drift_jacobian) return sys.drift_jacobian(xhat, u);
    return jacobian_fbar_fd(sys, xhat, u);
}

void ekf_advance(EkfState& s, const ControlAffineSdeSystem& sys, const Vec& u, const Vec& dy, double dt) {
    if (dt <= 0.0) return;
    const Mat A = jacobian_fbar(sys, s.xhat, u);
    const Mat Q = sys.diffusion * sys.diffusion.transpose();
    const Mat ct_rinv = s.c.transpose() * s.r_inv;
    const Mat S = ct_rinv * s.c;
    const Vec z = dy / dt;

    // Riccati decay is stiff while P is large against R; pick the RK4
    // substep so that h * rate stays well inside the stability region.
    const double rate = A.norm() + 2.0 * (S * s.P).norm();
    const int substeps = std::clamp(static_cast<int>(std::ceil(dt * rate / 0.5)), 1, 4000);
    const double h = dt / substeps;

    auto deriv = [&](const Vec& x, const Mat& P, Vec& dx, Mat& dP) {
        dx = sys.closed_drift(x, u) + P * (ct_rinv * (z - s.c * x));
        dP = A * P + P * A.transpose() + Q - P * S * P;
    };

    Vec x = s.xhat;
    Mat P = s.P;
    Vec k1x, k2x, k3x, k4x;
    Mat k1P, k2P, k3P, k4P;
    for (int step = 0; step < substeps; ++step) {
        deriv(x, P, k1x, k1P);
        deriv(x + 0.5 * h * k1x, P + 0.5 * h * k1P, k2x, k2P);
        deriv(x + 0.5 * h * k2x, P + 0.5 * h * k2P, k3x, k3P);
        deriv(x + h * k3x, P + h * k3P, k4x, k4P);
        x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        P += (h / 6.0) * (k1P + 2.0 * k2P + 2.0 * k3P + k4P);
        P = 0.5 * (P + P.transpose());
    }
    symmetrize_and_clamp(P);
    if (!x.allFinite() || !P.allFinite()) throw FilterDiverged("extended Kalman filter diverged", -1);
    s.xhat = std::move(x);
    s.P = std::move(P);
    s.K = s.P * ct_rinv;
}

EkfState ekf_step(const EkfState& state, const ControlAffineSdeSystem& sys, const Vec& u, const Vec& dy, double dt) {
    EkfState next = state;
    ekf_advance(next, sys, u, dy, dt);
    return next;
}

double gain_consistency_error(const EkfState& s) {
    const Mat expected = s.P * s.c.transpose() * s.r_inv;
    const double scale = std::max(expected.norm(), 1e-300);
    return (s.K - expected).norm() / scale;
}

EkfBank EkfBank::initialize(const ControlAffineSdeSystem& sys, const std::vector<IndexSet>& patterns,
                            const Vec& x_true, const CounterRng& rng, double p0_scale, double init_var,
                            int residue_window) {
    EkfBank bank;
    bank.m_ = static_cast<int>(patterns.size());
    bank.window_ = std::max(1, residue_window);
    bank.excluded_.push_back({});
    for (const auto& f : patterns) bank.excluded_.push_back(f);
    for (int i = 0; i < bank.m_; ++i)
        for (int j = i + 1; j < bank.m_; ++j) {
            std::set<int> u(patterns[i].begin(), patterns[i].end());
            u.insert(patterns[j].begin(), patterns[j].end());
            bank.excluded_.emplace_back(u.begin(), u.end());
        }
    const Mat P0 = p0_scale * Mat::Identity(sys.n, sys.n);
    const double sd = std::sqrt(init_var);
    for (std::size_t slot = 0; slot < bank.excluded_.size(); ++slot) {
        CounterRng r = rng.split(slot);
        const Vec x0 = x_true + sd * r.normals(sys.n);
        bank.filters_.push_back(make_ekf(sys, bank.excluded_[slot], x0, P0));
    }
    bank.residues_.resize(bank.filters_.size());
    return bank;
}

void EkfBank::step(const ControlAffineSdeSystem& sys, const Vec& dy_full, const Vec& u, double dt) {
    for (std::size_t slot = 0; slot < filters_.size(); ++slot) {
        auto& f = filters_[slot];
        const Vec dy = restrict_rows(dy_full, f.sensors);
        auto& hist = residues_[slot];
        hist.push_back((dy - f.c * f.xhat * dt).norm());
        if (static_cast<int>(hist.size()) > window_) hist.pop_front();
        try {
            ekf_advance(f, sys, u, dy, dt);
        } catch (const FilterDiverged&) {
            throw FilterDiverged("filter " + std::to_string(slot) + " diverged", static_cast<int>(slot));
        }
    }
}

FilterId EkfBank::id(int slot) const {
    if (slot == 0) return {FilterId::Kind::Full, -1, -1};
    if (slot <= m_) return {FilterId::Kind::Pattern, slot - 1, -1};
    int s = m_ + 1;
    for (int i = 0; i < m_; ++i)
        for (int j = i + 1; j < m_; ++j, ++s)
            if (s == slot) return {FilterId::Kind::Pair, i, j};
    return {};
}

int EkfBank::pair_slot(int i, int j) const {
    if (i > j) std::swap(i, j);
    // pairs are stored in ascending (i, j) order after the pattern filters
    int s = m_ + 1;
    for (int a = 0; a < i; ++a) s += m_ - a - 1;
    return s + (j - i - 1);
}

double EkfBank::residue(int i) const {
    const auto& hist = residues_[1 + i];
    if (hist.empty()) return 0.0;
    return std::accumulate(hist.begin(), hist.end(), 0.0) / static_cast<double>(hist.size());
}

std::array<double, 3> pairwise_distance(const EkfBank& bank, int i, int j) {
    const Vec& xi = bank.pattern(i).xhat;
    const Vec& xj = bank.pattern(j).xhat;
    const Vec& xij = bank.pair(i, j).xhat;
    return {(xi - xj).norm(), (xi - xij).norm(), (xj - xij).norm()};
}

double residue(const EkfBank& bank, int i) { return bank.residue(i); }

}  // namespace ftb
