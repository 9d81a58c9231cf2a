#include "ftb/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ftb {

namespace {

constexpr double kZeroRow = 1e-12;
constexpr double kViolation = 1e-12;
constexpr int kMaxIterations = 100;

// Internal row in normalized form a^T u + c >= 0 with |a| = 1.
struct NormRow {
    Vec a;
    double c;
    double scale;  // |Lambda| of the source row
    int source;    // input row index, or rows.size() + k for box rows
};

struct Prepared {
    std::vector<NormRow> rows;
    bool trivially_infeasible = false;
};

Prepared prepare(const std::vector<FeasibilityRow>& rows, int p, const std::optional<InputBox>& box) {
    Prepared out;
    auto add = [&](const Vec& a, double c, int source) {
        const double s = a.norm();
        if (s <= kZeroRow) {
            if (c < 0.0) out.trivially_infeasible = true;
            return;
        }
        Vec an = a / s;
        const double cn = c / s;
        for (const auto& r : out.rows)
            if ((r.a - an).lpNorm<Eigen::Infinity>() <= 1e-12 && std::abs(r.c - cn) <= 1e-12) return;
        out.rows.push_back({std::move(an), cn, s, source});
    };
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].lambda.size() != p) throw Error("feasibility row has wrong input dimension");
        add(rows[i].lambda, rows[i].xi, static_cast<int>(i));
    }
    if (box) {
        const int base = static_cast<int>(rows.size());
        for (int k = 0; k < p; ++k) {
            Vec e = Vec::Zero(p);
            e[k] = 1.0;
            if (std::isfinite(box->lo[k])) add(e, -box->lo[k], base + 2 * k);
            if (std::isfinite(box->hi[k])) add(-e, box->hi[k], base + 2 * k + 1);
        }
    }
    return out;
}

struct Solve {
    Vec u;
    std::vector<int> active;  // positions into prepared rows
    std::vector<double> mu;   // aligned with active
    bool infeasible = false;
    bool converged = false;
    int iterations = 0;
};

Solve goldfarb_idnani(const std::vector<NormRow>& rows, int p) {
    Solve s;
    s.u = Vec::Zero(p);
    const int m = static_cast<int>(rows.size());
    std::vector<bool> is_active(static_cast<std::size_t>(m), false);

    while (s.iterations < kMaxIterations) {
        // most violated inactive constraint
        int add = -1;
        double worst = -kViolation;
        for (int i = 0; i < m; ++i) {
            if (is_active[static_cast<std::size_t>(i)]) continue;
            const double slack = rows[static_cast<std::size_t>(i)].a.dot(s.u) + rows[static_cast<std::size_t>(i)].c;
            if (slack < worst) {
                worst = slack;
                add = i;
            }
        }
        if (add < 0) {
            s.converged = true;
            return s;
        }
        const Vec& np = rows[static_cast<std::size_t>(add)].a;
        double mu_new = 0.0;

        while (true) {
            ++s.iterations;
            if (s.iterations > kMaxIterations) return s;
            const int k = static_cast<int>(s.active.size());
            Vec z = np;
            Vec r;
            if (k > 0) {
                Mat N(p, k);
                for (int j = 0; j < k; ++j) N.col(j) = rows[static_cast<std::size_t>(s.active[static_cast<std::size_t>(j)])].a;
                r = (N.transpose() * N).ldlt().solve(N.transpose() * np);
                z = np - N * r;
            }
            // blocking active constraint whose multiplier would hit zero first
            double t1 = std::numeric_limits<double>::infinity();
            int drop = -1;
            for (int j = 0; j < k; ++j) {
                if (r[j] > 1e-14) {
                    const double ratio = s.mu[static_cast<std::size_t>(j)] / r[j];
                    if (ratio < t1) {
                        t1 = ratio;
                        drop = j;
                    }
                }
            }
            const double slack = np.dot(s.u) + rows[static_cast<std::size_t>(add)].c;
            if (z.norm() <= 1e-10) {
                if (drop < 0) {
                    s.infeasible = true;  // dual ray: no u satisfies the system
                    return s;
                }
                for (int j = 0; j < k; ++j) s.mu[static_cast<std::size_t>(j)] -= t1 * r[j];
                mu_new += t1;
                is_active[static_cast<std::size_t>(s.active[static_cast<std::size_t>(drop)])] = false;
                s.active.erase(s.active.begin() + drop);
                s.mu.erase(s.mu.begin() + drop);
                continue;
            }
            const double t2 = -slack / z.dot(np);
            const double t = std::min(t1, t2);
            s.u += t * z;
            for (int j = 0; j < k; ++j) s.mu[static_cast<std::size_t>(j)] -= t * r[j];
            mu_new += t;
            if (t2 <= t1) {
                s.active.push_back(add);
                s.mu.push_back(mu_new);
                is_active[static_cast<std::size_t>(add)] = true;
                break;
            }
            is_active[static_cast<std::size_t>(s.active[static_cast<std::size_t>(drop)])] = false;
            s.active.erase(s.active.begin() + drop);
            s.mu.erase(s.mu.begin() + drop);
        }
    }
    return s;
}

// Exact fallback for tiny problems: enumerate candidate active sets of size
// <= p and keep the smallest-norm KKT point. Also decides feasibility.
Solve enumerate_active_sets(const std::vector<NormRow>& rows, int p) {
    Solve best;
    best.infeasible = true;
    const int m = static_cast<int>(rows.size());
    double best_norm = std::numeric_limits<double>::infinity();
    std::vector<int> subset;
    auto consider = [&]() {
        const int k = static_cast<int>(subset.size());
        Vec u = Vec::Zero(p);
        Vec mu;
        if (k > 0) {
            Mat N(p, k);
            Vec c(k);
            for (int j = 0; j < k; ++j) {
                N.col(j) = rows[static_cast<std::size_t>(subset[static_cast<std::size_t>(j)])].a;
                c[j] = rows[static_cast<std::size_t>(subset[static_cast<std::size_t>(j)])].c;
            }
            Eigen::FullPivLU<Mat> lu(N.transpose() * N);
            if (lu.rank() < k) return;
            mu = lu.solve(-c);
            if ((mu.array() < -1e-12).any()) return;
            u = N * mu;
        }
        for (const auto& r : rows)
            if (r.a.dot(u) + r.c < -1e-10) return;
        const double nu = u.norm();
        if (nu < best_norm) {
            best_norm = nu;
            best.u = u;
            best.active = subset;
            best.mu.assign(mu.data(), mu.data() + mu.size());
            best.infeasible = false;
            best.converged = true;
        }
    };
    auto recurse = [&](auto&& self, int start) -> void {
        consider();
        if (static_cast<int>(subset.size()) == p) return;
        for (int i = start; i < m; ++i) {
            subset.push_back(i);
            self(self, i + 1);
            subset.pop_back();
        }
    };
    recurse(recurse, 0);
    return best;
}

}  // namespace

QpSolution solve_min_norm(const std::vector<FeasibilityRow>& rows, int p, const std::optional<InputBox>& u_bounds) {
    if (p < 1) throw Error("input dimension must be >= 1");
    if (rows.empty() && !u_bounds) throw Error("min-norm QP needs at least one row");
    QpSolution out;
    out.u = Vec::Zero(p);
    out.multipliers = Vec::Zero(static_cast<Eigen::Index>(rows.size()));

    const Prepared prep = prepare(rows, p, u_bounds);
    if (prep.trivially_infeasible) {
        out.status = QpStatus::Infeasible;
        return out;
    }
    bool zero_ok = true;
    for (const auto& r : prep.rows)
        if (r.c < 0.0) zero_ok = false;
    if (zero_ok) {
        out.status = QpStatus::Unconstrained;
        return out;
    }

    Solve s = goldfarb_idnani(prep.rows, p);
    out.iterations = s.iterations;
    if (!s.converged && !s.infeasible) {
        s = enumerate_active_sets(prep.rows, p);
        out.used_fallback = true;
    }
    if (s.infeasible) {
        out.status = QpStatus::Infeasible;
        return out;
    }
    out.status = QpStatus::Optimal;
    out.u = s.u;
    for (std::size_t j = 0; j < s.active.size(); ++j) {
        const NormRow& r = prep.rows[static_cast<std::size_t>(s.active[j])];
        out.active_set.push_back(r.source);
        if (r.source < static_cast<int>(rows.size())) out.multipliers[r.source] = s.mu[j] / r.scale;
    }
    std::sort(out.active_set.begin(), out.active_set.end());
    return out;
}

bool feasible(const std::vector<FeasibilityRow>& rows, const Vec& u) {
    for (const auto& r : rows)
        if (r.xi + r.lambda.dot(u) < -1e-9) return false;
    return true;
}

double kkt_residual(const std::vector<FeasibilityRow>& rows, const QpSolution& sol) {
    if (rows.empty()) return 0.0;
    Vec recon = Vec::Zero(sol.u.size());
    double comp = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double mu = sol.multipliers.size() ? sol.multipliers[static_cast<Eigen::Index>(i)] : 0.0;
        recon += mu * rows[i].lambda;
        comp = std::max(comp, std::abs(mu * (rows[i].xi + rows[i].lambda.dot(sol.u))));
        if (mu < 0.0) comp = std::max(comp, -mu);
    }
    return std::max(comp, (sol.u - recon).lpNorm<Eigen::Infinity>());
}

}  // namespace ftb
