#pragma once

// Minimum-effort control: min u^T u subject to xi_i + Lambda_i u >= 0.

#include "ftb/types.hpp"

#include <optional>
#include <vector>

namespace ftb {

struct FeasibilityRow {
    Vec lambda;  ///< Lambda_i = db/dx g(xhat), length p
    double xi = 0.0;
    int pattern = -1;
};

enum class QpStatus { Optimal, Infeasible, Unconstrained };

struct QpSolution {
    Vec u;
    std::vector<int> active_set;  ///< indices into the input rows; box rows follow them
    Vec multipliers;              ///< one per input row (box rows excluded), >= 0
    QpStatus status = QpStatus::Unconstrained;
    int iterations = 0;
    bool used_fallback = false;
};

struct InputBox {
    Vec lo;
    Vec hi;
};

/// Dual active-set (Goldfarb-Idnani) iteration started from the
/// unconstrained minimizer u = 0. Infeasibility is reported as a status.
QpSolution solve_min_norm(const std::vector<FeasibilityRow>& rows, int p,
                          const std::optional<InputBox>& u_bounds = std::nullopt);

/// True iff xi_i + Lambda_i u >= -1e-9 for every row.
bool feasible(const std::vector<FeasibilityRow>& rows, const Vec& u);

/// max_i |mu_i * (xi_i + Lambda_i u)| and |u - sum mu_i Lambda_i|, for checking optimality.
double kkt_residual(const std::vector<FeasibilityRow>& rows, const QpSolution& sol);

}  // namespace ftb
