#pragma once

// Continuous-time extended Kalman filtering with sensor exclusion, and the
// bank of 1 + m + C(m,2) filters used for conflict resolution.

#include "ftb/rng.hpp"
#include "ftb/sde.hpp"
#include "ftb/types.hpp"

#include <array>
#include <deque>
#include <vector>

namespace ftb {

struct RestrictedObservation {
    Mat c;          ///< retained rows of the output matrix
    Mat noise;      ///< retained rows/columns of the output noise
    IndexSet kept;  ///< retained row indices, ascending
};

/// Drops the rows in `excluded`; throws DegenerateObservation if nothing remains.
RestrictedObservation exclude_sensors(const Mat& c, const Mat& noise, const IndexSet& excluded);

/// Selects the rows of a full-length output vector kept by an observation.
Vec restrict_rows(const Vec& full, const IndexSet& kept);

struct EkfState {
    Vec xhat;
    Mat P;
    Mat K;  ///< n x q', always P c'^T R'^-1
    IndexSet sensors;
    Mat c;      ///< q' x n
    Mat noise;  ///< q' x q'
    Mat r_inv;  ///< (noise noise^T)^-1

    int q_prime() const { return static_cast<int>(sensors.size()); }
};

/// Builds a filter that ignores `excluded` rows. Throws IllConditionedNoise
/// when the retained measurement covariance cannot be inverted.
EkfState make_ekf(const ControlAffineSdeSystem& sys, const IndexSet& excluded, const Vec& x0, const Mat& P0);

/// A_t = d(f + g u)/dx at (xhat, u); analytic when the system provides it.
Mat jacobian_fbar(const ControlAffineSdeSystem& sys, const Vec& xhat, const Vec& u);

/// Central differences with step 1e-6 * max(1, |x_i|), regardless of any analytic form.
Mat jacobian_fbar_fd(const ControlAffineSdeSystem& sys, const Vec& xhat, const Vec& u);

/// Advances the estimate and Riccati flow across one step of length dt,
/// treating the measurement rate dy'/dt as constant over the step.
EkfState ekf_step(const EkfState& state, const ControlAffineSdeSystem& sys, const Vec& u, const Vec& dy_restricted,
                  double dt);

/// In-place form used by the bank.
void ekf_advance(EkfState& state, const ControlAffineSdeSystem& sys, const Vec& u, const Vec& dy_restricted, double dt);

/// Largest deviation of K from P c^T R^-1, relative to |K|.
double gain_consistency_error(const EkfState& state);

struct FilterId {
    enum class Kind { Full, Pattern, Pair };
    Kind kind = Kind::Full;
    int i = -1;
    int j = -1;
};

class EkfBank {
  public:
    /// P0 = p0_scale * I; every filter starts from x_true perturbed by
    /// N(0, init_var * I) drawn from its own sub-stream of `rng`.
    static EkfBank initialize(const ControlAffineSdeSystem& sys, const std::vector<IndexSet>& patterns,
                              const Vec& x_true, const CounterRng& rng, double p0_scale = 0.1, double init_var = 0.01,
                              int residue_window = 20);

    /// Advances every filter with its own restriction of the measured full dy.
    void step(const ControlAffineSdeSystem& sys, const Vec& dy_full, const Vec& u, double dt);

    int m() const { return m_; }
    int size() const { return static_cast<int>(filters_.size()); }

    const EkfState& full() const { return filters_[0]; }
    const EkfState& pattern(int i) const { return filters_[1 + i]; }
    const EkfState& pair(int i, int j) const { return filters_[pair_slot(i, j)]; }
    const EkfState& filter(int slot) const { return filters_[slot]; }
    EkfState& filter(int slot) { return filters_[slot]; }
    FilterId id(int slot) const;
    const IndexSet& excluded(int slot) const { return excluded_[slot]; }

    /// Mean of |dy' - c' xhat dt| over the recent window for a pattern filter.
    double residue(int i) const;
    const std::deque<double>& residue_history(int slot) const { return residues_[slot]; }

  private:
    int pair_slot(int i, int j) const;

    int m_ = 0;
    int window_ = 20;
    std::vector<EkfState> filters_;
    std::vector<IndexSet> excluded_;
    std::vector<std::deque<double>> residues_;
};

/// (|x_i - x_j|, |x_i - x_ij|, |x_j - x_ij|) for pattern filters i < j.
std::array<double, 3> pairwise_distance(const EkfBank& bank, int i, int j);

/// Mean over a window of |y_bar - c_bar xhat dt| for a pattern filter.
double residue(const EkfBank& bank, int i);

}  // namespace ftb
