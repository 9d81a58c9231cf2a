#pragma once

// Neural barrier b_theta: fully connected tanh network with a linear scalar
// head. Value, input gradient and input Hessian come from one second-order
// forward sweep; parameter gradients of any linear functional of the three
// come from a reverse sweep over that forward computation.

#include "ftb/sde.hpp"
#include "ftb/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ftb {

enum class Activation : std::uint32_t { Tanh = 0 };

struct BarrierDerivatives {
    double value = 0.0;
    Vec grad;
    Mat hess;
};

class BarrierNetwork {
  public:
    BarrierNetwork() = default;
    /// Zero-initialized network; layer_sizes = [n, h1, ..., hL, 1].
    explicit BarrierNetwork(std::vector<int> layer_sizes, Activation act = Activation::Tanh);

    /// Normal(0, 1/fan_in) weights, zero biases.
    static BarrierNetwork random(std::vector<int> layer_sizes, std::uint64_t seed);

    const std::vector<int>& layer_sizes() const { return sizes_; }
    Activation activation() const { return act_; }
    int input_dim() const { return sizes_.front(); }
    int param_count() const { return static_cast<int>(theta_.size()); }
    int layer_count() const { return static_cast<int>(sizes_.size()) - 1; }

    const Vec& params() const { return theta_; }
    Vec& params() { return theta_; }

    /// Offset of layer l's weight block (row-major, out x in); biases follow it.
    int weight_offset(int l) const { return offsets_[l]; }
    int bias_offset(int l) const { return offsets_[l] + sizes_[l + 1] * sizes_[l]; }

    double forward(const Vec& x) const;
    /// Columns of X are inputs.
    Vec forward_batch(const Mat& X) const;

    Vec input_gradient(const Vec& x) const;
    Mat input_hessian(const Vec& x) const;
    BarrierDerivatives derivatives(const Vec& x) const;

    /// d/dtheta of  sv*b(x) + <sg, db/dx> + <Sh, d2b/dx2>.
    Vec param_gradient(const Vec& x, double seed_value, const Vec& seed_grad, const Mat& seed_hess) const;
    /// Accumulating form; seed_hess may be empty (size 0) to skip the Hessian path.
    void accumulate_param_gradient(const Vec& x, double seed_value, const Vec& seed_grad, const Mat& seed_hess,
                                   Vec& out) const;
    /// d/dtheta of sum_k seeds[k] * b(X.col(k)).
    void accumulate_value_param_gradient_batch(const Mat& X, const Vec& seeds, Vec& out) const;

    void save_binary(const std::filesystem::path& path) const;
    static BarrierNetwork load_binary(const std::filesystem::path& path);
    std::string to_json() const;

    static constexpr std::uint32_t kFormatVersion = 1;

  private:
    struct Layer;
    void build_offsets();

    std::vector<int> sizes_;
    Activation act_ = Activation::Tanh;
    std::vector<int> offsets_;
    Vec theta_;
};

/// Level shifts b_bar^gamma_i and the shifted barrier b_hat = b - b_bar.
struct BarrierMargins {
    std::vector<double> gamma;
    std::vector<double> bbar;

    double shifted(double b, int i) const { return b - bbar[static_cast<std::size_t>(i)]; }
    double max_bbar() const;
};

struct BbarEstimate {
    double value = 0.0;
    double sampled_max = 0.0;      ///< largest b observed inside the gamma-balls
    double lipschitz_floor = 0.0;  ///< max gamma * |db/dx| over boundary points
    bool boundary_found = false;
    int zero_points = 0;
};

struct BbarOptions {
    int resolution = 8;  ///< grid nodes per axis, >= 8
    int directions = 64;
    int radii = 8;
    int max_sampled_points = 256;
    std::uint64_t seed = 0;
};

/// Estimates sup{ b(x) : |x - x0| <= gamma, b(x0) = 0 } over the box.
BbarEstimate estimate_bbar(const BarrierNetwork& net, double gamma, const StateBox& box, const BbarOptions& opt = {});

/// Same zero set and sample directions for every gamma; results are
/// non-decreasing in gamma because smaller balls nest in larger ones.
std::vector<BbarEstimate> estimate_bbar_multi(const BarrierNetwork& net, const std::vector<double>& gammas,
                                              const StateBox& box, const BbarOptions& opt = {});

}  // namespace ftb
