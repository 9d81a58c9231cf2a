#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace ftb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IndexSet = std::vector<int>;

/// Base for all recoverable toolkit failures.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised when a plant or filter step produces a non-finite value.
class IntegrationDiverged : public Error {
  public:
    IntegrationDiverged(const std::string& what, Vec state, long step = -1)
        : Error(what), state_(std::move(state)), step_(step) {}
    const Vec& state() const { return state_; }
    long step() const { return step_; }

  private:
    Vec state_;
    long step_;
};

class DegenerateObservation : public Error {
  public:
    using Error::Error;
};

class IllConditionedNoise : public Error {
  public:
    using Error::Error;
};

class FilterDiverged : public Error {
  public:
    FilterDiverged(const std::string& what, int filter_id) : Error(what), filter_id_(filter_id) {}
    int filter_id() const { return filter_id_; }

  private:
    int filter_id_;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace ftb
