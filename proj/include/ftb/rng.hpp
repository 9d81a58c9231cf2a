#pragma once

#include "ftb/types.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ftb {

/// Stream identifiers for splitting one base seed by purpose.
enum class Stream : std::uint64_t {
    Plant = 1,
    Measurement = 2,
    Attack = 3,
    FilterInit = 4,
    InitialState = 5,
    Dataset = 6,
    NetworkInit = 7,
    Bbar = 8,
    Falsifier = 9,
    Campaign = 10,
};

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based generator: draw k of stream s under seed is a pure function
/// of (seed, s, k), so independent consumers never perturb each other.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_(splitmix64(seed ^ splitmix64(stream * 0xd1b54a32d192ed03ULL))) {}
    CounterRng(std::uint64_t seed, Stream stream) : CounterRng(seed, static_cast<std::uint64_t>(stream)) {}

    /// Derives a child stream (e.g. one per trajectory or per filter).
    CounterRng split(std::uint64_t substream) const {
        CounterRng child(key_, substream + 0x51ed2701ULL);
        return child;
    }

    std::uint64_t next_u64() { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform in the open interval (0, 1).
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    Vec normals(Eigen::Index k) {
        Vec v(k);
        for (Eigen::Index i = 0; i < k; ++i) v[i] = normal();
        return v;
    }

    std::uint64_t counter() const { return counter_; }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace ftb
