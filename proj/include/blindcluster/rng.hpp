#pragma once

#include <cstdint>

namespace blindcluster {

// Deterministic counter-based PRNG (splitmix64). The distributions are
// written out explicitly so that a given seed produces the same draw
// sequence on every platform; no std::*_distribution is used anywhere.
class RngState {
public:
    explicit RngState(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t next_u64();
    // [0, 1)
    double uniform01();
    // uniform in [0, n), unbiased via rejection
    std::uint64_t uniform_below(std::uint64_t n);
    // standard normal, Marsaglia polar method
    double normal();

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace blindcluster
