#pragma once

#include <cstdint>
#include <string_view>

namespace plgt {

// Splittable counter-based generator. A single run seed is the root; every
// stochastic site (init, dropout, shuffle, ...) derives its own named stream
// so draws are reproducible regardless of what other sites consume.
//
// Draw routines are implemented directly on the 64-bit stream (no
// std::*_distribution) so the bit stream is identical across platforms and
// standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

    // Derives an independent child stream. Derivation uses the seed this
    // generator was constructed with, not the current draw position.
    Rng derive(std::string_view name) const;
    Rng derive(uint64_t index) const;

    uint64_t next_u64();

    // Uniform double in [0, 1) with 53 bits of precision.
    double uniform();

    // Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller. Consumes exactly two u64 draws.
    double normal();

    uint64_t seed() const { return seed_; }

    // Total u64 draws made on this generator (used to verify that inference
    // paths consume no randomness).
    uint64_t draw_count() const { return draws_; }

private:
    uint64_t seed_;
    uint64_t state_;
    uint64_t draws_ = 0;
};

}  // namespace plgt
