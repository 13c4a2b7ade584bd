#pragma once

#include <cstdint>

namespace atoms {

// Deterministic splitmix-style 64-bit generator. Every source of randomness
// in the project flows through this type so that identically seeded runs are
// bit-identical across platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();

    // Uniform in [0, 1) with 24 mantissa bits.
    float next_float();

    // Uniform in [0, 1) with 53 mantissa bits.
    double next_double();

    float uniform(float lo, float hi);

    // Standard normal via Box-Muller; consumes two draws per sample.
    float normal();

    // Uniform integer in [0, n), n > 0. Multiply-shift, no modulo bias.
    uint64_t below(uint64_t n);

    // Independent generator derived from this one's current state and a
    // stream id. Does not advance this generator.
    Rng fork(uint64_t stream) const;

private:
    uint64_t state_;
};

}  // namespace atoms
