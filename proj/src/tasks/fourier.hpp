#pragma once

#include <cstdint>

#include "core/tensor.hpp"

namespace atoms {

// Masked-reconstruction task over band-limited signals: each target sums a
// handful of sinusoid bases with integer frequencies (cycles per length)
// drawn from [band_low, band_high], and only mask_observed positions survive
// the mask.
struct FourierTaskSpec {
    int length = 64;
    int num_bases = 5;
    int band_low = 0;
    int band_high = 24;
    int mask_observed = 16;
    uint64_t seed = 0;

    void validate() const;
};

struct FourierBatch {
    Tensor masked;  // batch x length, target * mask
    Tensor mask;    // batch x length, exactly mask_observed ones per row
    Tensor target;  // batch x length
};

// Deterministic per (spec.seed, batch): the same spec always produces the
// same bytes. Amplitudes are U(-1, 1); each basis is an equiprobable sin or
// cos draw, excluding identically-zero bases, taken without replacement.
FourierBatch gen_fourier_batch(const FourierTaskSpec& spec, int batch);

}  // namespace atoms
