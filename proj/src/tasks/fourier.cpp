#include "tasks/fourier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

namespace atoms {

void FourierTaskSpec::validate() const {
    if (length < 2) throw ContractError("fourier: length must be at least 2");
    if (band_low < 0 || band_high > length / 2 || band_low > band_high)
        throw ContractError("fourier: band [" + std::to_string(band_low) + ", " +
                            std::to_string(band_high) + "] invalid for length " +
                            std::to_string(length));
    if (num_bases < 1) throw ContractError("fourier: num_bases must be positive");
    if (mask_observed < 0 || mask_observed > length)
        throw ContractError("fourier: mask_observed out of range");
}

FourierBatch gen_fourier_batch(const FourierTaskSpec& spec, int batch) {
    spec.validate();
    if (batch < 0) throw ContractError("fourier: batch must be nonnegative");

    // Basis pool over the band: cos at every frequency, sin where it is not
    // identically zero on the integer grid (f = 0 and f = length/2).
    struct Basis {
        int freq;
        bool is_sin;
    };
    std::vector<Basis> pool;
    for (int f = spec.band_low; f <= spec.band_high; ++f) {
        pool.push_back({f, false});
        bool sin_degenerate = f == 0 || 2 * f == spec.length;
        if (!sin_degenerate) pool.push_back({f, true});
    }
    int draws = std::min<int>(spec.num_bases, static_cast<int>(pool.size()));

    int len = spec.length;
    FourierBatch out;
    if (batch == 0) return out;
    out.target = Tensor::zeros({batch, len});
    out.mask = Tensor::zeros({batch, len});
    out.masked = Tensor::zeros({batch, len});

    Rng rng(spec.seed);
    std::vector<int> pick(pool.size());
    std::vector<int> pos(static_cast<size_t>(len));
    const double tau = 2.0 * std::numbers::pi;

    for (int b = 0; b < batch; ++b) {
        // Bases without replacement via partial Fisher-Yates.
        std::iota(pick.begin(), pick.end(), 0);
        for (int j = 0; j < draws; ++j) {
            int swap_with = j + static_cast<int>(rng.below(pick.size() - static_cast<size_t>(j)));
            std::swap(pick[static_cast<size_t>(j)], pick[static_cast<size_t>(swap_with)]);
        }
        for (int j = 0; j < draws; ++j) {
            const Basis& basis = pool[static_cast<size_t>(pick[static_cast<size_t>(j)])];
            float amp = rng.uniform(-1.0f, 1.0f);
            for (int t = 0; t < len; ++t) {
                double phase = tau * basis.freq * t / len;
                double v = basis.is_sin ? std::sin(phase) : std::cos(phase);
                out.target.at(b, t) += amp * static_cast<float>(v);
            }
        }

        std::iota(pos.begin(), pos.end(), 0);
        for (int j = 0; j < spec.mask_observed; ++j) {
            int swap_with = j + static_cast<int>(rng.below(pos.size() - static_cast<size_t>(j)));
            std::swap(pos[static_cast<size_t>(j)], pos[static_cast<size_t>(swap_with)]);
            out.mask.at(b, pos[static_cast<size_t>(j)]) = 1.0f;
        }
        for (int t = 0; t < len; ++t) out.masked.at(b, t) = out.target.at(b, t) * out.mask.at(b, t);
    }
    return out;
}

}  // namespace atoms
