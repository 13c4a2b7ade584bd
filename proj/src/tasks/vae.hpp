#pragma once

#include <cstdint>
#include <string>

#include "attention/adapter.hpp"

namespace atoms {

// Differentiable 28x28 <-> 16x49 patch reordering (patch size 7, 4x4 grid).
Tensor image_to_patches(const Tensor& image);
Tensor patches_to_image(const Tensor& patches);

// Per-sample ELBO pieces.
Tensor vae_recon_mse(const Tensor& recon, const Tensor& target);
// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar); nonnegative for finite inputs.
Tensor vae_kl(const Tensor& mu, const Tensor& logvar);

// Optional dictionary updates on the decoder attention layers. A null keep
// list uses every atom; enable flags allow single-layer ablations.
struct VaeAdapterHooks {
    const SparseAdapter* dec1 = nullptr;
    const SparseAdapter* dec2 = nullptr;
    bool enable1 = true, enable2 = true;
    const std::vector<int>* keep1 = nullptr;
    const std::vector<int>* keep2 = nullptr;
};

// Transformer autoencoder over 28x28 digits: patch size 7 (16 tokens of 49
// pixels), width 128, 4 heads, two attention layers on each side with
// residual connections, and a 32-d Gaussian latent.
struct DigitVae {
    Tensor patch_w, patch_b;  // 49 x 128, 1 x 128
    Tensor enc_pos;           // 16 x 128
    AttentionLayer enc1, enc2;
    Tensor mu_w, mu_b;         // 128 x 32
    Tensor logvar_w, logvar_b; // 128 x 32
    Tensor dec_in_w, dec_in_b; // 32 x 128
    Tensor dec_pos;            // 16 x 128
    AttentionLayer dec1, dec2;
    Tensor out_w, out_b;       // 128 x 49

    static constexpr int kTokens = 16;
    static constexpr int kWidth = 128;
    static constexpr int kLatent = 32;
    static constexpr int kHeads = 4;

    static DigitVae init(uint64_t seed);

    void set_frozen(bool frozen);
    std::vector<NamedParam> params() const;

    using AdapterHooks = VaeAdapterHooks;

    struct Forward {
        Tensor recon;        // 28 x 28, sigmoid outputs in (0, 1)
        Tensor mu, logvar;   // 1 x 32
        Tensor coeffs1, coeffs2;  // effective adapter codes when attached
        Tensor delta1, delta2;    // adapter feature updates when attached
    };

    Forward forward(const Tensor& image, const Tensor& eps,
                    const AdapterHooks& hooks = {}) const;

    // Decoder alone, for fixed-latent comparisons and atom analysis.
    Forward decode(const Tensor& z, const AdapterHooks& hooks = {}) const;

    Tensor encode_mu(const Tensor& image) const;

    void save(const std::string& dir) const;
    static DigitVae load(const std::string& dir);
};

}  // namespace atoms
