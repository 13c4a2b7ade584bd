#include "tasks/vae.hpp"

#include <filesystem>
#include <fstream>

namespace atoms {

namespace {

// token = 4*py + px over the patch grid, element = 7*iy + ix inside a patch
std::vector<int> patch_index_map() {
    std::vector<int> map(784);
    int pos = 0;
    for (int py = 0; py < 4; ++py)
        for (int px = 0; px < 4; ++px)
            for (int iy = 0; iy < 7; ++iy)
                for (int ix = 0; ix < 7; ++ix)
                    map[static_cast<size_t>(pos++)] = (py * 7 + iy) * 28 + (px * 7 + ix);
    return map;
}

const std::vector<int>& patch_map() {
    static const std::vector<int> map = patch_index_map();
    return map;
}

}  // namespace

Tensor image_to_patches(const Tensor& image) {
    if (image.ndim() != 2 || image.dim(0) != 28 || image.dim(1) != 28)
        throw DimError("image_to_patches: expected a 28x28 image");
    const auto& map = patch_map();
    const auto& src = image.data();
    std::vector<float> out(784);
    for (int i = 0; i < 784; ++i) out[static_cast<size_t>(i)] = src[static_cast<size_t>(map[static_cast<size_t>(i)])];
    Tensor y = tape::new_node("image_to_patches", {image}, {16, 49}, std::move(out));
    Tensor img = image;
    tape::set_backward(y, [img](const std::vector<float>& g) mutable {
        const auto& map = patch_map();
        std::vector<float> gi(784, 0.0f);
        for (int i = 0; i < 784; ++i) gi[static_cast<size_t>(map[static_cast<size_t>(i)])] = g[static_cast<size_t>(i)];
        img.accumulate_grad(gi);
    });
    return y;
}

Tensor patches_to_image(const Tensor& patches) {
    if (patches.ndim() != 2 || patches.dim(0) != 16 || patches.dim(1) != 49)
        throw DimError("patches_to_image: expected 16x49 patches");
    const auto& map = patch_map();
    const auto& src = patches.data();
    std::vector<float> out(784);
    for (int i = 0; i < 784; ++i) out[static_cast<size_t>(map[static_cast<size_t>(i)])] = src[static_cast<size_t>(i)];
    Tensor y = tape::new_node("patches_to_image", {patches}, {28, 28}, std::move(out));
    Tensor p = patches;
    tape::set_backward(y, [p](const std::vector<float>& g) mutable {
        const auto& map = patch_map();
        std::vector<float> gp(784);
        for (int i = 0; i < 784; ++i) gp[static_cast<size_t>(i)] = g[static_cast<size_t>(map[static_cast<size_t>(i)])];
        p.accumulate_grad(gp);
    });
    return y;
}

Tensor vae_recon_mse(const Tensor& recon, const Tensor& target) {
    Tensor diff = subtract(recon, target);
    return mean(hadamard(diff, diff));
}

Tensor vae_kl(const Tensor& mu, const Tensor& logvar) {
    Tensor term = subtract(add(hadamard(mu, mu), exponential(logvar)), add_scalar(logvar, 1.0f));
    return scale(sum(term), 0.5f);
}

DigitVae DigitVae::init(uint64_t seed) {
    Rng rng(seed);
    Rng r1 = rng.fork(1), r2 = rng.fork(2), r3 = rng.fork(3), r4 = rng.fork(4);
    DigitVae v;
    v.patch_w = randn({49, kWidth}, r1, 0.05f, true);
    v.patch_b = Tensor::zeros({1, kWidth}, true);
    v.enc_pos = randn({kTokens, kWidth}, r1, 0.02f, true);
    v.enc1 = AttentionLayer::random_init(kWidth, kWidth, kHeads, r2);
    v.enc2 = AttentionLayer::random_init(kWidth, kWidth, kHeads, r2);
    v.mu_w = randn({kWidth, kLatent}, r1, 0.05f, true);
    v.mu_b = Tensor::zeros({1, kLatent}, true);
    v.logvar_w = randn({kWidth, kLatent}, r1, 0.05f, true);
    v.logvar_b = Tensor::zeros({1, kLatent}, true);
    v.dec_in_w = randn({kLatent, kWidth}, r3, 0.05f, true);
    v.dec_in_b = Tensor::zeros({1, kWidth}, true);
    v.dec_pos = randn({kTokens, kWidth}, r3, 0.02f, true);
    v.dec1 = AttentionLayer::random_init(kWidth, kWidth, kHeads, r4);
    v.dec2 = AttentionLayer::random_init(kWidth, kWidth, kHeads, r4);
    v.out_w = randn({kWidth, 49}, r3, 0.05f, true);
    v.out_b = Tensor::zeros({1, 49}, true);
    return v;
}

void DigitVae::set_frozen(bool frozen) {
    for (auto& [name, t] : params()) {
        (void)name;
        Tensor tt = t;
        tt.set_requires_grad(!frozen);
    }
}

std::vector<NamedParam> DigitVae::params() const {
    std::vector<NamedParam> p;
    p.emplace_back("patch_w", patch_w);
    p.emplace_back("patch_b", patch_b);
    p.emplace_back("enc_pos", enc_pos);
    for (auto& np : enc1.params("enc1")) p.push_back(np);
    for (auto& np : enc2.params("enc2")) p.push_back(np);
    p.emplace_back("mu_w", mu_w);
    p.emplace_back("mu_b", mu_b);
    p.emplace_back("logvar_w", logvar_w);
    p.emplace_back("logvar_b", logvar_b);
    p.emplace_back("dec_in_w", dec_in_w);
    p.emplace_back("dec_in_b", dec_in_b);
    p.emplace_back("dec_pos", dec_pos);
    for (auto& np : dec1.params("dec1")) p.push_back(np);
    for (auto& np : dec2.params("dec2")) p.push_back(np);
    p.emplace_back("out_w", out_w);
    p.emplace_back("out_b", out_b);
    return p;
}

namespace {

// Residual attention layer with an optional dictionary update folded into
// the residual sum.
Tensor decoder_layer(const AttentionLayer& layer, const Tensor& h, const SparseAdapter* adapter,
                     bool enabled, const std::vector<int>* keep, Tensor* coeffs_out,
                     Tensor* delta_out) {
    AttentionOut base = attention_forward(layer, h);
    Tensor out = add(h, base.output);
    if (adapter && enabled) {
        Tensor mix = base.head_maps[0];
        for (size_t i = 1; i < base.head_maps.size(); ++i) mix = add(mix, base.head_maps[i]);
        if (base.head_maps.size() > 1)
            mix = scale(mix, 1.0f / static_cast<float>(base.head_maps.size()));
        AdapterOut a = adapter_forward(*adapter, h, mix);
        Tensor delta = a.delta_o;
        if (keep) delta = select_atoms_delta(*adapter, a.effective_coeffs, *keep);
        out = add(out, delta);
        if (coeffs_out) *coeffs_out = a.effective_coeffs;
        if (delta_out) *delta_out = delta;
    }
    return out;
}

}  // namespace

DigitVae::Forward DigitVae::decode(const Tensor& z, const AdapterHooks& hooks) const {
    Forward f;
    Tensor zrow = add(matmul(z, dec_in_w), dec_in_b);
    Tensor h = add(dec_pos, zrow);
    h = decoder_layer(dec1, h, hooks.dec1, hooks.enable1, hooks.keep1, &f.coeffs1, &f.delta1);
    h = decoder_layer(dec2, h, hooks.dec2, hooks.enable2, hooks.keep2, &f.coeffs2, &f.delta2);
    Tensor patches = add(matmul(h, out_w), out_b);
    f.recon = sigmoid(patches_to_image(patches));
    return f;
}

Tensor DigitVae::encode_mu(const Tensor& image) const {
    Tensor tok = add(add(matmul(image_to_patches(image), patch_w), patch_b), enc_pos);
    tok = add(tok, attention_forward(enc1, tok).output);
    tok = add(tok, attention_forward(enc2, tok).output);
    Tensor pooled = col_mean(tok);
    return add(matmul(pooled, mu_w), mu_b);
}

DigitVae::Forward DigitVae::forward(const Tensor& image, const Tensor& eps,
                                    const AdapterHooks& hooks) const {
    if (eps.numel() != kLatent) throw DimError("vae: eps must have the latent width");
    Tensor tok = add(add(matmul(image_to_patches(image), patch_w), patch_b), enc_pos);
    tok = add(tok, attention_forward(enc1, tok).output);
    tok = add(tok, attention_forward(enc2, tok).output);
    Tensor pooled = col_mean(tok);
    Tensor mu = add(matmul(pooled, mu_w), mu_b);
    Tensor logvar = add(matmul(pooled, logvar_w), logvar_b);
    Tensor z = gaussian_reparam(mu, logvar, reshape(eps, {1, kLatent}));
    Forward f = decode(z, hooks);
    f.mu = mu;
    f.logvar = logvar;
    return f;
}

void DigitVae::save(const std::string& dir) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create model directory: " + dir);
    std::ofstream meta(dir + "/meta.txt");
    if (!meta) throw IoError("cannot write model metadata in " + dir);
    meta << "kind = digit_vae\n";
    for (const auto& [name, t] : params()) save_tensor(dir + "/" + name + ".atns", t);
}

DigitVae DigitVae::load(const std::string& dir) {
    std::ifstream meta(dir + "/meta.txt");
    if (!meta) throw IoError("cannot read model metadata in " + dir);
    DigitVae v = DigitVae::init(0);
    for (auto& [name, t] : v.params()) {
        Tensor loaded = load_tensor(dir + "/" + name + ".atns");
        if (loaded.shape() != t.shape()) throw FormatError("shape mismatch for " + name + " in " + dir);
        Tensor tt = t;
        tt.data() = loaded.data();
    }
    v.enc1.num_heads = v.enc2.num_heads = v.dec1.num_heads = v.dec2.num_heads = kHeads;
    return v;
}

}  // namespace atoms
