#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>

#include "oracles.hpp"
#include "tasks/digits.hpp"
#include "tasks/fourier.hpp"
#include "tasks/signal_model.hpp"
#include "tasks/vae.hpp"

using namespace atoms;

TEST_CASE("fourier: DC-only band gives constant targets") {
    FourierTaskSpec spec;
    spec.band_low = 0;
    spec.band_high = 0;
    spec.seed = 9;
    FourierBatch batch = gen_fourier_batch(spec, 4);
    for (int b = 0; b < 4; ++b)
        for (int t = 1; t < 64; ++t)
            CHECK(batch.target.at(b, t) == doctest::Approx(batch.target.at(b, 0)));
}

TEST_CASE("fourier: mask has exactly the observed count per row") {
    FourierTaskSpec spec;
    spec.seed = 123;
    FourierBatch batch = gen_fourier_batch(spec, 8);
    for (int b = 0; b < 8; ++b) {
        int ones = 0;
        for (int t = 0; t < 64; ++t) {
            float v = batch.mask.at(b, t);
            CHECK((v == 0.0f || v == 1.0f));
            ones += v == 1.0f ? 1 : 0;
            CHECK(batch.masked.at(b, t) == batch.target.at(b, t) * v);
        }
        CHECK(ones == 16);
    }
}

TEST_CASE("fourier: identical seeds give bit-identical batches") {
    FourierTaskSpec spec;
    spec.seed = 77;
    FourierBatch a = gen_fourier_batch(spec, 6);
    FourierBatch b = gen_fourier_batch(spec, 6);
    CHECK(a.target.data() == b.target.data());
    CHECK(a.mask.data() == b.mask.data());
}

TEST_CASE("fourier: targets are band limited") {
    FourierTaskSpec spec;
    spec.band_low = 25;
    spec.band_high = 32;
    spec.seed = 5;
    FourierBatch batch = gen_fourier_batch(spec, 4);
    for (int b = 0; b < 4; ++b) {
        double total = 1e-30, out_of_band = 0.0;
        for (int f = 0; f <= 32; ++f) {
            double re = 0.0, im = 0.0;
            for (int t = 0; t < 64; ++t) {
                double phase = 2.0 * std::numbers::pi * f * t / 64.0;
                re += batch.target.at(b, t) * std::cos(phase);
                im -= batch.target.at(b, t) * std::sin(phase);
            }
            double energy = re * re + im * im;
            total += energy;
            if (f < spec.band_low || f > spec.band_high) out_of_band += energy;
        }
        CHECK(out_of_band / total < 1e-5);
    }
}

TEST_CASE("fourier: inverted band is rejected") {
    FourierTaskSpec spec;
    spec.band_low = 30;
    spec.band_high = 20;
    CHECK_THROWS_AS(gen_fourier_batch(spec, 1), ContractError);
}

namespace {

void write_idx_fixture(const std::string& img_path, const std::string& lab_path, int count,
                       bool corrupt_label_magic = false) {
    auto be32 = [](std::ofstream& os, uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>(v & 0xff)};
        os.write(reinterpret_cast<char*>(b), 4);
    };
    std::ofstream img(img_path, std::ios::binary);
    be32(img, 0x00000803u);
    be32(img, static_cast<uint32_t>(count));
    be32(img, 28);
    be32(img, 28);
    for (int i = 0; i < count; ++i)
        for (int p = 0; p < 784; ++p) img.put(static_cast<char>((i * 7 + p) % 256));
    std::ofstream lab(lab_path, std::ios::binary);
    be32(lab, corrupt_label_magic ? 0x00000999u : 0x00000801u);
    be32(lab, static_cast<uint32_t>(count));
    for (int i = 0; i < count; ++i) lab.put(static_cast<char>(i % 10));
}

}  // namespace

TEST_CASE("idx loader reads a crafted fixture") {
    auto tmp = std::filesystem::temp_directory_path();
    std::string img = (tmp / "fixture_images.idx").string();
    std::string lab = (tmp / "fixture_labels.idx").string();
    write_idx_fixture(img, lab, 2);
    DigitDataset ds = load_idx(img, lab);
    CHECK(ds.count() == 2);
    CHECK(ds.labels[0] == 0);
    CHECK(ds.labels[1] == 1);
    CHECK(ds.image(0).at(0, 0) == doctest::Approx(0.0f));
    CHECK(ds.image(0).at(0, 1) == doctest::Approx(1.0f / 255.0f));
    CHECK(ds.image(1).at(0, 0) == doctest::Approx(7.0f / 255.0f));
    std::remove(img.c_str());
    std::remove(lab.c_str());
}

TEST_CASE("idx loader rejects malformed files") {
    auto tmp = std::filesystem::temp_directory_path();
    std::string img = (tmp / "fixture_images2.idx").string();
    std::string lab = (tmp / "fixture_labels2.idx").string();

    {
        std::ofstream empty(img, std::ios::binary);
    }
    write_idx_fixture((tmp / "ok_images.idx").string(), lab, 1);
    CHECK_THROWS_AS(load_idx(img, lab), FormatError);

    write_idx_fixture(img, lab, 1, /*corrupt_label_magic=*/true);
    CHECK_THROWS_AS(load_idx(img, lab), FormatError);

    CHECK_THROWS_AS(load_idx("/nope/images.idx", "/nope/labels.idx"), IoError);
    std::remove(img.c_str());
    std::remove(lab.c_str());
    std::remove((tmp / "ok_images.idx").string().c_str());
}

TEST_CASE("synthetic digits: determinism, range, and empty set") {
    DigitDataset none = synth_digits(1, 0, {3});
    CHECK(none.count() == 0);

    DigitDataset a = synth_digits(42, 12, {3, 5, 8});
    DigitDataset b = synth_digits(42, 12, {3, 5, 8});
    CHECK(a.images.data() == b.images.data());
    CHECK(a.labels == b.labels);
    for (float v : a.images.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    for (int l : a.labels) CHECK((l == 3 || l == 5 || l == 8));
}

TEST_CASE("synthetic digits: class means of 3 and 8 are far apart") {
    DigitDataset threes = synth_digits(7, 64, {3});
    DigitDataset eights = synth_digits(8, 64, {8});
    std::vector<double> m3(784, 0.0), m8(784, 0.0);
    for (int i = 0; i < 64; ++i)
        for (int p = 0; p < 784; ++p) {
            m3[static_cast<size_t>(p)] += threes.images.data()[static_cast<size_t>(i) * 784 + p] / 64.0;
            m8[static_cast<size_t>(p)] += eights.images.data()[static_cast<size_t>(i) * 784 + p] / 64.0;
        }
    double l2 = 0.0;
    for (int p = 0; p < 784; ++p) {
        double d = m3[static_cast<size_t>(p)] - m8[static_cast<size_t>(p)];
        l2 += d * d;
    }
    CHECK(std::sqrt(l2) > 1.0);
}

TEST_CASE("patch reordering round trips and differentiates") {
    Rng rng(3);
    Tensor img = rand_uniform({28, 28}, rng, 0.0f, 1.0f, true);
    Tensor back = patches_to_image(image_to_patches(img));
    CHECK(back.data() == img.data());

    Tensor w = randn({16, 49}, rng, 1.0f);
    auto fwd = [&]() { return sum(hadamard(image_to_patches(img), w)); };
    CHECK(oracles::max_grad_rel_err(fwd, {img}) < 1e-3);
}

TEST_CASE("vae kl: zero at the prior, positive elsewhere, fd-consistent") {
    Tensor mu0 = Tensor::zeros({1, 4});
    Tensor lv0 = Tensor::zeros({1, 4});
    CHECK(vae_kl(mu0, lv0).value() == 0.0f);

    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        Tensor mu = randn({1, 4}, rng, 1.0f);
        Tensor lv = randn({1, 4}, rng, 1.0f);
        CHECK(vae_kl(mu, lv).value() >= 0.0f);
    }

    Tensor mu = randn({1, 3}, rng, 0.7f, true);
    Tensor lv = randn({1, 3}, rng, 0.5f, true);
    auto fwd = [&]() { return vae_kl(mu, lv); };
    CHECK(oracles::max_grad_rel_err(fwd, {mu, lv}) < 1e-3);
}

TEST_CASE("vae recon mse is zero for a perfect decoder stub") {
    Rng rng(6);
    Tensor x = rand_uniform({28, 28}, rng, 0.0f, 1.0f);
    CHECK(vae_recon_mse(x, x).value() == 0.0f);
}

TEST_CASE("vae forward shapes and reparameterization gradient") {
    DigitVae vae = DigitVae::init(11);
    DigitDataset ds = synth_digits(2, 1, {5});
    Rng rng(12);
    Tensor eps = randn({1, 32}, rng, 1.0f);
    DigitVae::Forward f = vae.forward(ds.image(0), eps);
    CHECK(f.recon.shape() == Shape{28, 28});
    CHECK(f.mu.shape() == Shape{1, 32});
    CHECK(f.logvar.shape() == Shape{1, 32});
    for (float v : f.recon.data()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }

    // gradient through the latent sample path alone (2-d toy)
    Tensor mu = randn({1, 2}, rng, 0.5f, true);
    Tensor lv = randn({1, 2}, rng, 0.5f, true);
    Tensor noise = randn({1, 2}, rng, 1.0f);
    Tensor w = randn({1, 2}, rng, 1.0f);
    auto fwd = [&]() {
        Tensor z = gaussian_reparam(mu, lv, noise);
        return add(sum(hadamard(z, w)), vae_kl(mu, lv));
    };
    CHECK(oracles::max_grad_rel_err(fwd, {mu, lv}) < 1e-3);
}

TEST_CASE("vae end-to-end gradient reaches every parameter") {
    DigitVae vae = DigitVae::init(21);
    DigitDataset ds = synth_digits(22, 1, {6});
    Rng rng(23);
    Tensor eps = randn({1, 32}, rng, 1.0f);
    DigitVae::Forward f = vae.forward(ds.image(0), eps);
    Tensor loss = add(vae_recon_mse(f.recon, ds.image(0)), scale(vae_kl(f.mu, f.logvar), 1e-3f));
    backward(loss);
    for (const auto& [name, t] : vae.params()) {
        INFO(name);
        CHECK(t.has_grad());
    }
}

TEST_CASE("signal model: shapes, determinism, save/load round trip") {
    SignalModelConfig mc;
    mc.head_kind = SignalHeadKind::SparseDict;
    mc.atom_count = 20;
    mc.init_seed = 31;
    SignalModel model = SignalModel::init(mc);

    FourierTaskSpec spec;
    spec.seed = 32;
    FourierBatch batch = gen_fourier_batch(spec, 1);
    Tensor masked = Tensor::from_data({64}, std::vector<float>(batch.masked.data()));
    Tensor mask = Tensor::from_data({64}, std::vector<float>(batch.mask.data()));

    SignalModel::Out a = model.forward(masked, mask);
    SignalModel::Out b = model.forward(masked, mask);
    CHECK(a.prediction.shape() == Shape{64, 1});
    CHECK(a.prediction.data() == b.prediction.data());
    CHECK(a.codes.defined());

    auto dir = (std::filesystem::temp_directory_path() / "signal_model_test").string();
    model.save(dir);
    SignalModel loaded = SignalModel::load(dir);
    SignalModel::Out c = loaded.forward(masked, mask);
    CHECK(c.prediction.data() == a.prediction.data());
    std::filesystem::remove_all(dir);
}

TEST_CASE("signal model: frozen input projection never receives gradients") {
    SignalModelConfig mc;
    mc.init_seed = 41;
    SignalModel model = SignalModel::init(mc);
    FourierTaskSpec spec;
    spec.seed = 42;
    FourierBatch batch = gen_fourier_batch(spec, 1);
    Tensor masked = Tensor::from_data({64}, std::vector<float>(batch.masked.data()));
    Tensor mask = Tensor::from_data({64}, std::vector<float>(batch.mask.data()));
    SignalModel::Out out = model.forward(masked, mask);
    backward(mean(hadamard(out.prediction, out.prediction)));
    CHECK_FALSE(model.input_proj.has_grad());
    CHECK(model.pos_table.has_grad());
}
