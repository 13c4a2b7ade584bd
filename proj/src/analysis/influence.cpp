#include "analysis/influence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace atoms {

namespace {

Tensor pixel_delta(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::zeros({28, 28});
    for (int i = 0; i < 28; ++i)
        for (int j = 0; j < 28; ++j) out.at(i, j) = a.at(i, j) - b.at(i, j);
    return out;
}

}  // namespace

InfluenceReport atom_influence(const DigitVae& vae, const SparseAdapter& dec1,
                               const SparseAdapter& dec2, const Tensor& image,
                               double importance_floor) {
    Tensor z = vae.encode_mu(image).detached_copy();

    InfluenceReport report;
    DigitVae::Forward baseline = vae.decode(z);

    DigitVae::AdapterHooks both;
    both.dec1 = &dec1;
    both.dec2 = &dec2;
    DigitVae::Forward full = vae.decode(z, both);
    report.full_map = pixel_delta(full.recon, baseline.recon);

    DigitVae::AdapterHooks only1 = both;
    only1.enable2 = false;
    report.combined_layer1 = pixel_delta(vae.decode(z, only1).recon, baseline.recon);
    DigitVae::AdapterHooks only2 = both;
    only2.enable1 = false;
    report.combined_layer2 = pixel_delta(vae.decode(z, only2).recon, baseline.recon);

    // Coefficients seen with both adapters active rank the atoms.
    std::vector<double> imp1 = atom_importance(full.coeffs1);
    std::vector<double> imp2 = atom_importance(full.coeffs2);

    Tensor sum_maps = Tensor::zeros({28, 28});
    auto emit = [&](int layer, const SparseAdapter& adapter, const std::vector<double>& imp) {
        for (int m = 0; m < adapter.atom_count(); ++m) {
            if (imp[static_cast<size_t>(m)] <= importance_floor) continue;
            std::vector<int> keep{m};
            DigitVae::AdapterHooks hooks;
            if (layer == 1) {
                hooks.dec1 = &adapter;
                hooks.keep1 = &keep;
                hooks.enable2 = false;
            } else {
                hooks.dec2 = &adapter;
                hooks.keep2 = &keep;
                hooks.enable1 = false;
            }
            AtomInfluence info;
            info.layer = layer;
            info.atom = m;
            info.importance = imp[static_cast<size_t>(m)];
            info.map = pixel_delta(vae.decode(z, hooks).recon, baseline.recon);
            for (int i = 0; i < 28; ++i)
                for (int j = 0; j < 28; ++j) sum_maps.at(i, j) += info.map.at(i, j);
            report.atoms.push_back(std::move(info));
        }
    };
    emit(1, dec1, imp1);
    emit(2, dec2, imp2);

    double gap = 0.0;
    for (int i = 0; i < 28; ++i)
        for (int j = 0; j < 28; ++j)
            gap += std::fabs(sum_maps.at(i, j) - report.full_map.at(i, j));
    report.additivity_gap = gap / 784.0;
    return report;
}

int AtomMassReport::atoms_for_share(double share) const {
    std::vector<double> sorted(mass);
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double want = share * total;
    double acc = 0.0;
    for (size_t i = 0; i < sorted.size(); ++i) {
        acc += sorted[i];
        if (acc >= want) return static_cast<int>(i + 1);
    }
    return static_cast<int>(sorted.size());
}

AtomMassReport atom_mass_over_dataset(const DigitVae& vae, const SparseAdapter& dec1,
                                      const SparseAdapter& dec2, const DigitDataset& data,
                                      const TrainConfig& cfg, uint64_t noise_stream) {
    AtomMassReport report;
    int m1 = dec1.atom_count(), m2 = dec2.atom_count();
    report.mass.assign(static_cast<size_t>(m1 + m2), 0.0);

    std::vector<double> dict_l1_1(static_cast<size_t>(m1), 0.0);
    for (int m = 0; m < m1; ++m)
        for (int c = 0; c < dec1.c_out(); ++c)
            dict_l1_1[static_cast<size_t>(m)] += std::fabs(dec1.dict.at(m, c));
    std::vector<double> dict_l1_2(static_cast<size_t>(m2), 0.0);
    for (int m = 0; m < m2; ++m)
        for (int c = 0; c < dec2.c_out(); ++c)
            dict_l1_2[static_cast<size_t>(m)] += std::fabs(dec2.dict.at(m, c));

    DigitVae::AdapterHooks hooks;
    hooks.dec1 = &dec1;
    hooks.dec2 = &dec2;
    Tensor eps_zero = Tensor::zeros({1, DigitVae::kLatent});

    for (int i = 0; i < data.count(); ++i) {
        Rng rng = Rng(cfg.seed).fork(noise_stream).fork(static_cast<uint64_t>(i));
        Tensor clean = data.image(i);
        std::vector<float> noisy(clean.data());
        for (auto& x : noisy) x = std::clamp(x + cfg.noise_sigma * rng.normal(), 0.0f, 1.0f);
        DigitVae::Forward f =
            vae.forward(Tensor::from_data({28, 28}, std::move(noisy)), eps_zero, hooks);
        for (int t = 0; t < f.coeffs1.dim(0); ++t)
            for (int m = 0; m < m1; ++m)
                report.mass[static_cast<size_t>(m)] +=
                    std::fabs(f.coeffs1.at(t, m)) * dict_l1_1[static_cast<size_t>(m)];
        for (int t = 0; t < f.coeffs2.dim(0); ++t)
            for (int m = 0; m < m2; ++m)
                report.mass[static_cast<size_t>(m1 + m)] +=
                    std::fabs(f.coeffs2.at(t, m)) * dict_l1_2[static_cast<size_t>(m)];
    }
    report.total = std::accumulate(report.mass.begin(), report.mass.end(), 0.0);
    return report;
}

}  // namespace atoms
