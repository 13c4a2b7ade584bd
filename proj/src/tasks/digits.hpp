#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace atoms {

// 28x28 grayscale digit images in [0, 1] with integer class labels.
struct DigitDataset {
    Tensor images;  // count x 28 x 28; undefined when empty
    std::vector<int> labels;

    int count() const { return static_cast<int>(labels.size()); }
    Tensor image(int i) const;  // 28 x 28 copy, no gradient
    DigitDataset filter(const std::vector<int>& classes) const;
};

// Reads the classic big-endian IDX pair (images magic 0x803, labels 0x801).
DigitDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Procedurally rasterized digit glyphs: fixed stroke templates per class with
// a small random translation and stroke-thickness jitter. Deterministic per
// seed; no files or downloads involved.
DigitDataset synth_digits(uint64_t seed, int count, const std::vector<int>& classes);

// Tensor-format export: images.atns plus a labels sidecar text file.
void save_digit_dataset(const std::string& dir, const DigitDataset& ds);
DigitDataset load_digit_dataset(const std::string& dir);

}  // namespace atoms
