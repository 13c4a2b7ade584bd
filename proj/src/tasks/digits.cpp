#include "tasks/digits.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace atoms {

Tensor DigitDataset::image(int i) const {
    if (i < 0 || i >= count()) throw ContractError("digit dataset: index out of range");
    std::vector<float> px(784);
    const auto& d = images.data();
    std::copy(d.begin() + static_cast<size_t>(i) * 784, d.begin() + (static_cast<size_t>(i) + 1) * 784,
              px.begin());
    return Tensor::from_data({28, 28}, std::move(px));
}

DigitDataset DigitDataset::filter(const std::vector<int>& classes) const {
    DigitDataset out;
    std::vector<float> px;
    for (int i = 0; i < count(); ++i) {
        if (std::find(classes.begin(), classes.end(), labels[static_cast<size_t>(i)]) == classes.end())
            continue;
        const auto& d = images.data();
        px.insert(px.end(), d.begin() + static_cast<size_t>(i) * 784,
                  d.begin() + (static_cast<size_t>(i) + 1) * 784);
        out.labels.push_back(labels[static_cast<size_t>(i)]);
    }
    if (!out.labels.empty())
        out.images = Tensor::from_data({out.count(), 28, 28}, std::move(px));
    return out;
}

// ---- IDX ingestion ----

namespace {

uint32_t read_be32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated IDX file: " + path);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

DigitDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open IDX images: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open IDX labels: " + labels_path);

    if (read_be32(img, images_path) != 0x00000803u)
        throw FormatError("bad IDX image magic in " + images_path);
    uint32_t count = read_be32(img, images_path);
    uint32_t rows = read_be32(img, images_path);
    uint32_t cols = read_be32(img, images_path);
    if (rows != 28 || cols != 28)
        throw FormatError("expected 28x28 IDX images, got " + std::to_string(rows) + "x" +
                          std::to_string(cols));

    if (read_be32(lab, labels_path) != 0x00000801u)
        throw FormatError("bad IDX label magic in " + labels_path);
    uint32_t label_count = read_be32(lab, labels_path);
    if (label_count != count)
        throw FormatError("IDX image/label counts differ: " + std::to_string(count) + " vs " +
                          std::to_string(label_count));

    DigitDataset ds;
    if (count == 0) return ds;

    std::vector<unsigned char> raw(static_cast<size_t>(count) * 784);
    if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw FormatError("truncated IDX image payload in " + images_path);
    std::vector<unsigned char> raw_labels(count);
    if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(count)))
        throw FormatError("truncated IDX label payload in " + labels_path);

    std::vector<float> px(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) px[i] = static_cast<float>(raw[i]) / 255.0f;
    ds.images = Tensor::from_data({static_cast<int>(count), 28, 28}, std::move(px));
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    return ds;
}

// ---- synthetic glyphs ----

namespace {

struct Pt {
    float x, y;
};
using Stroke = std::vector<Pt>;

Stroke ellipse(float cx, float cy, float rx, float ry, int points = 24, float a0 = 0.0f,
               float a1 = 2.0f * static_cast<float>(std::numbers::pi)) {
    Stroke s;
    for (int i = 0; i <= points; ++i) {
        float a = a0 + (a1 - a0) * static_cast<float>(i) / points;
        s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return s;
}

// Fixed glyph templates in a 28x28 canvas, y growing downward.
std::vector<Stroke> glyph_strokes(int digit) {
    switch (digit) {
        case 0: return {ellipse(14, 14, 6, 9)};
        case 1: return {{{14, 5}, {14, 23}}, {{10, 9}, {14, 5}}};
        case 2:
            return {{{8, 9}, {9, 6}, {13, 5}, {17, 6}, {19, 9}, {18, 12}, {8, 22}, {20, 22}}};
        case 3:
            return {{{9, 6}, {14, 5}, {18, 8}, {14, 12}},
                    {{14, 12}, {19, 16}, {14, 22}, {9, 21}}};
        case 4: return {{{17, 5}, {8, 17}, {21, 17}}, {{17, 5}, {17, 23}}};
        case 5:
            return {{{19, 5}, {9, 5}, {9, 13}},
                    {{9, 13}, {15, 12}, {19, 16}, {17, 21}, {11, 22}, {8, 20}}};
        case 6:
            return {{{18, 6}, {12, 7}, {9, 13}, {8, 18}},
                    ellipse(13, 18, 5, 4.5f)};
        case 7: return {{{8, 5}, {20, 5}, {12, 23}}};
        case 8: return {ellipse(14, 9.5f, 4.5f, 4.0f), ellipse(14, 18.5f, 5.5f, 4.5f)};
        case 9:
            return {ellipse(14, 10, 5, 4.5f), {{19, 10}, {18, 17}, {14, 23}}};
        default: throw ContractError("digit class must be 0..9");
    }
}

float dist_to_segment(float px, float py, Pt a, Pt b) {
    float vx = b.x - a.x, vy = b.y - a.y;
    float wx = px - a.x, wy = py - a.y;
    float len2 = vx * vx + vy * vy;
    float t = len2 > 1e-9f ? std::clamp((wx * vx + wy * vy) / len2, 0.0f, 1.0f) : 0.0f;
    float dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

void rasterize(float* out, const std::vector<Stroke>& strokes, float dx, float dy,
               float thickness) {
    for (int y = 0; y < 28; ++y) {
        for (int x = 0; x < 28; ++x) {
            float px = static_cast<float>(x) + 0.5f - dx;
            float py = static_cast<float>(y) + 0.5f - dy;
            float d = 1e9f;
            for (const auto& s : strokes)
                for (size_t i = 0; i + 1 < s.size(); ++i)
                    d = std::min(d, dist_to_segment(px, py, s[i], s[i + 1]));
            out[y * 28 + x] = std::clamp(thickness + 0.5f - d, 0.0f, 1.0f);
        }
    }
}

}  // namespace

DigitDataset synth_digits(uint64_t seed, int count, const std::vector<int>& classes) {
    if (count < 0) throw ContractError("synth_digits: count must be nonnegative");
    for (int c : classes)
        if (c < 0 || c > 9) throw ContractError("synth_digits: classes must be within 0..9");
    DigitDataset ds;
    if (count == 0) return ds;
    if (classes.empty()) throw ContractError("synth_digits: class set must be nonempty");

    Rng rng(seed);
    std::vector<float> px(static_cast<size_t>(count) * 784);
    for (int i = 0; i < count; ++i) {
        int cls = classes[static_cast<size_t>(rng.below(classes.size()))];
        float dx = rng.uniform(-1.5f, 1.5f);
        float dy = rng.uniform(-1.5f, 1.5f);
        float thickness = rng.uniform(1.0f, 1.6f);
        rasterize(&px[static_cast<size_t>(i) * 784], glyph_strokes(cls), dx, dy, thickness);
        ds.labels.push_back(cls);
    }
    ds.images = Tensor::from_data({count, 28, 28}, std::move(px));
    return ds;
}

void save_digit_dataset(const std::string& dir, const DigitDataset& ds) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory: " + dir);
    std::ofstream lab(dir + "/labels.txt");
    if (!lab) throw IoError("cannot write labels in " + dir);
    for (int l : ds.labels) lab << l << "\n";
    if (ds.count() > 0) save_tensor(dir + "/images.atns", ds.images);
}

DigitDataset load_digit_dataset(const std::string& dir) {
    std::ifstream lab(dir + "/labels.txt");
    if (!lab) throw IoError("cannot read labels in " + dir);
    DigitDataset ds;
    int v;
    while (lab >> v) ds.labels.push_back(v);
    if (ds.count() > 0) {
        ds.images = load_tensor(dir + "/images.atns");
        if (ds.images.ndim() != 3 || ds.images.dim(0) != ds.count() || ds.images.dim(1) != 28 ||
            ds.images.dim(2) != 28)
            throw FormatError("dataset images do not match labels in " + dir);
    }
    return ds;
}

}  // namespace atoms
