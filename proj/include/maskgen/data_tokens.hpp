#pragma once

#include "maskgen/image.hpp"
#include "maskgen/tensor_container.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace maskgen {

// Procedural labeled images and the patch-quantized token space built on them.

struct DatasetSpec {
    int count = 0;
    int classes = 0;
    int height = 0;
    int width = 0;
    uint64_t seed = 0;
};

struct LabeledImageSet {
    std::vector<Image> images;
    std::vector<int> labels;  // [0, classes)
    int classes = 0;
    int height = 0;
    int width = 0;
    uint64_t seed = 0;
};

struct Codebook {
    std::vector<float> codewords;  // [k, dim] with dim = patch_h * patch_w * 3
    int k = 0;
    int patch_h = 0;
    int patch_w = 0;
    uint64_t fit_seed = 0;

    int dim() const { return patch_h * patch_w * 3; }
    const float* codeword(int j) const { return codewords.data() + static_cast<size_t>(j) * dim(); }
};

// Discrete state x_t: token ids in [0, k) plus the absorbing MASK id == k.
struct TokenGrid {
    std::vector<int32_t> tokens;
    int rows = 0;
    int cols = 0;
    int k = 0;  // codebook size; mask_id() never appears in tokenized real data

    int n() const { return rows * cols; }
    int32_t mask_id() const { return k; }
    bool has_mask() const {
        for (int32_t t : tokens)
            if (t == k) return true;
        return false;
    }
};

// Deterministic procedural dataset: each class is a shape/color family on a
// textured background with randomized position, scale and rotation. Labels
// are balanced within +-1 per class.
LabeledImageSet generate_dataset(const DatasetSpec& spec);

// Ingestion path for substituting real images: one subdirectory per class
// (sorted by name), PNGs inside, resized to (height, width).
LabeledImageSet ingest_image_folder(const std::filesystem::path& root, int height, int width);

Codebook fit_codebook(const LabeledImageSet& images, int k, int patch_h, int patch_w,
                      uint64_t fit_seed, int max_iters = 50);

TokenGrid tokenize(const Image& image, const Codebook& cb);
Image detokenize(const TokenGrid& grid, const Codebook& cb);

// Dataset on disk: <root>/class_XX/img_XXXXX.png plus manifest.json.
void save_dataset(const std::filesystem::path& root, const LabeledImageSet& set);
LabeledImageSet load_dataset(const std::filesystem::path& root);

Container codebook_to_container(const Codebook& cb);
Codebook codebook_from_container(const Container& c);

} // namespace maskgen
