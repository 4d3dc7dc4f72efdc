#pragma once

#include <cstdint>
#include <vector>

#include "dmn/dataset.hpp"
#include "dmn/matrix.hpp"

namespace dmn {

// Stack of feature maps, N x F x H x W, same layout as ImageBatch pixels.
struct FeatureMap {
    std::size_t count = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    FeatureMap() = default;
    FeatureMap(std::size_t n, std::size_t c, std::size_t h, std::size_t w)
        : count(n), channels(c), height(h), width(w), values(n * c * h * w, 0.0) {}

    std::size_t map_size() const { return channels * height * width; }
    double* sample(std::size_t i) { return values.data() + i * map_size(); }
    const double* sample(std::size_t i) const { return values.data() + i * map_size(); }
    double at(std::size_t i, std::size_t c, std::size_t y, std::size_t x) const {
        return values[((i * channels + c) * height + y) * width + x];
    }
    double& at(std::size_t i, std::size_t c, std::size_t y, std::size_t x) {
        return values[((i * channels + c) * height + y) * width + x];
    }
};

// Flattened k*k*C windows, one per row. Flattening is channel-major, then
// row-major within each channel; this is the canonical filter layout.
struct PatchMatrix {
    struct Origin {
        std::uint32_t sample;
        std::uint16_t y;
        std::uint16_t x;
    };

    std::size_t dim = 0;
    std::size_t count = 0;
    std::vector<double> data;  // count x dim, row-major
    std::vector<Origin> origin;
    std::vector<int> class_of_patch;

    const double* patch(std::size_t p) const { return data.data() + p * dim; }
    double* patch(std::size_t p) { return data.data() + p * dim; }
};

enum class Activation { Relu, Linear };

FeatureMap as_feature_map(const ImageBatch& batch);

PatchMatrix extract_patches(const FeatureMap& input, const std::vector<int>& labels,
                            std::size_t kernel, std::size_t stride);
PatchMatrix extract_patches(const ImageBatch& batch, std::size_t kernel, std::size_t stride);

// Valid convolution, stride 1. filters is F x d with d = C*k*k in the patch
// layout above. Direct sliding-window accumulation; deliberately a separate
// code path from extract_patches + matmul.
FeatureMap conv_forward(const FeatureMap& input, const Matrix& filters,
                        const std::vector<double>& bias, std::size_t kernel, Activation act);

// 2x2 maxpooling with stride 2; odd trailing row/column truncated. First
// row-major maximal element wins, argmax stored as flat y*W+x input offsets.
struct PoolResult {
    FeatureMap map;
    std::vector<std::uint32_t> argmax;  // one entry per output cell
};

PoolResult maxpool2(const FeatureMap& input);

}  // namespace dmn
