#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmn/errors.hpp"

namespace dmn {

// Labeled image set, pixels normalized to [0,1], stored N x C x H x W.
// Immutable once loaded; class_index lists the sample indices of each class.
struct ImageBatch {
    std::size_t count = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;  // count * channels * height * width
    std::vector<int> labels;
    int num_classes = 0;
    std::string name;
    std::vector<std::vector<std::size_t>> class_index;

    std::size_t image_size() const { return channels * height * width; }
    const double* image(std::size_t i) const { return pixels.data() + i * image_size(); }
    double* image(std::size_t i) { return pixels.data() + i * image_size(); }
};

struct SplitSpec {
    double fraction = 1.0;  // in (0,1]
    std::uint64_t seed = 0;
    bool shuffle = true;
};

enum class CifarVariant { Cifar10, Cifar100 };
enum class DatasetSplit { Train, Test };

// MNIST IDX pair: big-endian magics 0x00000803 (images), 0x00000801 (labels).
ImageBatch load_mnist(const std::string& images_path, const std::string& labels_path);

// CIFAR binary records: cifar10 = label byte + 3072 pixel bytes;
// cifar100 = coarse byte + fine byte + 3072 pixel bytes (fine label kept).
// Pixels are channel-major planes (R, G, B).
ImageBatch load_cifar(const std::string& dir_path, CifarVariant variant,
                      DatasetSplit split = DatasetSplit::Train);

// ceil(fraction*N) samples drawn without replacement via the seeded shuffle
// documented in rng.hpp. The resulting order is the shuffled order.
ImageBatch subsample(const ImageBatch& batch, const SplitSpec& spec);

// Rebuilds and returns per-class index views covering [0,N) exactly once.
std::vector<std::vector<std::size_t>> partition_by_class(const ImageBatch& batch);

void rebuild_class_index(ImageBatch& batch);

}  // namespace dmn
