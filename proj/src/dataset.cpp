#include "dmn/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dmn/rng.hpp"

namespace dmn {

namespace {

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw io_error("truncated header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::vector<unsigned char> read_exact(std::ifstream& in, std::size_t n, const std::string& path) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw io_error("truncated payload in " + path);
    return buf;
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

void rebuild_class_index(ImageBatch& batch) {
    batch.class_index.assign(static_cast<std::size_t>(batch.num_classes), {});
    for (std::size_t i = 0; i < batch.count; ++i) {
        const int y = batch.labels[i];
        if (y < 0 || y >= batch.num_classes)
            throw io_error("label " + std::to_string(y) + " out of range for " + batch.name);
        batch.class_index[static_cast<std::size_t>(y)].push_back(i);
    }
}

ImageBatch load_mnist(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw io_error("cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw io_error("cannot open " + labels_path);

    const std::uint32_t img_magic = read_u32_be(img, images_path);
    if (img_magic != kIdxImagesMagic)
        throw io_error("bad IDX image magic in " + images_path);
    const std::uint32_t n_images = read_u32_be(img, images_path);
    const std::uint32_t rows = read_u32_be(img, images_path);
    const std::uint32_t cols = read_u32_be(img, images_path);

    const std::uint32_t lab_magic = read_u32_be(lab, labels_path);
    if (lab_magic != kIdxLabelsMagic)
        throw io_error("bad IDX label magic in " + labels_path);
    const std::uint32_t n_labels = read_u32_be(lab, labels_path);
    if (n_images != n_labels)
        throw io_error("image/label count mismatch: " + std::to_string(n_images) + " vs " +
                       std::to_string(n_labels));

    ImageBatch batch;
    batch.count = n_images;
    batch.channels = 1;
    batch.height = rows;
    batch.width = cols;
    batch.num_classes = 10;
    batch.name = "mnist";

    const std::size_t img_bytes = std::size_t(n_images) * rows * cols;
    const auto raw = read_exact(img, img_bytes, images_path);
    batch.pixels.resize(img_bytes);
    for (std::size_t i = 0; i < img_bytes; ++i) batch.pixels[i] = raw[i] / 255.0;

    const auto raw_labels = read_exact(lab, n_labels, labels_path);
    batch.labels.resize(n_labels);
    for (std::size_t i = 0; i < n_labels; ++i) batch.labels[i] = raw_labels[i];

    rebuild_class_index(batch);
    return batch;
}

ImageBatch load_cifar(const std::string& dir_path, CifarVariant variant, DatasetSplit split) {
    const bool c100 = (variant == CifarVariant::Cifar100);
    const std::size_t label_bytes = c100 ? 2 : 1;
    const std::size_t record_bytes = label_bytes + 3072;

    std::vector<std::string> files;
    if (c100) {
        files.push_back(dir_path + (split == DatasetSplit::Train ? "/train.bin" : "/test.bin"));
    } else if (split == DatasetSplit::Train) {
        for (int i = 1; i <= 5; ++i)
            files.push_back(dir_path + "/data_batch_" + std::to_string(i) + ".bin");
    } else {
        files.push_back(dir_path + "/test_batch.bin");
    }

    ImageBatch batch;
    batch.channels = 3;
    batch.height = 32;
    batch.width = 32;
    batch.num_classes = c100 ? 100 : 10;
    batch.name = c100 ? "cifar100" : "cifar10";

    for (const auto& path : files) {
        std::error_code ec;
        const auto file_size = std::filesystem::file_size(path, ec);
        if (ec) throw io_error("cannot stat " + path);
        if (file_size % record_bytes != 0)
            throw io_error(path + ": size " + std::to_string(file_size) +
                           " not a multiple of record size " + std::to_string(record_bytes));
        const std::size_t n_records = file_size / record_bytes;

        std::ifstream in(path, std::ios::binary);
        if (!in) throw io_error("cannot open " + path);
        const auto raw = read_exact(in, file_size, path);

        const std::size_t base = batch.count;
        batch.count += n_records;
        batch.labels.resize(batch.count);
        batch.pixels.resize(batch.count * batch.image_size());
        for (std::size_t r = 0; r < n_records; ++r) {
            const unsigned char* rec = raw.data() + r * record_bytes;
            // cifar100 record: coarse byte then fine byte; the fine label is kept
            batch.labels[base + r] = rec[label_bytes - 1];
            double* dst = batch.image(base + r);
            for (std::size_t p = 0; p < 3072; ++p) dst[p] = rec[label_bytes + p] / 255.0;
        }
    }

    rebuild_class_index(batch);
    return batch;
}

ImageBatch subsample(const ImageBatch& batch, const SplitSpec& spec) {
    if (!(spec.fraction > 0.0 && spec.fraction <= 1.0))
        throw config_error("subsample fraction must be in (0,1]");
    const std::size_t keep = static_cast<std::size_t>(
        std::ceil(spec.fraction * static_cast<double>(batch.count)));

    std::vector<std::size_t> idx(batch.count);
    for (std::size_t i = 0; i < batch.count; ++i) idx[i] = i;
    if (spec.shuffle) {
        rng gen(spec.seed);
        fisher_yates(idx, gen);
    }
    idx.resize(keep);

    ImageBatch out;
    out.channels = batch.channels;
    out.height = batch.height;
    out.width = batch.width;
    out.num_classes = batch.num_classes;
    out.name = batch.name;
    out.count = keep;
    out.labels.resize(keep);
    out.pixels.resize(keep * batch.image_size());
    const std::size_t stride = batch.image_size();
    for (std::size_t i = 0; i < keep; ++i) {
        out.labels[i] = batch.labels[idx[i]];
        const double* src = batch.image(idx[i]);
        std::copy(src, src + stride, out.pixels.data() + i * stride);
    }
    rebuild_class_index(out);
    return out;
}

std::vector<std::vector<std::size_t>> partition_by_class(const ImageBatch& batch) {
    std::vector<std::vector<std::size_t>> views(static_cast<std::size_t>(batch.num_classes));
    for (std::size_t i = 0; i < batch.count; ++i)
        views[static_cast<std::size_t>(batch.labels[i])].push_back(i);
    return views;
}

}  // namespace dmn
