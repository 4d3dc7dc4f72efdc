#include "dmn/patches.hpp"

#include <algorithm>
#include <cmath>

namespace dmn {

FeatureMap as_feature_map(const ImageBatch& batch) {
    FeatureMap fm(batch.count, batch.channels, batch.height, batch.width);
    fm.values = batch.pixels;
    return fm;
}

PatchMatrix extract_patches(const FeatureMap& input, const std::vector<int>& labels,
                            std::size_t kernel, std::size_t stride) {
    if (kernel == 0 || stride == 0) throw dimension_error("extract_patches: zero kernel/stride");
    if (kernel > input.height || kernel > input.width)
        throw dimension_error("extract_patches: kernel " + std::to_string(kernel) +
                              " exceeds map extent " + std::to_string(input.height) + "x" +
                              std::to_string(input.width));

    const std::size_t out_h = (input.height - kernel) / stride + 1;
    const std::size_t out_w = (input.width - kernel) / stride + 1;
    const std::size_t dim = input.channels * kernel * kernel;

    PatchMatrix pm;
    pm.dim = dim;
    pm.count = input.count * out_h * out_w;
    pm.data.resize(pm.count * dim);
    pm.origin.resize(pm.count);
    pm.class_of_patch.resize(pm.count);

    std::size_t p = 0;
    for (std::size_t i = 0; i < input.count; ++i) {
        const int label = labels.empty() ? -1 : labels[i];
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const std::size_t y0 = oy * stride;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const std::size_t x0 = ox * stride;
                double* dst = pm.patch(p);
                for (std::size_t c = 0; c < input.channels; ++c)
                    for (std::size_t dy = 0; dy < kernel; ++dy)
                        for (std::size_t dx = 0; dx < kernel; ++dx)
                            *dst++ = input.at(i, c, y0 + dy, x0 + dx);
                pm.origin[p] = {static_cast<std::uint32_t>(i), static_cast<std::uint16_t>(y0),
                                static_cast<std::uint16_t>(x0)};
                pm.class_of_patch[p] = label;
                ++p;
            }
        }
    }
    return pm;
}

PatchMatrix extract_patches(const ImageBatch& batch, std::size_t kernel, std::size_t stride) {
    return extract_patches(as_feature_map(batch), batch.labels, kernel, stride);
}

FeatureMap conv_forward(const FeatureMap& input, const Matrix& filters,
                        const std::vector<double>& bias, std::size_t kernel, Activation act) {
    const std::size_t dim = input.channels * kernel * kernel;
    if (filters.cols != dim)
        throw dimension_error("conv_forward: filter dim " + std::to_string(filters.cols) +
                              " != C*k*k = " + std::to_string(dim));
    if (bias.size() != filters.rows)
        throw dimension_error("conv_forward: bias count != filter count");
    if (kernel > input.height || kernel > input.width)
        throw dimension_error("conv_forward: kernel exceeds map extent");

    const std::size_t out_h = input.height - kernel + 1;
    const std::size_t out_w = input.width - kernel + 1;
    const std::size_t n_filters = filters.rows;
    FeatureMap out(input.count, n_filters, out_h, out_w);

    std::vector<double> window(dim);
    for (std::size_t i = 0; i < input.count; ++i) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                double* w = window.data();
                for (std::size_t c = 0; c < input.channels; ++c)
                    for (std::size_t dy = 0; dy < kernel; ++dy)
                        for (std::size_t dx = 0; dx < kernel; ++dx)
                            *w++ = input.at(i, c, oy + dy, ox + dx);
                for (std::size_t f = 0; f < n_filters; ++f) {
                    const double* wf = filters.row(f);
                    double acc = 0.0;
                    for (std::size_t d = 0; d < dim; ++d) acc += wf[d] * window[d];
                    acc += bias[f];
                    if (act == Activation::Relu && acc < 0.0) acc = 0.0;
                    out.at(i, f, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

PoolResult maxpool2(const FeatureMap& input) {
    const std::size_t out_h = input.height / 2;
    const std::size_t out_w = input.width / 2;
    PoolResult res;
    res.map = FeatureMap(input.count, input.channels, out_h, out_w);
    res.argmax.resize(input.count * input.channels * out_h * out_w);

    std::size_t cell = 0;
    for (std::size_t i = 0; i < input.count; ++i) {
        for (std::size_t c = 0; c < input.channels; ++c) {
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    double best = -HUGE_VAL;
                    std::uint32_t best_idx = 0;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t y = 2 * oy + dy;
                            const std::size_t x = 2 * ox + dx;
                            const double v = input.at(i, c, y, x);
                            if (v > best) {  // strict: first row-major max wins
                                best = v;
                                best_idx = static_cast<std::uint32_t>(y * input.width + x);
                            }
                        }
                    res.map.at(i, c, oy, ox) = best;
                    res.argmax[cell++] = best_idx;
                }
            }
        }
    }
    return res;
}

}  // namespace dmn
