#include "dmn/dmn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

namespace dmn {

namespace {

void validate_policy(const SelectionPolicy& p) {
    if (!(p.variance_threshold > 0.0 && p.variance_threshold <= 1.0))
        throw config_error("variance_threshold must be in (0,1]");
    if (!(p.overlap_cutoff > 0.0 && p.overlap_cutoff <= 1.0))
        throw config_error("overlap_cutoff must be in (0,1]");
}

// Smallest prefix of the descending spectrum holding >= threshold of the
// total eigenvalue mass. Negative tail values (eigensolver noise on PSD
// input) are clamped to zero for the ratio.
std::size_t prefix_length(const std::vector<double>& lambda, double threshold) {
    double total = 0.0;
    for (double l : lambda) total += std::max(l, 0.0);
    if (total <= 0.0) return 0;
    double run = 0.0;
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        run += std::max(lambda[i], 0.0);
        if (run >= threshold * total) return i + 1;
    }
    return lambda.size();
}

}  // namespace

DmnLayer select_filters(const std::vector<DensitySpectrum>& spectra,
                        const SelectionPolicy& policy) {
    validate_policy(policy);
    if (spectra.empty()) throw selection_error("select_filters: no spectra");
    const std::size_t dim = spectra.front().spectrum.dim();
    for (const auto& s : spectra)
        if (s.spectrum.dim() != dim)
            throw dimension_error("select_filters: spectra of mixed dimension");

    // Candidates in class-ascending, eigenvalue-descending order.
    std::vector<std::size_t> class_order(spectra.size());
    std::iota(class_order.begin(), class_order.end(), 0);
    std::stable_sort(class_order.begin(), class_order.end(), [&](std::size_t a, std::size_t b) {
        return spectra[a].class_id < spectra[b].class_id;
    });

    struct Candidate {
        int class_id;
        std::size_t mode;
        double lambda;
        std::vector<double> vec;
    };
    std::vector<Candidate> retained;

    for (std::size_t ci : class_order) {
        const auto& ds = spectra[ci];
        const std::size_t keep = prefix_length(ds.spectrum.eigenvalues, policy.variance_threshold);
        for (std::size_t mu = 0; mu < keep; ++mu) {
            std::vector<double> v = ds.spectrum.eigenvector(mu);
            const double n = norm2(v);
            if (n <= 0.0) continue;
            for (auto& x : v) x /= n;
            bool overlaps = false;
            for (const auto& r : retained) {
                if (std::fabs(dot(v, r.vec)) > policy.overlap_cutoff) {
                    overlaps = true;
                    break;
                }
            }
            if (!overlaps)
                retained.push_back({ds.class_id, mu, ds.spectrum.eigenvalues[mu], std::move(v)});
        }
    }

    if (policy.max_filters && retained.size() > *policy.max_filters) {
        // cap by descending eigenvalue, stable on the selection order
        std::vector<std::size_t> order(retained.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return retained[a].lambda > retained[b].lambda;
        });
        order.resize(*policy.max_filters);
        std::sort(order.begin(), order.end());  // keep class-then-mode order
        std::vector<Candidate> capped;
        capped.reserve(order.size());
        for (auto i : order) capped.push_back(std::move(retained[i]));
        retained = std::move(capped);
    }

    if (retained.empty()) throw selection_error("select_filters: empty selection");

    DmnLayer layer;
    layer.filters = Matrix(retained.size(), dim);
    layer.provenance.reserve(retained.size());
    for (std::size_t f = 0; f < retained.size(); ++f) {
        std::copy(retained[f].vec.begin(), retained[f].vec.end(), layer.filters.row(f));
        layer.provenance.push_back({retained[f].class_id, retained[f].mode, retained[f].lambda});
    }
    return layer;
}

DensityAccumulator accumulate_patch_density(const FeatureMap& features,
                                            const std::vector<int>& labels, int num_classes,
                                            std::size_t kernel) {
    const std::size_t dim = features.channels * kernel * kernel;
    DensityAccumulator acc(dim, num_classes);

    // chunked extraction keeps the patch matrix small
    const std::size_t chunk = 256;
    for (std::size_t base = 0; base < features.count; base += chunk) {
        const std::size_t n = std::min(chunk, features.count - base);
        FeatureMap part(n, features.channels, features.height, features.width);
        std::copy(features.sample(base), features.sample(base) + n * features.map_size(),
                  part.values.begin());
        std::vector<int> part_labels(n, 0);
        if (!labels.empty())
            for (std::size_t i = 0; i < n; ++i) part_labels[i] = labels[base + i];
        acc.accumulate(extract_patches(part, part_labels, kernel, 1));
    }
    return acc;
}

DensityAccumulator accumulate_patch_density(const ImageBatch& batch,
                                            const std::vector<DmnLayer>& stack,
                                            std::size_t kernel, std::size_t chunk) {
    const FeatureMap fm = as_feature_map(batch);
    std::optional<DensityAccumulator> acc;
    for (std::size_t base = 0; base < batch.count; base += chunk) {
        const std::size_t n = std::min(chunk, batch.count - base);
        FeatureMap part(n, fm.channels, fm.height, fm.width);
        std::copy(fm.sample(base), fm.sample(base) + n * fm.map_size(), part.values.begin());
        const FeatureMap out = propagate(part, stack, chunk);
        if (!acc) {
            if (out.height < kernel || out.width < kernel)
                throw dimension_error("accumulate_patch_density: propagated map " +
                                      std::to_string(out.height) + "x" +
                                      std::to_string(out.width) + " smaller than kernel");
            acc.emplace(out.channels * kernel * kernel, batch.num_classes);
        }
        std::vector<int> labels(batch.labels.begin() + base, batch.labels.begin() + base + n);
        acc->accumulate(extract_patches(out, labels, kernel, 1));
    }
    if (!acc) throw dimension_error("accumulate_patch_density: empty batch");
    return *acc;
}

DmnLayer layer_from_density(const DensityAccumulator& acc, const SelectionPolicy& policy,
                            std::size_t kernel) {
    DmnLayer layer = policy.supervised
                         ? select_filters(per_class_spectra(acc), policy)
                         : select_filters({density_spectrum(acc, kTotalClass)}, policy);
    layer.kernel = kernel;
    return layer;
}

namespace {

DmnLayer build_layer_from_features(const FeatureMap& features, const std::vector<int>& labels,
                                   int num_classes, std::size_t kernel,
                                   const SelectionPolicy& policy) {
    const DensityAccumulator acc = accumulate_patch_density(
        features, policy.supervised ? labels : std::vector<int>{},
        policy.supervised ? num_classes : 1, kernel);
    return layer_from_density(acc, policy, kernel);
}

}  // namespace

FeatureMap propagate(const FeatureMap& input, const std::vector<DmnLayer>& layers,
                     std::size_t chunk) {
    if (layers.empty()) return input;
    // probe one sample to size the output
    FeatureMap out;
    bool sized = false;
    for (std::size_t base = 0; base < input.count; base += chunk) {
        const std::size_t n = std::min(chunk, input.count - base);
        FeatureMap part(n, input.channels, input.height, input.width);
        std::copy(input.sample(base), input.sample(base) + n * input.map_size(),
                  part.values.begin());
        for (const auto& layer : layers) {
            part = conv_forward(part, layer.filters, layer.zero_bias(), layer.kernel,
                                Activation::Relu);
            part = maxpool2(part).map;
        }
        if (!sized) {
            out = FeatureMap(input.count, part.channels, part.height, part.width);
            sized = true;
        }
        std::copy(part.values.begin(), part.values.end(), out.sample(base));
    }
    return out;
}

FeatureMap propagate(const ImageBatch& batch, const std::vector<DmnLayer>& layers,
                     std::size_t chunk) {
    return propagate(as_feature_map(batch), layers, chunk);
}

DmnLayer build_first_layer(const ImageBatch& batch, std::size_t kernel,
                           const SelectionPolicy& policy) {
    validate_policy(policy);
    DmnLayer layer = build_layer_from_features(as_feature_map(batch), batch.labels,
                                               batch.num_classes, kernel, policy);
    layer.data_fraction = 1.0;
    return layer;
}

DmnLayer build_next_layer(const ImageBatch& batch, const std::vector<DmnLayer>& previous,
                          std::size_t kernel, const SelectionPolicy& policy) {
    validate_policy(policy);
    if (previous.empty()) return build_first_layer(batch, kernel, policy);
    const FeatureMap features = propagate(batch, previous);
    if (features.height < kernel || features.width < kernel)
        throw dimension_error("build_next_layer: feature map " + std::to_string(features.height) +
                              "x" + std::to_string(features.width) + " smaller than kernel");
    DmnLayer layer =
        build_layer_from_features(features, batch.labels, batch.num_classes, kernel, policy);
    layer.data_fraction = previous.back().data_fraction;
    return layer;
}

}  // namespace dmn
