#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dmn/density.hpp"
#include "dmn/matrix.hpp"
#include "dmn/patches.hpp"

namespace dmn {

// Filter selection rule: per class, keep the minimal descending-eigenvalue
// prefix holding at least variance_threshold of that class's eigenvalue mass;
// then drop candidates whose |dot| with an already retained filter exceeds
// overlap_cutoff (classes in ascending label order, eigenvalues descending
// within a class, so earlier classes and larger eigenvalues win).
struct SelectionPolicy {
    double variance_threshold = 0.95;  // in (0,1]
    double overlap_cutoff = 0.9;       // in (0,1]
    std::optional<std::size_t> max_filters;
    bool supervised = true;  // false: select from the TOTAL spectrum only
};

struct FilterProvenance {
    int class_id;      // kTotalClass for unsupervised
    std::size_t mode;  // eigenvalue index within the class spectrum
    double eigenvalue;
};

// Frozen convolutional filter bank. Rows of `filters` are unit-norm selected
// eigenvectors; bias is identically zero and a 2x2 maxpool follows by
// construction.
struct DmnLayer {
    Matrix filters;  // F x d, d = C_in * k * k
    std::vector<FilterProvenance> provenance;
    std::size_t kernel = 3;
    double data_fraction = 1.0;

    std::size_t filter_count() const { return filters.rows; }
    std::vector<double> zero_bias() const { return std::vector<double>(filters.rows, 0.0); }
};

struct selection_error : std::runtime_error {
    explicit selection_error(const std::string& what) : std::runtime_error(what) {}
};

DmnLayer select_filters(const std::vector<DensitySpectrum>& spectra,
                        const SelectionPolicy& policy);

// Patch-density accumulation over a feature stack, chunked over samples.
// When class_labels is empty every patch lands in class 0.
DensityAccumulator accumulate_patch_density(const FeatureMap& features,
                                            const std::vector<int>& labels, int num_classes,
                                            std::size_t kernel);

// Streaming variant: propagates the batch through the frozen stack chunk by
// chunk, so the full propagated feature set is never materialized.
DensityAccumulator accumulate_patch_density(const ImageBatch& batch,
                                            const std::vector<DmnLayer>& stack,
                                            std::size_t kernel, std::size_t chunk = 512);

// Select filters from an accumulated density under the given policy.
DmnLayer layer_from_density(const DensityAccumulator& acc, const SelectionPolicy& policy,
                            std::size_t kernel);

DmnLayer build_first_layer(const ImageBatch& batch, std::size_t kernel,
                           const SelectionPolicy& policy);

// Propagates the batch through all previous layers (conv -> relu -> maxpool2
// each) and runs the first-layer construction on the resulting feature maps.
DmnLayer build_next_layer(const ImageBatch& batch, const std::vector<DmnLayer>& previous,
                          std::size_t kernel, const SelectionPolicy& policy);

// conv(relu, zero bias) + maxpool2 for every layer, chunked over samples.
FeatureMap propagate(const ImageBatch& batch, const std::vector<DmnLayer>& layers,
                     std::size_t chunk = 512);
FeatureMap propagate(const FeatureMap& input, const std::vector<DmnLayer>& layers,
                     std::size_t chunk = 512);

}  // namespace dmn
