#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dmn/density.hpp"
#include "dmn/dmn.hpp"

namespace dmn {

// Binary cache, magic "DMN1", little-endian throughout. Exact field order is
// documented in docs/cache_format.md. Writes go to a temp file in the target
// directory followed by an atomic rename.
struct CacheKey {
    std::string dataset;
    std::size_t kernel = 3;
    double variance_threshold = 0.95;
    double overlap_cutoff = 0.9;
    double fraction = 1.0;
    std::uint64_t seed = 0;
    std::size_t layer_index = 0;  // 0 = first DMN layer
    bool supervised = true;
    std::size_t pinned_filters = 0;  // 0 = derived from the threshold
};

// FNV-1a over the canonical key string; stored in the file and checked on load.
std::uint64_t policy_hash(const CacheKey& key);

std::string cache_file_name(const CacheKey& key);

void save_dmn_layer(const DmnLayer& layer, const CacheKey& key, const std::string& path);

// Returns nothing when the file is missing; throws io_error on corruption or
// key mismatch.
std::optional<DmnLayer> load_dmn_layer(const CacheKey& key, const std::string& path);

void save_density(const DensityAccumulator& acc, const std::string& dataset,
                  std::size_t kernel, const std::string& path);
std::optional<DensityAccumulator> load_density(const std::string& path);

// Per-epoch flattened parameter snapshots from a training run, as produced by
// train_convnet (snapshots[epoch][layer]). Round-trips bit-exactly so
// diagnostics can be re-run offline.
void save_snapshots(const std::vector<std::vector<std::vector<double>>>& snapshots,
                    const std::string& path);
std::optional<std::vector<std::vector<std::vector<double>>>> load_snapshots(
    const std::string& path);

struct CacheSummary {
    std::string type;  // "filters" or "density"
    std::string dataset;
    std::size_t kernel = 0;
    std::size_t dim = 0;
    std::size_t filters = 0;
    int num_classes = 0;
    double variance_threshold = 0.0;
    double overlap_cutoff = 0.0;
    double fraction = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t hash = 0;
    std::size_t epochs = 0;  // snapshot records
    std::size_t layers = 0;
};

CacheSummary inspect_cache(const std::string& path);

}  // namespace dmn
