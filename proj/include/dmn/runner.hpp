#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmn/dataset.hpp"
#include "dmn/dmn.hpp"
#include "dmn/nets.hpp"

namespace dmn {

// Architecture grammar: comma-separated tokens, e.g. "d6,m,de10" or
// "c9,m,de10". "dN"/"d" = frozen filter layer (count optional, derived from
// the variance threshold when omitted), "cN" = trainable conv layer, "m" =
// 2x2 maxpool, "deN" = terminal dense softmax layer with N nodes.
enum class LayerKind { Dmn, Conv, Pool, Dense };

struct LayerToken {
    LayerKind kind;
    std::size_t count = 0;  // 0 for Dmn means "derived"; Pool carries none
};

struct LayerPlan {
    std::vector<LayerToken> tokens;
    bool no_feature_layers = false;  // accepted with a warning
    std::size_t dmn_layers = 0;
    std::size_t conv_layers = 0;
    std::size_t dense_nodes = 0;
};

LayerPlan parse_architecture(const std::string& spec);

struct RunConfig {
    std::string dataset = "mnist";  // mnist | cifar10 | cifar100
    std::string data_dir = "data";
    std::string arch = "de10";
    double variance_threshold = 0.95;
    double overlap_cutoff = 0.9;
    double fraction = 1.0;
    bool supervised = true;
    TrainConfig train;
    std::string out_dir = "results";
    std::string cache_dir = "cache";
    bool use_cache = true;
};

// key=value config text; unknown keys are an error. The architecture string
// lives under the key "arch".
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

struct ResultRecord {
    std::string dataset;
    std::string arch;
    double fraction = 1.0;
    double variance_threshold = 0.0;
    double overlap_cutoff = 0.0;
    std::string filter_counts;  // e.g. "6;93"
    double train_acc = 0.0;
    double val_acc = 0.0;        // best epoch
    double final_val_acc = 0.0;  // last epoch
    std::size_t best_epoch = 0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
};

struct ExperimentArtifacts {
    ResultRecord record;
    std::vector<DmnLayer> dmn_layers;
    std::vector<EpochMetric> metrics;
};

ImageBatch load_dataset(const std::string& name, const std::string& data_dir,
                        DatasetSplit split);
bool dataset_available(const std::string& name, const std::string& data_dir);

// Full pipeline: build/load frozen layers on cfg.fraction of the training
// data, push the whole train and validation sets through them, train the
// trainable remainder, evaluate, and append the record to results.csv under
// cfg.out_dir.
ExperimentArtifacts run_experiment(const RunConfig& cfg);

// Builds only the frozen layers (the front of the plan), with caching.
std::vector<DmnLayer> build_dmn_stack(const RunConfig& cfg, const ImageBatch& train);

// Flattened features of a batch propagated through frozen layers.
Matrix features_through(const ImageBatch& batch, const std::vector<DmnLayer>& layers);

void append_result_csv(const ResultRecord& record, const std::string& path);

struct SuiteOutcome {
    std::vector<ResultRecord> records;
    std::string summary_markdown;
};

// Manifest = text file listing one run-config path per line (relative paths
// resolved against the manifest directory). Failures are recorded and the
// suite continues.
SuiteOutcome run_suite(const std::string& manifest_path);

// Published reference accuracy for a configuration, when one is known.
std::optional<double> reference_accuracy(const std::string& dataset, const std::string& arch,
                                         double fraction, double variance_threshold);

}  // namespace dmn
