#include "dmn/runner.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmn/cache.hpp"

namespace dmn {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& tok, std::size_t offset, const std::string& spec) {
    const std::string digits = tok.substr(offset);
    if (digits.empty()) return 0;
    for (char c : digits)
        if (!std::isdigit(static_cast<unsigned char>(c)))
            throw config_error("bad token '" + tok + "' in architecture '" + spec + "'");
    return static_cast<std::size_t>(std::stoull(digits));
}

}  // namespace

LayerPlan parse_architecture(const std::string& spec) {
    if (trim(spec).empty()) throw config_error("empty architecture spec");
    LayerPlan plan;
    std::stringstream ss(spec);
    std::string raw;
    while (std::getline(ss, raw, ',')) {
        const std::string tok = trim(raw);
        if (tok.empty()) throw config_error("empty token in architecture '" + spec + "'");
        LayerToken t{};
        if (tok == "m") {
            t.kind = LayerKind::Pool;
        } else if (tok.rfind("de", 0) == 0) {
            t.kind = LayerKind::Dense;
            t.count = parse_count(tok, 2, spec);
            if (t.count == 0)
                throw config_error("dense layer needs a node count in '" + spec + "'");
        } else if (tok[0] == 'd') {
            t.kind = LayerKind::Dmn;
            t.count = parse_count(tok, 1, spec);  // 0 = derived from threshold
        } else if (tok[0] == 'c') {
            t.kind = LayerKind::Conv;
            t.count = parse_count(tok, 1, spec);
            if (t.count == 0)
                throw config_error("conv layer needs a filter count in '" + spec + "'");
        } else {
            throw config_error("unknown token '" + tok + "' in architecture '" + spec + "'");
        }
        plan.tokens.push_back(t);
    }
    if (plan.tokens.empty() || plan.tokens.back().kind != LayerKind::Dense)
        throw config_error("architecture '" + spec + "' must end in a dense layer (deN)");
    for (std::size_t i = 0; i + 1 < plan.tokens.size(); ++i)
        if (plan.tokens[i].kind == LayerKind::Dense)
            throw config_error("dense layer must be terminal in '" + spec + "'");
    for (const auto& t : plan.tokens) {
        if (t.kind == LayerKind::Dmn) ++plan.dmn_layers;
        if (t.kind == LayerKind::Conv) ++plan.conv_layers;
    }
    plan.dense_nodes = plan.tokens.back().count;
    plan.no_feature_layers = (plan.dmn_layers + plan.conv_layers == 0);
    return plan;
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw config_error("bad config line: " + line);
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key == "dataset") cfg.dataset = value;
        else if (key == "data_dir") cfg.data_dir = value;
        else if (key == "arch") cfg.arch = value;
        else if (key == "var") cfg.variance_threshold = std::stod(value);
        else if (key == "cutoff") cfg.overlap_cutoff = std::stod(value);
        else if (key == "fraction") cfg.fraction = std::stod(value);
        else if (key == "supervised") cfg.supervised = (value == "1" || value == "true");
        else if (key == "epochs") cfg.train.epochs = std::stoull(value);
        else if (key == "lr") cfg.train.learning_rate = std::stod(value);
        else if (key == "batch") cfg.train.batch_size = std::stoull(value);
        else if (key == "seed") cfg.train.seed = std::stoull(value);
        else if (key == "init_scale") cfg.train.init_scale = std::stod(value);
        else if (key == "out") cfg.out_dir = value;
        else if (key == "cache") cfg.cache_dir = value;
        else if (key == "use_cache") cfg.use_cache = (value == "1" || value == "true");
        else throw config_error("unknown config key: " + key);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

ImageBatch load_dataset(const std::string& name, const std::string& data_dir,
                        DatasetSplit split) {
    if (name == "mnist") {
        const std::string base = data_dir + "/mnist/";
        if (split == DatasetSplit::Train)
            return load_mnist(base + "train-images-idx3-ubyte", base + "train-labels-idx1-ubyte");
        return load_mnist(base + "t10k-images-idx3-ubyte", base + "t10k-labels-idx1-ubyte");
    }
    if (name == "cifar10")
        return load_cifar(data_dir + "/cifar-10-batches-bin", CifarVariant::Cifar10, split);
    if (name == "cifar100")
        return load_cifar(data_dir + "/cifar-100-binary", CifarVariant::Cifar100, split);
    throw config_error("unknown dataset: " + name);
}

bool dataset_available(const std::string& name, const std::string& data_dir) {
    if (name == "mnist")
        return fs::exists(data_dir + "/mnist/train-images-idx3-ubyte") &&
               fs::exists(data_dir + "/mnist/train-labels-idx1-ubyte") &&
               fs::exists(data_dir + "/mnist/t10k-images-idx3-ubyte") &&
               fs::exists(data_dir + "/mnist/t10k-labels-idx1-ubyte");
    if (name == "cifar10")
        return fs::exists(data_dir + "/cifar-10-batches-bin/data_batch_1.bin") &&
               fs::exists(data_dir + "/cifar-10-batches-bin/test_batch.bin");
    if (name == "cifar100")
        return fs::exists(data_dir + "/cifar-100-binary/train.bin") &&
               fs::exists(data_dir + "/cifar-100-binary/test.bin");
    return false;
}

namespace {

// Block structure: every feature layer must be followed by "m" and all
// frozen layers sit in front of trainable ones.
void validate_blocks(const LayerPlan& plan, const std::string& spec) {
    if (plan.dmn_layers > 0 && plan.conv_layers > 0)
        throw config_error("hybrid frozen+trainable conv plans are not supported: " + spec);
    for (std::size_t i = 0; i + 1 < plan.tokens.size(); ++i) {
        const auto& t = plan.tokens[i];
        if ((t.kind == LayerKind::Dmn || t.kind == LayerKind::Conv) &&
            plan.tokens[i + 1].kind != LayerKind::Pool)
            throw config_error("each feature layer needs a maxpool after it: " + spec);
        if (t.kind == LayerKind::Pool && i == 0)
            std::fprintf(stderr, "warning: plan '%s' starts with a pool layer\n", spec.c_str());
    }
}

std::string arch_prefix(const LayerPlan& plan, std::size_t dmn_index) {
    // canonical token prefix up to and including the dmn_index-th DMN layer
    std::string out;
    std::size_t seen = 0;
    for (const auto& t : plan.tokens) {
        if (!out.empty()) out += ',';
        switch (t.kind) {
            case LayerKind::Dmn:
                out += 'd' + std::to_string(t.count);
                ++seen;
                break;
            case LayerKind::Conv: out += 'c' + std::to_string(t.count); break;
            case LayerKind::Pool: out += 'm'; break;
            case LayerKind::Dense: out += "de" + std::to_string(t.count); break;
        }
        if (t.kind == LayerKind::Dmn && seen == dmn_index + 1) break;
    }
    return out;
}

}  // namespace

std::vector<DmnLayer> build_dmn_stack(const RunConfig& cfg, const ImageBatch& train) {
    const LayerPlan plan = parse_architecture(cfg.arch);
    validate_blocks(plan, cfg.arch);
    std::vector<std::size_t> pinned;
    for (const auto& t : plan.tokens)
        if (t.kind == LayerKind::Dmn) pinned.push_back(t.count);
    if (pinned.empty()) return {};

    const ImageBatch subset =
        cfg.fraction < 1.0 ? subsample(train, {cfg.fraction, cfg.train.seed, true}) : train;

    if (!cfg.cache_dir.empty()) fs::create_directories(cfg.cache_dir);

    std::vector<DmnLayer> stack;
    std::uint64_t prev_hash = 0;
    for (std::size_t li = 0; li < pinned.size(); ++li) {
        SelectionPolicy policy;
        policy.variance_threshold = cfg.variance_threshold;
        policy.overlap_cutoff = cfg.overlap_cutoff;
        policy.supervised = cfg.supervised;
        if (pinned[li] > 0) policy.max_filters = pinned[li];

        CacheKey key;
        key.dataset = cfg.dataset + "|" + arch_prefix(plan, li);
        key.kernel = 3;
        key.variance_threshold = cfg.variance_threshold;
        key.overlap_cutoff = cfg.overlap_cutoff;
        key.fraction = cfg.fraction;
        key.seed = cfg.train.seed;
        key.layer_index = li;
        key.supervised = cfg.supervised;
        key.pinned_filters = pinned[li];
        const std::string path =
            cfg.cache_dir.empty() ? "" : cfg.cache_dir + "/" + cache_file_name(key);

        std::optional<DmnLayer> cached;
        if (cfg.use_cache && !path.empty()) {
            try {
                cached = load_dmn_layer(key, path);
            } catch (const io_error&) {
                cached.reset();  // corrupt cache: rebuild below
                std::error_code ec;
                fs::remove(path, ec);
            }
        }
        DmnLayer layer;
        if (cached) {
            layer = std::move(*cached);
        } else {
            // the patch density is policy-independent, so it gets its own
            // cache entry keyed by the stack below this layer
            CacheKey dkey;
            char prev[32];
            std::snprintf(prev, sizeof(prev), "%016llx",
                          static_cast<unsigned long long>(prev_hash));
            dkey.dataset = cfg.dataset + "|density|prev=" + prev;
            dkey.kernel = 3;
            dkey.fraction = cfg.fraction;
            dkey.seed = cfg.train.seed;
            dkey.layer_index = li;
            const std::string dpath =
                cfg.cache_dir.empty() ? ""
                                      : cfg.cache_dir + "/" + cache_file_name(dkey) + ".rho";

            std::optional<DensityAccumulator> acc;
            if (cfg.use_cache && !dpath.empty()) {
                try {
                    acc = load_density(dpath);
                    if (acc && acc->dim() == 0) acc.reset();
                } catch (const io_error&) {
                    acc.reset();
                    std::error_code ec;
                    fs::remove(dpath, ec);
                }
            }
            if (!acc) {
                acc = accumulate_patch_density(subset, stack, 3);
                if (cfg.use_cache && !dpath.empty())
                    save_density(*acc, dkey.dataset, 3, dpath);
            }
            layer = layer_from_density(*acc, policy, 3);
            layer.data_fraction = cfg.fraction;
            if (cfg.use_cache && !path.empty()) save_dmn_layer(layer, key, path);
        }
        prev_hash = policy_hash(key);
        stack.push_back(std::move(layer));
    }
    return stack;
}

Matrix features_through(const ImageBatch& batch, const std::vector<DmnLayer>& layers) {
    if (layers.empty()) {
        Matrix features(batch.count, batch.image_size());
        features.data = batch.pixels;
        return features;
    }
    Matrix features;
    const std::size_t chunk = 512;
    const FeatureMap fm = as_feature_map(batch);
    for (std::size_t base = 0; base < batch.count; base += chunk) {
        const std::size_t n = std::min(chunk, batch.count - base);
        FeatureMap part(n, fm.channels, fm.height, fm.width);
        std::copy(fm.sample(base), fm.sample(base) + n * fm.map_size(), part.values.begin());
        const FeatureMap out = propagate(part, layers, chunk);
        if (features.rows == 0) features = Matrix(batch.count, out.map_size());
        std::copy(out.values.begin(), out.values.end(), features.row(base));
    }
    return features;
}

void append_result_csv(const ResultRecord& r, const std::string& path) {
    const bool fresh = !fs::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw io_error("cannot open " + path + " for append");
    if (fresh)
        out << "schema_version,dataset,arch,fraction,var,cutoff,filters,train_acc,val_acc,"
               "final_val_acc,best_epoch,wall_seconds,seed,status\n";
    char buf[512];
    std::snprintf(buf, sizeof(buf), "1,%s,\"%s\",%g,%g,%g,%s,%.4f,%.4f,%.4f,%zu,%.2f,%llu,%s",
                  r.dataset.c_str(), r.arch.c_str(), r.fraction, r.variance_threshold,
                  r.overlap_cutoff, r.filter_counts.empty() ? "-" : r.filter_counts.c_str(),
                  r.train_acc, r.val_acc, r.final_val_acc, r.best_epoch, r.wall_seconds,
                  static_cast<unsigned long long>(r.seed),
                  r.failed ? ("failed:" + r.error).c_str() : "ok");
    out << buf << '\n';
}

ExperimentArtifacts run_experiment(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentArtifacts art;
    ResultRecord& rec = art.record;
    rec.dataset = cfg.dataset;
    rec.arch = cfg.arch;
    rec.fraction = cfg.fraction;
    rec.variance_threshold = cfg.variance_threshold;
    rec.overlap_cutoff = cfg.overlap_cutoff;
    rec.seed = cfg.train.seed;

    const LayerPlan plan = parse_architecture(cfg.arch);
    validate_blocks(plan, cfg.arch);

    const ImageBatch train = load_dataset(cfg.dataset, cfg.data_dir, DatasetSplit::Train);
    const ImageBatch test = load_dataset(cfg.dataset, cfg.data_dir, DatasetSplit::Test);
    if (plan.dense_nodes != static_cast<std::size_t>(train.num_classes))
        throw config_error("dense layer has " + std::to_string(plan.dense_nodes) +
                           " nodes but dataset has " + std::to_string(train.num_classes) +
                           " classes");

    try {
        if (plan.conv_layers > 0) {
            std::vector<std::size_t> counts;
            for (const auto& t : plan.tokens)
                if (t.kind == LayerKind::Conv) counts.push_back(t.count);
            const auto res =
                train_convnet(as_feature_map(train), train.labels, as_feature_map(test),
                              test.labels, train.num_classes, counts, cfg.train);
            rec.val_acc = res.best_val_acc;
            rec.final_val_acc = res.metrics.back().val_acc;
            rec.best_epoch = res.best_epoch > 0 ? res.best_epoch : res.metrics.size();
            rec.train_acc = res.metrics[rec.best_epoch - 1].train_acc;
            art.metrics = res.metrics;
            std::string counts_str;
            for (std::size_t c : counts)
                counts_str += (counts_str.empty() ? "" : ";") + std::to_string(c);
            rec.filter_counts = counts_str;
        } else {
            art.dmn_layers = build_dmn_stack(cfg, train);
            std::string counts_str;
            for (const auto& l : art.dmn_layers)
                counts_str +=
                    (counts_str.empty() ? "" : ";") + std::to_string(l.filter_count());
            rec.filter_counts = counts_str;

            const Matrix train_features = features_through(train, art.dmn_layers);
            const Matrix test_features = features_through(test, art.dmn_layers);
            const auto res = train_head(train_features, train.labels, test_features,
                                        test.labels, train.num_classes, cfg.train);
            rec.val_acc = res.best_val_acc;
            rec.final_val_acc = res.metrics.back().val_acc;
            rec.best_epoch = res.best_epoch > 0 ? res.best_epoch : res.metrics.size();
            rec.train_acc = res.metrics[rec.best_epoch - 1].train_acc;
            art.metrics = res.metrics;
        }
    } catch (const train_error& e) {
        rec.failed = true;
        rec.error = e.what();
    }

    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        append_result_csv(rec, cfg.out_dir + "/results.csv");
        // per-epoch metrics for this run
        std::string arch_tag;
        for (char c : cfg.arch) arch_tag += (c == ',') ? '-' : c;
        std::ofstream mout(cfg.out_dir + "/metrics_" + cfg.dataset + "_" + arch_tag +
                           "_seed" + std::to_string(cfg.train.seed) + ".csv");
        if (mout) {
            mout << "epoch,split,loss,accuracy\n";
            for (const auto& m : art.metrics) {
                mout << m.epoch << ",train," << m.train_loss << ',' << m.train_acc << '\n';
                mout << m.epoch << ",validation," << m.val_loss << ',' << m.val_acc << '\n';
            }
        }
    }
    return art;
}

std::optional<double> reference_accuracy(const std::string& dataset, const std::string& arch,
                                         double fraction, double variance_threshold) {
    struct Row {
        const char* dataset;
        const char* arch;
        double fraction;
        double var;  // 0 = any
        double acc;
    };
    // published validation accuracies for these configurations
    static const Row rows[] = {
        {"mnist", "de10", 0, 0, 92.9},
        {"mnist", "d4,m,de10", 0.5, 0.85, 96.81},
        {"mnist", "d6,m,de10", 0.3, 0.95, 97.78},
        {"mnist", "d16,m,de10", 0.3, 0.99, 97.28},
        {"mnist", "d4,m,d15,m,de10", 0.5, 0.85, 97.84},
        {"mnist", "d6,m,d93,m,de10", 0.3, 0.95, 98.5},
        {"mnist", "c9,m,de10", 0, 0, 98.27},
        {"cifar10", "de10", 0, 0, 40.04},
        {"cifar10", "d10,m,de10", 0.7, 0.99, 49.92},
        {"cifar10", "d10,m,d11,m,de10", 0.7, 0.99, 49.94},
        {"cifar10", "d22,m,de10", 0.7, 0.999, 56.2},
        {"cifar10", "d22,m,d41,m,de10", 0.2, 0.995, 59.64},
        {"cifar10", "d22,m,d41,m,de10", 0.7, 0.995, 59.48},
        {"cifar10", "d22,m,d87,m,de10", 0.7, 0.997, 62.15},
        {"cifar10", "d22,m,d305,m,de10", 0.7, 0.999, 63.71},
        {"cifar10", "c27,m,de10", 0, 0, 51.94},
        {"cifar100", "de100", 0, 0, 15.96},
        {"cifar100", "d79,m,de100", 1.0, 0.999, 30.93},
        {"cifar100", "d79,m,d545,m,de100", 1.0, 0.995, 38.38},
        {"cifar100", "c27,m,de100", 0, 0, 25.23},
    };
    std::string norm;
    for (char c : arch)
        if (c != ' ') norm += c;
    for (const auto& row : rows) {
        if (dataset != row.dataset || norm != row.arch) continue;
        if (row.fraction > 0 && std::fabs(row.fraction - fraction) > 1e-9) continue;
        if (row.var > 0 && std::fabs(row.var - variance_threshold) > 1e-9) continue;
        return row.acc;
    }
    return std::nullopt;
}

SuiteOutcome run_suite(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw io_error("cannot open manifest " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    SuiteOutcome outcome;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        fs::path cfg_path = t;
        if (cfg_path.is_relative()) cfg_path = base / cfg_path;
        ResultRecord rec;
        try {
            const RunConfig cfg = load_run_config(cfg_path.string());
            rec = run_experiment(cfg).record;
        } catch (const std::exception& e) {
            rec.arch = t;
            rec.failed = true;
            rec.error = e.what();
        }
        outcome.records.push_back(std::move(rec));
    }

    std::stringstream md;
    md << "| dataset | arch | fraction | var | cutoff | filters | val acc | reference | status |\n";
    md << "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : outcome.records) {
        char buf[384];
        const auto ref =
            reference_accuracy(r.dataset, r.arch, r.fraction, r.variance_threshold);
        std::snprintf(buf, sizeof(buf),
                      "| %s | %s | %g | %g | %g | %s | %.2f | %s | %s |\n", r.dataset.c_str(),
                      r.arch.c_str(), r.fraction, r.variance_threshold, r.overlap_cutoff,
                      r.filter_counts.empty() ? "-" : r.filter_counts.c_str(), r.val_acc,
                      ref ? std::to_string(*ref).substr(0, 5).c_str() : "-",
                      r.failed ? "failed" : "ok");
        md << buf;
    }
    outcome.summary_markdown = md.str();
    return outcome;
}

}  // namespace dmn
