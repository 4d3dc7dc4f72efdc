#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dmn/cache.hpp"
#include "dmn/density.hpp"
#include "dmn/diagnostics.hpp"
#include "dmn/runner.hpp"

namespace {

std::string default_data_dir() {
    const char* env = std::getenv("DMN_DATA_DIR");
    return env ? env : "data";
}

struct RunFlags {
    CLI::Option* dataset;
    CLI::Option* data_dir;
    CLI::Option* arch;
    CLI::Option* var;
    CLI::Option* cutoff;
    CLI::Option* fraction;
    CLI::Option* epochs;
    CLI::Option* lr;
    CLI::Option* batch;
    CLI::Option* seed;
    CLI::Option* out;
    CLI::Option* cache;
};

RunFlags add_run_flags(CLI::App* cmd, dmn::RunConfig& cfg) {
    RunFlags f;
    f.dataset = cmd->add_option("--dataset", cfg.dataset, "mnist | cifar10 | cifar100");
    f.data_dir = cmd->add_option("--data-dir", cfg.data_dir,
                                 "dataset root (default $DMN_DATA_DIR or ./data)");
    f.arch = cmd->add_option("--arch", cfg.arch, "architecture string, e.g. d6,m,de10");
    f.var = cmd->add_option("--var", cfg.variance_threshold, "variance threshold in (0,1]");
    f.cutoff = cmd->add_option("--cutoff", cfg.overlap_cutoff, "overlap cutoff in (0,1]");
    f.fraction =
        cmd->add_option("--fraction", cfg.fraction, "training fraction for filter construction");
    f.epochs = cmd->add_option("--epochs", cfg.train.epochs, "training epochs");
    f.lr = cmd->add_option("--lr", cfg.train.learning_rate, "learning rate");
    f.batch = cmd->add_option("--batch", cfg.train.batch_size, "minibatch size");
    f.seed = cmd->add_option("--seed", cfg.train.seed, "rng seed");
    f.out = cmd->add_option("--out", cfg.out_dir, "output directory");
    f.cache = cmd->add_option("--cache", cfg.cache_dir, "cache directory");
    cmd->add_flag("--unsupervised", [&cfg](std::int64_t) { cfg.supervised = false; },
                  "select filters from the pooled spectrum instead of per class");
    return f;
}

// command-line flags override values from --config
void overlay_flags(const RunFlags& f, const dmn::RunConfig& flags, dmn::RunConfig& cfg) {
    if (f.dataset->count()) cfg.dataset = flags.dataset;
    if (f.data_dir->count()) cfg.data_dir = flags.data_dir;
    if (f.arch->count()) cfg.arch = flags.arch;
    if (f.var->count()) cfg.variance_threshold = flags.variance_threshold;
    if (f.cutoff->count()) cfg.overlap_cutoff = flags.overlap_cutoff;
    if (f.fraction->count()) cfg.fraction = flags.fraction;
    if (f.epochs->count()) cfg.train.epochs = flags.train.epochs;
    if (f.lr->count()) cfg.train.learning_rate = flags.train.learning_rate;
    if (f.batch->count()) cfg.train.batch_size = flags.train.batch_size;
    if (f.seed->count()) cfg.train.seed = flags.train.seed;
    if (f.out->count()) cfg.out_dir = flags.out_dir;
    if (f.cache->count()) cfg.cache_dir = flags.cache_dir;
    if (!flags.supervised) cfg.supervised = false;
}

int cmd_build_dmn(const dmn::RunConfig& cfg) {
    const auto train = dmn::load_dataset(cfg.dataset, cfg.data_dir, dmn::DatasetSplit::Train);
    const auto stack = dmn::build_dmn_stack(cfg, train);
    if (stack.empty()) {
        std::printf("architecture '%s' has no frozen layers\n", cfg.arch.c_str());
        return 1;
    }
    for (std::size_t i = 0; i < stack.size(); ++i) {
        std::printf("layer %zu: %zu filters, dim %zu, kernel %zu, fraction %g\n", i,
                    stack[i].filter_count(), stack[i].filters.cols, stack[i].kernel,
                    stack[i].data_fraction);
        for (std::size_t f = 0; f < stack[i].filter_count(); ++f) {
            const auto& p = stack[i].provenance[f];
            std::printf("  filter %zu: class %d mode %zu lambda %.6g\n", f, p.class_id, p.mode,
                        p.eigenvalue);
        }
    }
    return 0;
}

int cmd_train(const dmn::RunConfig& cfg) {
    const auto art = dmn::run_experiment(cfg);
    const auto& r = art.record;
    if (r.failed) {
        std::printf("run failed: %s\n", r.error.c_str());
        return 1;
    }
    std::printf("%s %s: val acc %.2f%% (best epoch %zu), final %.2f%%, train %.2f%%, "
                "filters [%s], %.1fs\n",
                r.dataset.c_str(), r.arch.c_str(), r.val_acc, r.best_epoch, r.final_val_acc,
                r.train_acc, r.filter_counts.c_str(), r.wall_seconds);
    const auto ref = dmn::reference_accuracy(r.dataset, r.arch, r.fraction,
                                             r.variance_threshold);
    if (ref) std::printf("reference accuracy for this configuration: %.2f%%\n", *ref);
    return 0;
}

int cmd_suite(const std::string& manifest, const std::string& out_dir) {
    const auto outcome = dmn::run_suite(manifest);
    std::printf("%s\n", outcome.summary_markdown.c_str());
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream(out_dir + "/summary.md") << outcome.summary_markdown;
        std::printf("summary written to %s/summary.md\n", out_dir.c_str());
    }
    std::size_t failed = 0;
    for (const auto& r : outcome.records)
        if (r.failed) ++failed;
    return failed == 0 ? 0 : 1;
}

int cmd_diag_converge(const dmn::RunConfig& cfg, const std::vector<std::size_t>& filters) {
    const auto train = dmn::load_dataset(cfg.dataset, cfg.data_dir, dmn::DatasetSplit::Train);
    const auto test = dmn::load_dataset(cfg.dataset, cfg.data_dir, dmn::DatasetSplit::Test);
    dmn::TrainConfig tc = cfg.train;
    tc.record_snapshots = true;
    const auto res = dmn::train_convnet(dmn::as_feature_map(train), train.labels,
                                        dmn::as_feature_map(test), test.labels,
                                        train.num_classes, filters, tc);
    const auto verdict = dmn::layer_convergence(res.snapshots);
    std::filesystem::create_directories(cfg.out_dir);
    dmn::save_snapshots(res.snapshots, cfg.out_dir + "/snapshots_" + cfg.dataset + ".dmn1");
    const std::string path = cfg.out_dir + "/fig_converge_" + cfg.dataset + ".csv";
    dmn::emit_convergence_csv(verdict, path);
    for (const auto& curve : verdict.curves)
        std::printf("layer %zu crosses 0.2 at epoch %zu\n", curve.layer,
                    curve.threshold_epoch);
    std::printf("first layer earliest: %s\nwrote %s\n",
                verdict.first_layer_earliest ? "yes" : "no", path.c_str());
    return 0;
}

int cmd_diag_sigma(const dmn::RunConfig& cfg, std::size_t window_images,
                   std::size_t max_images) {
    auto train = dmn::load_dataset(cfg.dataset, cfg.data_dir, dmn::DatasetSplit::Train);
    dmn::SplitSpec spec;
    spec.fraction = std::min(1.0, static_cast<double>(max_images) /
                                      static_cast<double>(train.count));
    spec.seed = cfg.train.seed;
    const auto subset = dmn::subsample(train, spec);
    const auto patches = dmn::extract_patches(subset, 3, 1);
    const std::size_t per_image = patches.count / subset.count;
    const auto series =
        dmn::fluctuation_series(patches, subset.num_classes, window_images * per_image);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/fig_sigma_" + cfg.dataset + ".csv";
    dmn::emit_fluctuation_csv(series, per_image, path);
    std::printf("%zu windows of %zu images, wrote %s\n", series.points.size(), window_images,
                path.c_str());
    return 0;
}

int cmd_diag_eigconv(const dmn::RunConfig& cfg, std::vector<double> fractions) {
    const auto train = dmn::load_dataset(cfg.dataset, cfg.data_dir, dmn::DatasetSplit::Train);
    if (fractions.empty()) fractions = {0.001, 0.01, 0.1, 1.0};
    const auto rows = dmn::eigenvalue_convergence(train, 3, fractions, cfg.train.seed);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/fig_eigconv_" + cfg.dataset + ".csv";
    dmn::emit_eigconv_csv(rows, path);
    for (const auto& row : rows)
        std::printf("fraction %g (%zu images): top lambda %.6g\n", row.fraction,
                    row.images_used, row.eigenvalues.front());
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_diag_normratio(const dmn::RunConfig& cfg, std::size_t filters,
                       std::size_t probe_images) {
    const auto train = dmn::load_dataset(cfg.dataset, cfg.data_dir, dmn::DatasetSplit::Train);
    const auto test = dmn::load_dataset(cfg.dataset, cfg.data_dir, dmn::DatasetSplit::Test);
    dmn::TrainConfig tc = cfg.train;
    tc.record_snapshots = true;
    const auto res = dmn::train_convnet(dmn::as_feature_map(train), train.labels,
                                        dmn::as_feature_map(test), test.labels,
                                        train.num_classes, {filters}, tc);
    dmn::SplitSpec spec;
    spec.fraction = std::min(1.0, static_cast<double>(probe_images) /
                                      static_cast<double>(train.count));
    spec.seed = cfg.train.seed;
    const auto probe = dmn::subsample(train, spec);
    const auto points = dmn::norm_ratio_probe(res.snapshots, filters, 3,
                                              dmn::as_feature_map(probe), 1e-6, cfg.train.seed);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/fig_normratio_" + cfg.dataset + ".csv";
    dmn::emit_norm_ratio_csv(points, path);
    std::printf("final mean ratio %.4g, wrote %s\n", points.back().mean_ratio, path.c_str());
    return 0;
}

int cmd_diag_relaxprobe(const dmn::RunConfig& cfg, std::size_t n_samples, std::size_t repeats) {
    dmn::RelaxationProbeConfig pc;
    pc.lambdas = {0.8, 0.4, 0.2, 0.1};
    pc.support_dims = 4;
    pc.n_samples = n_samples;
    pc.repeats = repeats;
    pc.seed = cfg.train.seed;
    const auto res = dmn::relaxation_probe(pc);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/fig_relaxprobe.csv";
    dmn::emit_relaxation_csv(res, path);
    for (std::size_t m = 0; m < res.lambdas.size(); ++m)
        std::printf("lambda %.3g: spread %.5g, sqrt(lambda/N) %.5g, ratio %.4g\n",
                    res.lambdas[m], res.spreads[m], res.predicted[m], res.ratio[m]);
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"density-matrix network experiment runner"};
    app.require_subcommand(1);

    dmn::RunConfig cfg;
    cfg.data_dir = default_data_dir();

    auto* build = app.add_subcommand("build-dmn", "construct frozen filter layers");
    add_run_flags(build, cfg);

    auto* train = app.add_subcommand("train", "run one experiment end to end");
    const RunFlags train_flags = add_run_flags(train, cfg);
    std::string config_path;
    train->add_option("--config", config_path,
                      "key=value run config file (explicit flags override it)");

    auto* suite = app.add_subcommand("suite", "run every config in a manifest");
    std::string manifest;
    std::string suite_out = "results";
    suite->add_option("manifest", manifest, "manifest file")->required();
    suite->add_option("--out", suite_out, "output directory");

    auto* diagnose = app.add_subcommand("diagnose", "reproduce the empirical diagnostics");
    diagnose->require_subcommand(1);

    auto* converge = diagnose->add_subcommand("converge", "per-layer convergence ordering");
    add_run_flags(converge, cfg);
    std::vector<std::size_t> conv_filters = {8, 8};
    converge->add_option("--filters", conv_filters, "conv filter counts");

    auto* sigma = diagnose->add_subcommand("sigma", "eigenvalue fluctuation trace");
    add_run_flags(sigma, cfg);
    std::size_t window_images = 20, sigma_images = 3000;
    sigma->add_option("--window", window_images, "images per window");
    sigma->add_option("--images", sigma_images, "stream length in images");

    auto* eigconv = diagnose->add_subcommand("eigconv", "eigenvalue convergence table");
    add_run_flags(eigconv, cfg);
    std::vector<double> fractions;
    eigconv->add_option("--fractions", fractions, "ascending fractions in (0,1]");

    auto* normratio = diagnose->add_subcommand("normratio", "activation/weight norm ratio");
    add_run_flags(normratio, cfg);
    std::size_t nr_filters = 32, nr_images = 500;
    normratio->add_option("--filters", nr_filters, "conv filter count");
    normratio->add_option("--images", nr_images, "probe image count");

    auto* relaxprobe = diagnose->add_subcommand("relaxprobe", "weight-spread scaling probe");
    add_run_flags(relaxprobe, cfg);
    std::size_t rp_samples = 400, rp_repeats = 200;
    relaxprobe->add_option("--samples", rp_samples, "N, the estimation sample count");
    relaxprobe->add_option("--repeats", rp_repeats, "Monte-Carlo repeats");

    auto* inspect = app.add_subcommand("inspect-cache", "print a cache file manifest");
    std::string cache_path;
    inspect->add_option("path", cache_path, "cache file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (build->parsed()) return cmd_build_dmn(cfg);
        if (train->parsed()) {
            if (!config_path.empty()) {
                dmn::RunConfig file_cfg = dmn::load_run_config(config_path);
                overlay_flags(train_flags, cfg, file_cfg);
                return cmd_train(file_cfg);
            }
            return cmd_train(cfg);
        }
        if (suite->parsed()) return cmd_suite(manifest, suite_out);
        if (converge->parsed()) return cmd_diag_converge(cfg, conv_filters);
        if (sigma->parsed()) return cmd_diag_sigma(cfg, window_images, sigma_images);
        if (eigconv->parsed()) return cmd_diag_eigconv(cfg, fractions);
        if (normratio->parsed()) return cmd_diag_normratio(cfg, nr_filters, nr_images);
        if (relaxprobe->parsed()) return cmd_diag_relaxprobe(cfg, rp_samples, rp_repeats);
        if (inspect->parsed()) {
            const auto s = dmn::inspect_cache(cache_path);
            std::printf("type=%s dataset=%s kernel=%zu dim=%zu", s.type.c_str(),
                        s.dataset.c_str(), s.kernel, s.dim);
            if (s.type == "filters")
                std::printf(" filters=%zu var=%g cutoff=%g fraction=%g seed=%llu hash=%016llx",
                            s.filters, s.variance_threshold, s.overlap_cutoff, s.fraction,
                            static_cast<unsigned long long>(s.seed),
                            static_cast<unsigned long long>(s.hash));
            else if (s.type == "density")
                std::printf(" classes=%d", s.num_classes);
            else
                std::printf(" epochs=%zu layers=%zu", s.epochs, s.layers);
            std::printf("\n");
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
