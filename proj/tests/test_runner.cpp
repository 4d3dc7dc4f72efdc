#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dmn/cache.hpp"
#include "dmn/diagnostics.hpp"
#include "dmn/runner.hpp"
#include "dmn/rng.hpp"

namespace fs = std::filesystem;

using dmn::LayerKind;
using dmn::RunConfig;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dmn_runner_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int counter;
};
int TempDir::counter = 0;

void push_u32_be(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back((x >> 24) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
}

// Fixture "mnist": tiny IDX files with 10-class labels and separable images.
void write_fixture_mnist(const fs::path& dir, std::size_t n_train, std::size_t n_test,
                         std::size_t hw) {
    fs::create_directories(dir / "mnist");
    dmn::rng gen(99);
    auto write_pair = [&](const std::string& img_name, const std::string& lab_name,
                          std::size_t n) {
        std::vector<unsigned char> img, lab;
        push_u32_be(img, 0x00000803);
        push_u32_be(img, static_cast<std::uint32_t>(n));
        push_u32_be(img, static_cast<std::uint32_t>(hw));
        push_u32_be(img, static_cast<std::uint32_t>(hw));
        push_u32_be(lab, 0x00000801);
        push_u32_be(lab, static_cast<std::uint32_t>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const int y = static_cast<int>(i % 10);
            lab.push_back(static_cast<unsigned char>(y));
            // class-dependent bright column so the task is learnable
            for (std::size_t r = 0; r < hw; ++r)
                for (std::size_t c = 0; c < hw; ++c) {
                    const bool hot = (c == static_cast<std::size_t>(y) % hw);
                    const int noise = static_cast<int>(gen.next_below(40));
                    img.push_back(static_cast<unsigned char>(hot ? 200 + noise / 4 : noise));
                }
        }
        std::ofstream(dir / "mnist" / img_name, std::ios::binary)
            .write(reinterpret_cast<const char*>(img.data()), img.size());
        std::ofstream(dir / "mnist" / lab_name, std::ios::binary)
            .write(reinterpret_cast<const char*>(lab.data()), lab.size());
    };
    write_pair("train-images-idx3-ubyte", "train-labels-idx1-ubyte", n_train);
    write_pair("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", n_test);
}

}  // namespace

TEST_CASE("parse_architecture grammar") {
    const auto plan = dmn::parse_architecture("d6,m,de10");
    REQUIRE(plan.tokens.size() == 3);
    CHECK(plan.tokens[0].kind == LayerKind::Dmn);
    CHECK(plan.tokens[0].count == 6);
    CHECK(plan.tokens[1].kind == LayerKind::Pool);
    CHECK(plan.tokens[2].kind == LayerKind::Dense);
    CHECK(plan.dense_nodes == 10);
    CHECK(plan.dmn_layers == 1);

    const auto conv = dmn::parse_architecture("c27,m,c108,m,de100");
    CHECK(conv.conv_layers == 2);
    CHECK(conv.tokens[2].count == 108);
    CHECK(conv.dense_nodes == 100);

    const auto derived = dmn::parse_architecture("d,m,de10");
    CHECK(derived.tokens[0].count == 0);  // derived from the threshold

    const auto bare = dmn::parse_architecture("m,de10");
    CHECK(bare.no_feature_layers);

    CHECK_THROWS_AS(dmn::parse_architecture("x4,de10"), dmn::config_error);
    CHECK_THROWS_AS(dmn::parse_architecture("d6,m"), dmn::config_error);
    CHECK_THROWS_AS(dmn::parse_architecture("de10,d6,m,de10"), dmn::config_error);
    CHECK_THROWS_AS(dmn::parse_architecture(""), dmn::config_error);
    CHECK_THROWS_AS(dmn::parse_architecture("c,m,de10"), dmn::config_error);
}

TEST_CASE("run config round-trips through key=value text") {
    const std::string text =
        "# comment\n"
        "dataset=cifar10\n"
        "arch=d22,m,de10\n"
        "var=0.999\n"
        "cutoff=0.9\n"
        "fraction=0.7\n"
        "epochs=42\n"
        "lr=0.01\n"
        "batch=64\n"
        "seed=5\n";
    const RunConfig cfg = dmn::parse_run_config(text);
    CHECK(cfg.dataset == "cifar10");
    CHECK(cfg.arch == "d22,m,de10");
    CHECK(cfg.variance_threshold == 0.999);
    CHECK(cfg.fraction == 0.7);
    CHECK(cfg.train.epochs == 42);
    CHECK(cfg.train.batch_size == 64);
    CHECK(cfg.train.seed == 5);

    CHECK_THROWS_AS(dmn::parse_run_config("nonsense\n"), dmn::config_error);
    CHECK_THROWS_AS(dmn::parse_run_config("bogus_key=1\n"), dmn::config_error);
}

TEST_CASE("dmn layer cache round-trips bit-exactly") {
    TempDir dir;
    dmn::DmnLayer layer;
    layer.filters = dmn::Matrix(3, 9);
    dmn::rng gen(7);
    for (auto& v : layer.filters.data) v = gen.next_normal();
    layer.provenance = {{0, 0, 1.5}, {1, 0, 0.75}, {dmn::kTotalClass, 2, 0.125}};
    layer.kernel = 3;
    layer.data_fraction = 0.3;

    dmn::CacheKey key;
    key.dataset = "mnist|d3";
    key.fraction = 0.3;
    key.seed = 11;
    const std::string path = (dir.path / dmn::cache_file_name(key)).string();
    dmn::save_dmn_layer(layer, key, path);

    const auto loaded = dmn::load_dmn_layer(key, path);
    REQUIRE(loaded.has_value());
    CHECK(loaded->filters.data == layer.filters.data);  // bit-identical
    CHECK(loaded->kernel == 3);
    CHECK(loaded->data_fraction == 0.3);
    REQUIRE(loaded->provenance.size() == 3);
    CHECK(loaded->provenance[2].class_id == dmn::kTotalClass);
    CHECK(loaded->provenance[1].eigenvalue == 0.75);

    // key mismatch is a hard error, missing file is not
    dmn::CacheKey other = key;
    other.seed = 12;
    CHECK_THROWS_AS(dmn::load_dmn_layer(other, path), dmn::io_error);
    CHECK(!dmn::load_dmn_layer(key, (dir.path / "absent.dmn1").string()).has_value());

    const auto summary = dmn::inspect_cache(path);
    CHECK(summary.type == "filters");
    CHECK(summary.filters == 3);
    CHECK(summary.dim == 9);

    // corruption detected
    std::ofstream(path, std::ios::binary) << "garbage";
    CHECK_THROWS_AS(dmn::load_dmn_layer(key, path), dmn::io_error);
}

TEST_CASE("density cache round-trips") {
    TempDir dir;
    dmn::DensityAccumulator acc(4, 2);
    dmn::rng gen(13);
    std::vector<double> v(4);
    for (int p = 0; p < 50; ++p) {
        for (auto& x : v) x = gen.next_unit();
        acc.accumulate_patch(v.data(), p % 2);
    }
    const std::string path = (dir.path / "density.dmn1").string();
    dmn::save_density(acc, "synth", 2, path);
    const auto loaded = dmn::load_density(path);
    REQUIRE(loaded.has_value());
    CHECK(loaded->dim() == 4);
    CHECK(loaded->class_count(0) == acc.class_count(0));
    const auto a = acc.sum_matrix(dmn::kTotalClass);
    const auto b = loaded->sum_matrix(dmn::kTotalClass);
    CHECK(a.data == b.data);
    const auto summary = dmn::inspect_cache(path);
    CHECK(summary.type == "density");
    CHECK(summary.num_classes == 2);
}

TEST_CASE("run_experiment end to end on a fixture dataset") {
    TempDir dir;
    write_fixture_mnist(dir.path, 120, 40, 12);

    RunConfig cfg;
    cfg.dataset = "mnist";
    cfg.data_dir = dir.path.string();
    cfg.arch = "d2,m,de10";
    cfg.variance_threshold = 0.9;
    cfg.fraction = 0.5;
    cfg.train.epochs = 20;
    cfg.train.learning_rate = 0.2;
    cfg.train.batch_size = 16;
    cfg.train.seed = 3;
    cfg.out_dir = (dir.path / "results").string();
    cfg.cache_dir = (dir.path / "cache").string();

    const auto first = dmn::run_experiment(cfg);
    CHECK(!first.record.failed);
    CHECK(first.record.val_acc > 50.0);  // separable fixture
    CHECK(first.record.filter_counts == "2");
    REQUIRE(first.dmn_layers.size() == 1);
    CHECK(first.dmn_layers[0].filter_count() == 2);
    CHECK(fs::exists(cfg.out_dir + "/results.csv"));

    // cache hit: identical record except wall time
    const auto second = dmn::run_experiment(cfg);
    CHECK(second.record.val_acc == first.record.val_acc);
    CHECK(second.record.train_acc == first.record.train_acc);
    CHECK(second.record.filter_counts == first.record.filter_counts);
    CHECK(second.dmn_layers[0].filters.data == first.dmn_layers[0].filters.data);

    // dense-only baseline works too
    cfg.arch = "de10";
    const auto dense = dmn::run_experiment(cfg);
    CHECK(!dense.record.failed);
    CHECK(dense.record.filter_counts.empty());

    // class-count mismatch is rejected
    cfg.arch = "d2,m,de7";
    CHECK_THROWS_AS(dmn::run_experiment(cfg), dmn::config_error);
    // hybrids are rejected
    cfg.arch = "d2,m,c4,m,de10";
    CHECK_THROWS_AS(dmn::run_experiment(cfg), dmn::config_error);
}

TEST_CASE("run_suite aggregates runs and reports failures without stopping") {
    TempDir dir;
    write_fixture_mnist(dir.path, 80, 30, 10);

    const auto write_cfg = [&](const std::string& name, const std::string& arch) {
        std::ofstream out(dir.path / name);
        out << "dataset=mnist\n"
            << "data_dir=" << dir.path.string() << "\n"
            << "arch=" << arch << "\n"
            << "var=0.9\ncutoff=0.9\nfraction=1.0\nepochs=5\nlr=0.1\nbatch=16\nseed=2\n"
            << "out=" << (dir.path / "results").string() << "\n"
            << "cache=" << (dir.path / "cache").string() << "\n";
    };
    write_cfg("a.cfg", "d2,m,de10");
    write_cfg("b.cfg", "de10");
    write_cfg("c.cfg", "d2,m,de3");  // wrong class count -> failure recorded

    std::ofstream(dir.path / "suite.txt") << "a.cfg\nb.cfg\n# comment\nc.cfg\n";
    const auto outcome = dmn::run_suite((dir.path / "suite.txt").string());
    REQUIRE(outcome.records.size() == 3);
    CHECK(!outcome.records[0].failed);
    CHECK(!outcome.records[1].failed);
    CHECK(outcome.records[2].failed);
    CHECK(outcome.summary_markdown.find("| dataset |") != std::string::npos);
    CHECK(outcome.summary_markdown.find("failed") != std::string::npos);

    // empty manifest -> empty table
    std::ofstream(dir.path / "empty.txt") << "# nothing\n";
    const auto empty = dmn::run_suite((dir.path / "empty.txt").string());
    CHECK(empty.records.empty());
}

TEST_CASE("density cache reuse across thresholds matches a fresh build") {
    TempDir dir;
    write_fixture_mnist(dir.path, 100, 30, 12);
    const auto train = dmn::load_dataset("mnist", dir.path.string(), dmn::DatasetSplit::Train);

    RunConfig cfg;
    cfg.dataset = "mnist";
    cfg.data_dir = dir.path.string();
    cfg.arch = "d,m,de10";
    cfg.fraction = 0.5;
    cfg.train.seed = 9;
    cfg.cache_dir = (dir.path / "cache").string();
    cfg.out_dir.clear();

    cfg.variance_threshold = 0.9;
    const auto warm = dmn::build_dmn_stack(cfg, train);  // populates the density cache
    (void)warm;

    cfg.variance_threshold = 0.99;
    const auto via_cache = dmn::build_dmn_stack(cfg, train);

    RunConfig fresh_cfg = cfg;
    fresh_cfg.use_cache = false;
    const auto fresh = dmn::build_dmn_stack(fresh_cfg, train);

    REQUIRE(via_cache.size() == fresh.size());
    CHECK(via_cache[0].filters.data == fresh[0].filters.data);
    CHECK(via_cache[0].filter_count() == fresh[0].filter_count());

    // corrupt every cache file; the build must quietly rebuild and agree
    for (const auto& entry : fs::directory_iterator(cfg.cache_dir))
        std::ofstream(entry.path(), std::ios::binary) << "corrupt";
    const auto rebuilt = dmn::build_dmn_stack(cfg, train);
    CHECK(rebuilt[0].filters.data == fresh[0].filters.data);
}

TEST_CASE("snapshot files round-trip and diagnostics re-run bit-identically") {
    TempDir dir;
    // small training run with recorded snapshots
    dmn::FeatureMap input(20, 1, 8, 8);
    std::vector<int> labels(20);
    dmn::rng gen(6);
    for (auto& v : input.values) v = gen.next_unit();
    for (std::size_t i = 0; i < 20; ++i) labels[i] = static_cast<int>(i % 2);
    dmn::TrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 10;
    tc.record_snapshots = true;
    const auto res = dmn::train_convnet(input, labels, {}, {}, 2, {2}, tc);

    const std::string path = (dir.path / "snaps.dmn1").string();
    dmn::save_snapshots(res.snapshots, path);
    const auto loaded = dmn::load_snapshots(path);
    REQUIRE(loaded.has_value());
    REQUIRE(loaded->size() == res.snapshots.size());
    for (std::size_t e = 0; e < loaded->size(); ++e)
        for (std::size_t l = 0; l < (*loaded)[e].size(); ++l)
            CHECK((*loaded)[e][l] == res.snapshots[e][l]);  // bit-identical

    // diagnostics are pure functions of their snapshot inputs
    const auto direct = dmn::layer_convergence(res.snapshots);
    const auto replayed = dmn::layer_convergence(*loaded);
    for (std::size_t l = 0; l < direct.curves.size(); ++l) {
        CHECK(direct.curves[l].raw == replayed.curves[l].raw);
        CHECK(direct.curves[l].threshold_epoch == replayed.curves[l].threshold_epoch);
    }
    CHECK(direct.first_layer_earliest == replayed.first_layer_earliest);

    const auto summary = dmn::inspect_cache(path);
    CHECK(summary.type == "snapshots");
    CHECK(summary.epochs == 9);  // init + 8 epochs
    CHECK(summary.layers == 2);
}

TEST_CASE("reference accuracies resolve for known configurations") {
    auto v = dmn::reference_accuracy("mnist", "d6,m,de10", 0.3, 0.95);
    REQUIRE(v.has_value());
    CHECK(*v == 97.78);
    CHECK(dmn::reference_accuracy("mnist", "de10", 1.0, 0.95).value() == 92.9);
    CHECK(dmn::reference_accuracy("cifar10", "d22,m,de10", 0.7, 0.999).value() == 56.2);
    CHECK(!dmn::reference_accuracy("mnist", "d999,m,de10", 0.3, 0.95).has_value());
}
