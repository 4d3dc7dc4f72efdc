#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dmn/density.hpp"
#include "dmn/rng.hpp"

using dmn::DensityAccumulator;
using dmn::Matrix;
using dmn::PatchMatrix;

namespace {

PatchMatrix make_patches(const std::vector<std::vector<double>>& rows,
                         const std::vector<int>& classes) {
    PatchMatrix pm;
    pm.dim = rows.empty() ? 0 : rows[0].size();
    pm.count = rows.size();
    pm.data.reserve(pm.count * pm.dim);
    for (const auto& r : rows) pm.data.insert(pm.data.end(), r.begin(), r.end());
    pm.class_of_patch = classes;
    pm.origin.resize(pm.count, {0, 0, 0});
    return pm;
}

PatchMatrix random_patches(std::size_t n, std::size_t dim, int num_classes, std::uint64_t seed,
                           bool gaussian = false) {
    PatchMatrix pm;
    pm.dim = dim;
    pm.count = n;
    pm.data.resize(n * dim);
    pm.class_of_patch.resize(n);
    pm.origin.resize(n, {0, 0, 0});
    dmn::rng gen(seed);
    for (std::size_t i = 0; i < n * dim; ++i)
        pm.data[i] = gaussian ? gen.next_normal() : gen.next_unit();
    for (std::size_t i = 0; i < n; ++i)
        pm.class_of_patch[i] = static_cast<int>(gen.next_below(num_classes));
    return pm;
}

}  // namespace

TEST_CASE("one-hot patches accumulate to a diagonal sum") {
    auto pm = make_patches({{1, 0, 0, 0}, {0, 1, 0, 0}}, {2, 2});
    DensityAccumulator acc(4, 3);
    acc.accumulate(pm);
    const Matrix s = acc.sum_matrix(2);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(s.at(i, j) == ((i == j && i < 2) ? 1.0 : 0.0));
    CHECK(acc.class_count(2) == 2);
    CHECK(acc.class_count(0) == 0);
}

TEST_CASE("empty patch set leaves the accumulator unchanged") {
    DensityAccumulator acc(4, 2);
    const PatchMatrix empty = make_patches({}, {});
    // dim of an empty set is 0; accumulate requires matching dim
    CHECK_THROWS_AS(acc.accumulate(empty), dmn::dimension_error);
    PatchMatrix empty4;
    empty4.dim = 4;
    acc.accumulate(empty4);
    CHECK(acc.total_count() == 0);
    CHECK(dmn::frobenius_norm(acc.sum_matrix(dmn::kTotalClass)) == 0.0);
}

TEST_CASE("accumulation matches the naive outer-product oracle") {
    const auto pm = random_patches(1000, 6, 3, 404);
    DensityAccumulator acc(6, 3);
    acc.accumulate(pm);

    // oracle: per-class naive double loop
    for (int c = 0; c < 3; ++c) {
        Matrix expected(6, 6);
        for (std::size_t p = 0; p < pm.count; ++p) {
            if (pm.class_of_patch[p] != c) continue;
            const double* v = pm.patch(p);
            for (std::size_t i = 0; i < 6; ++i)
                for (std::size_t j = 0; j < 6; ++j) expected.at(i, j) += v[i] * v[j];
        }
        const Matrix got = acc.sum_matrix(c);
        const double scale = dmn::frobenius_norm(expected);
        for (std::size_t k = 0; k < got.size(); ++k)
            CHECK(std::fabs(got.data[k] - expected.data[k]) <= 1e-10 * scale);
    }
}

TEST_CASE("rank-1 spectrum recovers the repeated unit patch") {
    const double s = 1.0 / std::sqrt(2.0);
    auto pm = make_patches({{s, -s, 0}, {s, -s, 0}, {s, -s, 0}}, {0, 0, 0});
    DensityAccumulator acc(3, 1);
    acc.accumulate(pm);
    const auto ds = dmn::density_spectrum(acc, 0);
    CHECK(ds.count == 3);
    CHECK(ds.spectrum.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(ds.spectrum.eigenvalues[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
    // sign rule: largest-magnitude component positive -> +s is first component
    CHECK(ds.spectrum.eigenvectors.at(0, 0) == doctest::Approx(s).epsilon(1e-9));
    CHECK(ds.spectrum.eigenvectors.at(1, 0) == doctest::Approx(-s).epsilon(1e-9));

    CHECK_THROWS_AS(dmn::density_spectrum(DensityAccumulator(3, 1), 0), dmn::numeric_error);
}

TEST_CASE("isotropic patches give clustered eigenvalues") {
    const auto pm = random_patches(100000, 9, 1, 777, true);
    DensityAccumulator acc(9, 1);
    acc.accumulate(pm);
    const auto ds = dmn::density_spectrum(acc, dmn::kTotalClass);
    const double lmax = ds.spectrum.eigenvalues.front();
    const double lmin = ds.spectrum.eigenvalues.back();
    CHECK((lmax - lmin) / lmax < 0.10);
}

TEST_CASE("trace equals mean squared patch norm per class") {
    const auto pm = random_patches(5000, 7, 4, 11);
    DensityAccumulator acc(7, 4);
    acc.accumulate(pm);
    for (int c = 0; c < 4; ++c) {
        double sum_sq = 0.0;
        std::size_t n = 0;
        for (std::size_t p = 0; p < pm.count; ++p) {
            if (pm.class_of_patch[p] != c) continue;
            for (std::size_t d = 0; d < 7; ++d) sum_sq += pm.patch(p)[d] * pm.patch(p)[d];
            ++n;
        }
        Matrix rho = acc.sum_matrix(c);
        for (auto& x : rho.data) x /= static_cast<double>(n);
        CHECK(dmn::trace(rho) == doctest::Approx(sum_sq / n).epsilon(1e-8));
    }
}

TEST_CASE("sharded accumulation merges to the single-pass result") {
    const auto pm = random_patches(20000, 8, 5, 2020);
    DensityAccumulator single(8, 5);
    single.accumulate(pm);

    // shard by patch index, merge in shard order
    DensityAccumulator merged(8, 5);
    for (std::size_t shard = 0; shard < 4; ++shard) {
        DensityAccumulator local(8, 5);
        for (std::size_t p = shard; p < pm.count; p += 4)
            local.accumulate_patch(pm.patch(p), pm.class_of_patch[p]);
        merged.merge(local);
    }
    CHECK(merged.total_count() == single.total_count());
    const Matrix a = single.sum_matrix(dmn::kTotalClass);
    const Matrix b = merged.sum_matrix(dmn::kTotalClass);
    const double scale = dmn::frobenius_norm(a);
    for (std::size_t k = 0; k < a.size(); ++k)
        CHECK(std::fabs(a.data[k] - b.data[k]) <= 1e-9 * scale);
}

TEST_CASE("TOTAL spectrum is invariant under class relabeling") {
    const auto pm = random_patches(3000, 5, 3, 99);
    DensityAccumulator acc(5, 3);
    acc.accumulate(pm);

    PatchMatrix relabeled = pm;
    for (auto& c : relabeled.class_of_patch) c = (c + 1) % 3;
    DensityAccumulator acc2(5, 3);
    acc2.accumulate(relabeled);

    const auto s1 = dmn::density_spectrum(acc, dmn::kTotalClass);
    const auto s2 = dmn::density_spectrum(acc2, dmn::kTotalClass);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(s1.spectrum.eigenvalues[i] == doctest::Approx(s2.spectrum.eigenvalues[i]));
}

TEST_CASE("constant patch stream has zero fluctuation statistic") {
    std::vector<std::vector<double>> rows(200, {0.5, 0.25, 0.1});
    std::vector<int> classes(200, 0);
    const auto pm = make_patches(rows, classes);
    const auto series = dmn::fluctuation_series(pm, 1, 20);
    REQUIRE(!series.points.empty());
    for (const auto& p : series.points) {
        CHECK(p.mean_stat == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
        CHECK(p.spread_stat == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    }
}

TEST_CASE("fluctuation_series rejects streams shorter than two windows") {
    const auto pm = random_patches(30, 4, 2, 1);
    CHECK_THROWS_AS(dmn::fluctuation_series(pm, 2, 20), dmn::dimension_error);
}

TEST_CASE("iid gaussian stream statistic flattens after burn-in") {
    const auto pm = random_patches(60000, 6, 2, 31337, true);
    const auto series = dmn::fluctuation_series(pm, 2, 600);
    REQUIRE(series.points.size() > 20);

    // slope of the best-fit line over the last half, in units of the mean
    const std::size_t half = series.points.size() / 2;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const std::size_t n = series.points.size() - half;
    for (std::size_t i = half; i < series.points.size(); ++i) {
        const double x = static_cast<double>(series.points[i].patches_seen);
        const double y = series.points[i].mean_stat;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double mean_y = sy / n;
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    CHECK(std::fabs(slope) <= 0.10 * std::fabs(mean_y));
    // and the second half stays inside a +-50% band around its mean
    for (std::size_t i = half; i < series.points.size(); ++i) {
        CHECK(series.points[i].mean_stat >= 0.5 * mean_y);
        CHECK(series.points[i].mean_stat <= 1.5 * mean_y);
    }
}

TEST_CASE("eigenvalue_convergence single fraction equals full-set spectrum") {
    dmn::ImageBatch batch;
    batch.count = 50;
    batch.channels = 1;
    batch.height = 6;
    batch.width = 6;
    batch.num_classes = 2;
    batch.name = "synth";
    batch.pixels.resize(50 * 36);
    batch.labels.resize(50);
    dmn::rng gen(8);
    for (auto& p : batch.pixels) p = gen.next_unit();
    for (std::size_t i = 0; i < 50; ++i) batch.labels[i] = static_cast<int>(i % 2);
    dmn::rebuild_class_index(batch);

    const auto rows = dmn::eigenvalue_convergence(batch, 3, {1.0}, 4);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].images_used == 50);

    // oracle: direct accumulation over all patches, no shuffle involved
    const auto pm = dmn::extract_patches(batch, 3, 1);
    DensityAccumulator acc(9, 1);
    for (std::size_t p = 0; p < pm.count; ++p) acc.accumulate_patch(pm.patch(p), 0);
    const auto full = dmn::density_spectrum(acc, dmn::kTotalClass);
    for (std::size_t i = 0; i < 9; ++i)
        CHECK(rows[0].eigenvalues[i] ==
              doctest::Approx(full.spectrum.eigenvalues[i]).epsilon(1e-9));

    CHECK_THROWS_AS(dmn::eigenvalue_convergence(batch, 3, {0.5, 0.1}, 4), dmn::config_error);
    CHECK_THROWS_AS(dmn::eigenvalue_convergence(batch, 3, {0.0}, 4), dmn::config_error);
}

TEST_CASE("eigenvalue ordering is stable across growing fractions") {
    dmn::ImageBatch batch;
    batch.count = 400;
    batch.channels = 1;
    batch.height = 8;
    batch.width = 8;
    batch.num_classes = 2;
    batch.pixels.resize(400 * 64);
    batch.labels.assign(400, 0);
    // anisotropic synthetic images: strong horizontal gradient plus noise
    dmn::rng gen(21);
    for (std::size_t i = 0; i < 400; ++i)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x)
                batch.pixels[i * 64 + y * 8 + x] = 0.1 * x + 0.05 * gen.next_unit();
    dmn::rebuild_class_index(batch);

    const auto rows = dmn::eigenvalue_convergence(batch, 3, {0.1, 0.5, 1.0}, 7);
    REQUIRE(rows.size() == 3);
    for (const auto& row : rows)
        for (std::size_t i = 0; i + 1 < row.eigenvalues.size(); ++i)
            CHECK(row.eigenvalues[i] >= row.eigenvalues[i + 1] - 1e-12);
}
