#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dmn/dataset.hpp"
#include "dmn/matrix.hpp"
#include "dmn/patches.hpp"

namespace dmn {

constexpr int kTotalClass = -1;

// Per-class running sums of patch outer products. Only the upper triangle is
// stored hot; materialize() mirrors it into a full symmetric matrix.
// Accumulators are mergeable, which is what makes sharded accumulation exact.
class DensityAccumulator {
public:
    DensityAccumulator(std::size_t dim, int num_classes);

    void accumulate(const PatchMatrix& patches);
    void accumulate_patch(const double* v, int class_id);
    void merge(const DensityAccumulator& other);

    // Restores one class's state from serialized form: packed upper triangle
    // in row-major (i <= j) order plus the patch count. Used by the cache.
    void inject(int class_id, const std::vector<double>& packed_upper, std::size_t count);

    std::size_t dim() const { return dim_; }
    int num_classes() const { return num_classes_; }
    std::size_t class_count(int c) const { return counts_[static_cast<std::size_t>(c)]; }
    std::size_t total_count() const;

    // Sum matrix S_c (or the grand total), mirrored to full symmetric form.
    Matrix sum_matrix(int class_or_total) const;

private:
    std::size_t dim_;
    int num_classes_;
    std::vector<std::vector<double>> upper_;  // per class, packed upper triangle
    std::vector<std::size_t> counts_;
};

// Spectrum of S_c / n_c (class) or sum_c S_c / sum_c n_c (total).
struct DensitySpectrum {
    int class_id = kTotalClass;
    Spectrum spectrum;
    std::size_t count = 0;
};

DensitySpectrum density_spectrum(const DensityAccumulator& acc, int class_or_total);
std::vector<DensitySpectrum> per_class_spectra(const DensityAccumulator& acc);

// One point of the eigenvalue-fluctuation trace: after `patches_seen` patches,
// the per-(class, mode) statistic sigma_mu * sqrt(N / lambda_mu) averaged over
// classes and modes, plus its spread.
struct FluctuationPoint {
    std::size_t patches_seen = 0;
    double mean_stat = 0.0;
    double spread_stat = 0.0;
};

struct FluctuationSeries {
    std::size_t window_patches = 0;
    std::size_t trailing_windows = 0;
    std::vector<FluctuationPoint> points;
};

// Streams `patches` in order, snapshotting per-class spectra every
// `window_patches` patches. sigma_mu is the sample standard deviation of each
// eigenvalue over the trailing 5 snapshots; modes below 1e-12 * lambda_max and
// classes without 5 populated snapshots are excluded from the average.
FluctuationSeries fluctuation_series(const PatchMatrix& patches, int num_classes,
                                     std::size_t window_patches);

struct EigenvalueConvergenceRow {
    double fraction = 0.0;
    std::size_t images_used = 0;
    std::vector<double> eigenvalues;
};

// TOTAL-density spectra built from growing prefixes of a seeded shuffle of the
// batch; fractions must be ascending, each in (0,1].
std::vector<EigenvalueConvergenceRow> eigenvalue_convergence(const ImageBatch& batch,
                                                             std::size_t kernel,
                                                             const std::vector<double>& fractions,
                                                             std::uint64_t seed);

}  // namespace dmn
