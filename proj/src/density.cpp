#include "dmn/density.hpp"

#include <cmath>
#include <deque>

#include "dmn/rng.hpp"

namespace dmn {

DensityAccumulator::DensityAccumulator(std::size_t dim, int num_classes)
    : dim_(dim), num_classes_(num_classes) {
    if (num_classes <= 0) throw dimension_error("DensityAccumulator: num_classes must be > 0");
    const std::size_t packed = dim * (dim + 1) / 2;
    upper_.assign(static_cast<std::size_t>(num_classes), std::vector<double>(packed, 0.0));
    counts_.assign(static_cast<std::size_t>(num_classes), 0);
}

void DensityAccumulator::accumulate_patch(const double* v, int class_id) {
    if (class_id < 0 || class_id >= num_classes_)
        throw dimension_error("accumulate: class id out of range");
    double* s = upper_[static_cast<std::size_t>(class_id)].data();
    std::size_t idx = 0;
    for (std::size_t i = 0; i < dim_; ++i) {
        const double vi = v[i];
        for (std::size_t j = i; j < dim_; ++j) s[idx++] += vi * v[j];
    }
    counts_[static_cast<std::size_t>(class_id)]++;
}

void DensityAccumulator::accumulate(const PatchMatrix& patches) {
    if (patches.dim != dim_)
        throw dimension_error("accumulate: patch dim " + std::to_string(patches.dim) +
                              " != accumulator dim " + std::to_string(dim_));
    for (std::size_t p = 0; p < patches.count; ++p)
        accumulate_patch(patches.patch(p), patches.class_of_patch[p]);
}

void DensityAccumulator::inject(int class_id, const std::vector<double>& packed_upper,
                                std::size_t count) {
    if (class_id < 0 || class_id >= num_classes_)
        throw dimension_error("inject: class id out of range");
    if (packed_upper.size() != dim_ * (dim_ + 1) / 2)
        throw dimension_error("inject: packed size mismatch");
    upper_[static_cast<std::size_t>(class_id)] = packed_upper;
    counts_[static_cast<std::size_t>(class_id)] = count;
}

void DensityAccumulator::merge(const DensityAccumulator& other) {
    if (other.dim_ != dim_ || other.num_classes_ != num_classes_)
        throw dimension_error("merge: accumulator shape mismatch");
    for (std::size_t c = 0; c < upper_.size(); ++c) {
        for (std::size_t k = 0; k < upper_[c].size(); ++k) upper_[c][k] += other.upper_[c][k];
        counts_[c] += other.counts_[c];
    }
}

std::size_t DensityAccumulator::total_count() const {
    std::size_t n = 0;
    for (auto c : counts_) n += c;
    return n;
}

Matrix DensityAccumulator::sum_matrix(int class_or_total) const {
    std::vector<double> packed(dim_ * (dim_ + 1) / 2, 0.0);
    if (class_or_total == kTotalClass) {
        for (const auto& cls : upper_)
            for (std::size_t k = 0; k < packed.size(); ++k) packed[k] += cls[k];
    } else {
        if (class_or_total < 0 || class_or_total >= num_classes_)
            throw dimension_error("sum_matrix: class id out of range");
        packed = upper_[static_cast<std::size_t>(class_or_total)];
    }
    Matrix m(dim_, dim_);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = i; j < dim_; ++j) {
            m.at(i, j) = packed[idx];
            m.at(j, i) = packed[idx];
            ++idx;
        }
    return m;
}

DensitySpectrum density_spectrum(const DensityAccumulator& acc, int class_or_total) {
    std::size_t n = 0;
    if (class_or_total == kTotalClass) {
        n = acc.total_count();
    } else {
        n = acc.class_count(class_or_total);
    }
    if (n == 0) throw numeric_error("density_spectrum: no patches for requested class");

    Matrix rho = acc.sum_matrix(class_or_total);
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : rho.data) x *= inv;

    DensitySpectrum out;
    out.class_id = class_or_total;
    out.count = n;
    out.spectrum = symmetric_eig(rho);
    return out;
}

std::vector<DensitySpectrum> per_class_spectra(const DensityAccumulator& acc) {
    std::vector<DensitySpectrum> out;
    for (int c = 0; c < acc.num_classes(); ++c) {
        if (acc.class_count(c) == 0) continue;
        out.push_back(density_spectrum(acc, c));
    }
    return out;
}

FluctuationSeries fluctuation_series(const PatchMatrix& patches, int num_classes,
                                     std::size_t window_patches) {
    constexpr std::size_t kTrailing = 5;
    if (window_patches == 0) throw dimension_error("fluctuation_series: zero window");
    if (patches.count / window_patches < 2)
        throw dimension_error("fluctuation_series: need at least 2 windows of patches");

    FluctuationSeries series;
    series.window_patches = window_patches;
    series.trailing_windows = kTrailing;

    DensityAccumulator acc(patches.dim, num_classes);
    // per class: trailing eigenvalue snapshots (empty while class unpopulated)
    std::vector<std::deque<std::vector<double>>> history(
        static_cast<std::size_t>(num_classes));

    const std::size_t n_windows = patches.count / window_patches;
    for (std::size_t w = 0; w < n_windows; ++w) {
        const std::size_t begin = w * window_patches;
        const std::size_t end = begin + window_patches;
        for (std::size_t p = begin; p < end; ++p)
            acc.accumulate_patch(patches.patch(p), patches.class_of_patch[p]);

        for (int c = 0; c < num_classes; ++c) {
            auto& h = history[static_cast<std::size_t>(c)];
            if (acc.class_count(c) == 0) {
                h.clear();  // keep snapshots contiguous once the class appears
                continue;
            }
            h.push_back(density_spectrum(acc, c).spectrum.eigenvalues);
            if (h.size() > kTrailing) h.pop_front();
        }

        FluctuationPoint point;
        point.patches_seen = end;
        std::vector<double> stats;
        for (int c = 0; c < num_classes; ++c) {
            const auto& h = history[static_cast<std::size_t>(c)];
            if (h.size() < kTrailing) continue;
            const auto& current = h.back();
            double lam_max = 0.0;
            for (double l : current) lam_max = std::max(lam_max, l);
            for (std::size_t mu = 0; mu < current.size(); ++mu) {
                const double lam = current[mu];
                if (lam <= 1e-12 * lam_max || lam <= 0.0) continue;
                double mean = 0.0;
                for (const auto& snap : h) mean += snap[mu];
                mean /= static_cast<double>(kTrailing);
                double var = 0.0;
                for (const auto& snap : h) var += (snap[mu] - mean) * (snap[mu] - mean);
                var /= static_cast<double>(kTrailing - 1);
                const double sigma = std::sqrt(var);
                stats.push_back(sigma * std::sqrt(static_cast<double>(end) / lam));
            }
        }
        if (!stats.empty()) {
            double mean = 0.0;
            for (double s : stats) mean += s;
            mean /= static_cast<double>(stats.size());
            double var = 0.0;
            for (double s : stats) var += (s - mean) * (s - mean);
            var /= static_cast<double>(stats.size());
            point.mean_stat = mean;
            point.spread_stat = std::sqrt(var);
            series.points.push_back(point);
        }
    }
    return series;
}

std::vector<EigenvalueConvergenceRow> eigenvalue_convergence(const ImageBatch& batch,
                                                             std::size_t kernel,
                                                             const std::vector<double>& fractions,
                                                             std::uint64_t seed) {
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] > 0.0 && fractions[i] <= 1.0))
            throw config_error("eigenvalue_convergence: fraction out of (0,1]");
        if (i > 0 && fractions[i] < fractions[i - 1])
            throw config_error("eigenvalue_convergence: fractions must ascend");
    }

    const auto order = shuffled_indices(batch.count, seed);
    const std::size_t dim = batch.channels * kernel * kernel;
    DensityAccumulator acc(dim, 1);
    const FeatureMap fm = as_feature_map(batch);

    std::vector<EigenvalueConvergenceRow> rows;
    std::size_t consumed = 0;
    for (double f : fractions) {
        const std::size_t target =
            static_cast<std::size_t>(std::ceil(f * static_cast<double>(batch.count)));
        for (; consumed < target; ++consumed) {
            // single-image extraction keeps peak memory flat
            FeatureMap one(1, fm.channels, fm.height, fm.width);
            const double* src = fm.sample(order[consumed]);
            std::copy(src, src + fm.map_size(), one.values.begin());
            const auto pm = extract_patches(one, {0}, kernel, 1);
            acc.accumulate(pm);
        }
        EigenvalueConvergenceRow row;
        row.fraction = f;
        row.images_used = target;
        row.eigenvalues = density_spectrum(acc, kTotalClass).spectrum.eigenvalues;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace dmn
