#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmn/matrix.hpp"
#include "dmn/nets.hpp"

namespace dmn {

// Distance-to-final-weights trace for one layer. raw[t] = ||w(t) - w(T)||_2,
// normalized[t] = raw[t] / raw[0] (zero when the run never moved).
struct ConvergenceCurve {
    std::size_t layer = 0;
    std::vector<double> raw;
    std::vector<double> normalized;
    std::size_t threshold_epoch = 0;  // first t with normalized < 0.2
};

struct ConvergenceVerdict {
    std::vector<ConvergenceCurve> curves;
    bool first_layer_earliest = false;
};

// snapshots[epoch][layer] as recorded by train_convnet (epoch 0 = init).
ConvergenceVerdict layer_convergence(
    const std::vector<std::vector<std::vector<double>>>& snapshots);

struct NormRatioPoint {
    std::size_t epoch = 0;
    double mean_ratio = 0.0;   // over filters
    double sigma_ratio = 0.0;  // spread over filters
};

// For each per-epoch snapshot of a 1-conv net: mean over image blocks of
// relu(w.p + b) / (|w| |p|), averaged per filter, then mean +- sigma across
// filters. `noise` is added uniformly to each block entry so block norms
// never vanish.
std::vector<NormRatioPoint> norm_ratio_probe(
    const std::vector<std::vector<std::vector<double>>>& snapshots, std::size_t n_filters,
    std::size_t kernel, const FeatureMap& sample_images, double noise = 1e-6,
    std::uint64_t noise_seed = 1);

struct RelaxationProbeConfig {
    std::vector<double> lambdas;  // prescribed covariance eigenvalues
    std::size_t support_dims = 0; // extra isotropic dims carrying the start vector
    double support_lambda = 0.3;
    std::size_t n_samples = 400;  // N: estimation count the probe perturbs around
    double step = 0.5;
    std::size_t repeats = 200;
    std::uint64_t seed = 1;
    std::uint64_t rotation_seed = 0;  // 0 = axis-aligned covariance
};

struct RelaxationProbeResult {
    std::vector<double> lambdas;        // measured dims only
    std::vector<double> spreads;        // std of final weight projection per mode
    std::vector<double> predicted;      // sqrt(lambda / N), unknown constant excluded
    std::vector<double> ratio;          // spreads / predicted
};

// Monte-Carlo probe of the relaxation-phase weight spread. A linear
// scalar-output weight v receives the increments of a running second-moment
// estimate: v -= step * (x x^T - rho_hat) v / t for t = N+1 .. 3N, repeated
// with independent Gaussian data. The standard deviation of the final
// projections onto each covariance eigenvector is compared against
// sqrt(lambda_mu / N). The start vector lives on the support dims so the
// measured dims carry pure diffusion.
RelaxationProbeResult relaxation_probe(const RelaxationProbeConfig& cfg);

// CSV emitters, one file per figure; deterministic full-precision output.
void emit_convergence_csv(const ConvergenceVerdict& verdict, const std::string& path);
void emit_norm_ratio_csv(const std::vector<NormRatioPoint>& points, const std::string& path);
void emit_relaxation_csv(const RelaxationProbeResult& result, const std::string& path);

struct FluctuationPoint;
struct FluctuationSeries;
struct EigenvalueConvergenceRow;
void emit_fluctuation_csv(const FluctuationSeries& series, std::size_t patches_per_image,
                          const std::string& path);
void emit_eigconv_csv(const std::vector<EigenvalueConvergenceRow>& rows,
                      const std::string& path);

}  // namespace dmn
