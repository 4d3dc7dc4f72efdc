#include "dmn/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dmn/density.hpp"
#include "dmn/patches.hpp"
#include "dmn/rng.hpp"

namespace dmn {

ConvergenceVerdict layer_convergence(
    const std::vector<std::vector<std::vector<double>>>& snapshots) {
    if (snapshots.size() < 2)
        throw dimension_error("layer_convergence: need snapshots from at least 2 epochs");
    const std::size_t n_layers = snapshots.front().size();
    if (n_layers < 2)
        throw dimension_error("layer_convergence: need at least 2 layers of snapshots");
    const std::size_t T = snapshots.size() - 1;

    ConvergenceVerdict verdict;
    for (std::size_t l = 0; l < n_layers; ++l) {
        ConvergenceCurve curve;
        curve.layer = l;
        const auto& final_w = snapshots[T][l];
        for (std::size_t t = 0; t <= T; ++t) {
            const auto& w = snapshots[t][l];
            double sq = 0.0;
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double d = w[k] - final_w[k];
                sq += d * d;
            }
            curve.raw.push_back(std::sqrt(sq));
        }
        const double d0 = curve.raw.front();
        curve.normalized.resize(curve.raw.size());
        for (std::size_t t = 0; t < curve.raw.size(); ++t)
            curve.normalized[t] = d0 > 0.0 ? curve.raw[t] / d0 : 0.0;
        curve.threshold_epoch = T;
        for (std::size_t t = 0; t <= T; ++t)
            if (curve.normalized[t] < 0.2) {
                curve.threshold_epoch = t;
                break;
            }
        verdict.curves.push_back(std::move(curve));
    }

    verdict.first_layer_earliest = true;
    for (std::size_t l = 1; l < n_layers; ++l)
        if (verdict.curves[0].threshold_epoch > verdict.curves[l].threshold_epoch)
            verdict.first_layer_earliest = false;
    return verdict;
}

std::vector<NormRatioPoint> norm_ratio_probe(
    const std::vector<std::vector<std::vector<double>>>& snapshots, std::size_t n_filters,
    std::size_t kernel, const FeatureMap& sample_images, double noise,
    std::uint64_t noise_seed) {
    if (snapshots.empty()) throw dimension_error("norm_ratio_probe: no snapshots");

    // fixed noisy blocks, shared across epochs
    PatchMatrix pm = extract_patches(sample_images, {}, kernel, 1);
    if (noise > 0.0) {
        rng gen(noise_seed);
        for (auto& v : pm.data) v += noise * (2.0 * gen.next_unit() - 1.0);
    }
    std::vector<double> block_norm(pm.count);
    for (std::size_t p = 0; p < pm.count; ++p) {
        double sq = 0.0;
        for (std::size_t d = 0; d < pm.dim; ++d) sq += pm.patch(p)[d] * pm.patch(p)[d];
        block_norm[p] = std::sqrt(sq);
    }
    // blocks whose norm sits at the regularizing-noise floor carry no image
    // content; dividing by their norm would let a positive bias dominate the
    // average, so they are left out
    const double noise_floor = 10.0 * noise * std::sqrt(static_cast<double>(pm.dim));

    std::vector<NormRatioPoint> out;
    for (std::size_t epoch = 0; epoch < snapshots.size(); ++epoch) {
        const auto& params = snapshots[epoch][0];  // first conv layer
        if (params.size() < n_filters * pm.dim + n_filters)
            throw dimension_error("norm_ratio_probe: snapshot too small for filter geometry");

        std::vector<double> per_filter(n_filters, 0.0);
        for (std::size_t f = 0; f < n_filters; ++f) {
            const double* w = params.data() + f * pm.dim;
            const double b = params[n_filters * pm.dim + f];
            double wsq = 0.0;
            for (std::size_t d = 0; d < pm.dim; ++d) wsq += w[d] * w[d];
            const double wn = std::sqrt(wsq);
            double acc = 0.0;
            std::size_t used = 0;
            for (std::size_t p = 0; p < pm.count; ++p) {
                if (block_norm[p] <= noise_floor) continue;
                double pre = b;
                for (std::size_t d = 0; d < pm.dim; ++d) pre += w[d] * pm.patch(p)[d];
                const double h = pre > 0.0 ? pre : 0.0;
                acc += (wn > 0.0) ? h / (wn * block_norm[p]) : 0.0;
                ++used;
            }
            per_filter[f] = used > 0 ? acc / static_cast<double>(used) : 0.0;
        }

        NormRatioPoint point;
        point.epoch = epoch;
        double mean = 0.0;
        for (double v : per_filter) mean += v;
        mean /= static_cast<double>(n_filters);
        double var = 0.0;
        for (double v : per_filter) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n_filters);
        point.mean_ratio = mean;
        point.sigma_ratio = std::sqrt(var);
        out.push_back(point);
    }
    return out;
}

RelaxationProbeResult relaxation_probe(const RelaxationProbeConfig& cfg) {
    if (cfg.repeats < 30)
        throw config_error("relaxation_probe: need at least 30 repeats for stable spreads");
    if (cfg.lambdas.empty()) throw config_error("relaxation_probe: no eigenvalues given");
    if (cfg.n_samples < 10) throw config_error("relaxation_probe: n_samples too small");

    const std::size_t measured = cfg.lambdas.size();
    const std::size_t dim = measured + cfg.support_dims;

    // eigenbasis: canonical axes, or a random orthonormal basis when rotated
    Matrix basis = Matrix::identity(dim);
    if (cfg.rotation_seed != 0) {
        rng rot_gen(cfg.rotation_seed);
        Matrix sym(dim, dim);
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = i; j < dim; ++j) {
                const double x = rot_gen.next_normal();
                sym.at(i, j) = x;
                sym.at(j, i) = x;
            }
        basis = symmetric_eig(sym).eigenvectors;
    }

    std::vector<double> all_lambda(dim, cfg.support_lambda);
    for (std::size_t m = 0; m < measured; ++m) all_lambda[m] = cfg.lambdas[m];
    std::vector<double> sqrt_lambda(dim);
    for (std::size_t m = 0; m < dim; ++m) sqrt_lambda[m] = std::sqrt(all_lambda[m]);

    // start vector: uniform over the support dims (or over everything when no
    // support dims were requested)
    std::vector<double> v0(dim, 0.0);
    if (cfg.support_dims > 0) {
        const double a = 1.0 / std::sqrt(static_cast<double>(cfg.support_dims));
        for (std::size_t m = measured; m < dim; ++m) v0[m] = a;
    } else {
        const double a = 1.0 / std::sqrt(static_cast<double>(dim));
        for (std::size_t m = 0; m < dim; ++m) v0[m] = a;
    }

    const std::size_t n = cfg.n_samples;
    const std::size_t horizon = 3 * n;

    std::vector<std::vector<double>> finals(cfg.repeats, std::vector<double>(measured));
    std::vector<double> x(dim), coeff(dim), v(dim), rho_v(dim);
    Matrix rho(dim, dim);

    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        rng gen(cfg.seed + 0x1000 * (rep + 1));

        auto draw = [&]() {
            // x = sum_mu sqrt(lambda_mu) z_mu psi_mu
            for (std::size_t m = 0; m < dim; ++m) coeff[m] = sqrt_lambda[m] * gen.next_normal();
            for (std::size_t i = 0; i < dim; ++i) {
                double acc = 0.0;
                for (std::size_t m = 0; m < dim; ++m) acc += basis.at(i, m) * coeff[m];
                x[i] = acc;
            }
        };

        // second-moment estimate from the first N samples
        std::fill(rho.data.begin(), rho.data.end(), 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            draw();
            for (std::size_t i = 0; i < dim; ++i)
                for (std::size_t j = 0; j < dim; ++j) rho.at(i, j) += x[i] * x[j];
        }
        for (auto& e : rho.data) e /= static_cast<double>(n);

        // express v0 in data coordinates
        for (std::size_t i = 0; i < dim; ++i) {
            double acc = 0.0;
            for (std::size_t m = 0; m < dim; ++m) acc += basis.at(i, m) * v0[m];
            v[i] = acc;
        }

        // relaxation kicks: v -= step * d(rho_hat) v, d(rho_hat) = (xx^T - rho)/t
        for (std::size_t t = n + 1; t <= horizon; ++t) {
            draw();
            double xv = 0.0;
            for (std::size_t i = 0; i < dim; ++i) xv += x[i] * v[i];
            for (std::size_t i = 0; i < dim; ++i) {
                double acc = 0.0;
                const double* row = rho.row(i);
                for (std::size_t j = 0; j < dim; ++j) acc += row[j] * v[j];
                rho_v[i] = acc;
            }
            const double inv_t = 1.0 / static_cast<double>(t);
            for (std::size_t i = 0; i < dim; ++i) {
                const double kick = (x[i] * xv - rho_v[i]) * inv_t;
                // running update of the estimate, then the weight kick
                v[i] -= cfg.step * kick;
            }
            for (std::size_t i = 0; i < dim; ++i)
                for (std::size_t j = 0; j < dim; ++j)
                    rho.at(i, j) += (x[i] * x[j] - rho.at(i, j)) * inv_t;
        }

        for (std::size_t m = 0; m < measured; ++m) {
            double proj = 0.0;
            for (std::size_t i = 0; i < dim; ++i) proj += basis.at(i, m) * v[i];
            finals[rep][m] = proj;
        }
    }

    RelaxationProbeResult result;
    result.lambdas.assign(cfg.lambdas.begin(), cfg.lambdas.end());
    for (std::size_t m = 0; m < measured; ++m) {
        double mean = 0.0;
        for (const auto& f : finals) mean += f[m];
        mean /= static_cast<double>(cfg.repeats);
        double var = 0.0;
        for (const auto& f : finals) var += (f[m] - mean) * (f[m] - mean);
        var /= static_cast<double>(cfg.repeats - 1);
        const double spread = std::sqrt(var);
        const double predicted = std::sqrt(cfg.lambdas[m] / static_cast<double>(n));
        result.spreads.push_back(spread);
        result.predicted.push_back(predicted);
        result.ratio.push_back(predicted > 0.0 ? spread / predicted : 0.0);
    }
    return result;
}

namespace {

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open " + path + " for writing");
    return out;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void emit_convergence_csv(const ConvergenceVerdict& verdict, const std::string& path) {
    auto out = open_csv(path);
    out << "layer,epoch,l2_distance,l2_normalized\n";
    for (const auto& curve : verdict.curves)
        for (std::size_t t = 0; t < curve.raw.size(); ++t)
            out << curve.layer << ',' << t << ',' << fmt(curve.raw[t]) << ','
                << fmt(curve.normalized[t]) << '\n';
}

void emit_norm_ratio_csv(const std::vector<NormRatioPoint>& points, const std::string& path) {
    auto out = open_csv(path);
    out << "epoch,mean_ratio,sigma_ratio\n";
    for (const auto& p : points)
        out << p.epoch << ',' << fmt(p.mean_ratio) << ',' << fmt(p.sigma_ratio) << '\n';
}

void emit_relaxation_csv(const RelaxationProbeResult& result, const std::string& path) {
    auto out = open_csv(path);
    out << "mode,lambda,measured_spread,predicted_scale,ratio\n";
    for (std::size_t m = 0; m < result.lambdas.size(); ++m)
        out << m << ',' << fmt(result.lambdas[m]) << ',' << fmt(result.spreads[m]) << ','
            << fmt(result.predicted[m]) << ',' << fmt(result.ratio[m]) << '\n';
}

void emit_fluctuation_csv(const FluctuationSeries& series, std::size_t patches_per_image,
                          const std::string& path) {
    auto out = open_csv(path);
    out << "patches,images_equivalent,mean_stat,spread_stat\n";
    for (const auto& p : series.points) {
        const double images = patches_per_image > 0
                                  ? static_cast<double>(p.patches_seen) /
                                        static_cast<double>(patches_per_image)
                                  : 0.0;
        out << p.patches_seen << ',' << fmt(images) << ',' << fmt(p.mean_stat) << ','
            << fmt(p.spread_stat) << '\n';
    }
}

void emit_eigconv_csv(const std::vector<EigenvalueConvergenceRow>& rows,
                      const std::string& path) {
    auto out = open_csv(path);
    out << "fraction,images,mode,lambda\n";
    for (const auto& row : rows)
        for (std::size_t mu = 0; mu < row.eigenvalues.size(); ++mu)
            out << fmt(row.fraction) << ',' << row.images_used << ',' << mu << ','
                << fmt(row.eigenvalues[mu]) << '\n';
}

}  // namespace dmn
