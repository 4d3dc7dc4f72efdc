#include "dmn/nets.hpp"

#include <algorithm>
#include <cmath>

#include "dmn/rng.hpp"

namespace dmn {

Matrix softmax(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* z = logits.row(i);
        double zmax = z[0];
        for (std::size_t a = 1; a < logits.cols; ++a) zmax = std::max(zmax, z[a]);
        double sum = 0.0;
        double* o = out.row(i);
        for (std::size_t a = 0; a < logits.cols; ++a) {
            o[a] = std::exp(z[a] - zmax);
            sum += o[a];
        }
        for (std::size_t a = 0; a < logits.cols; ++a) o[a] /= sum;
    }
    return out;
}

double cross_entropy_loss(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows)
        throw dimension_error("cross_entropy_loss: label count mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* z = logits.row(i);
        double zmax = z[0];
        for (std::size_t a = 1; a < logits.cols; ++a) zmax = std::max(zmax, z[a]);
        double sum = 0.0;
        for (std::size_t a = 0; a < logits.cols; ++a) sum += std::exp(z[a] - zmax);
        const int y = labels[i];
        // -log softmax_y = log(sum) + zmax - z_y
        loss += std::log(sum) + zmax - z[y];
    }
    return loss / static_cast<double>(logits.rows);
}

Matrix softmax_grad(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows)
        throw dimension_error("softmax_grad: label count mismatch");
    Matrix g = softmax(logits);
    const double inv_n = 1.0 / static_cast<double>(logits.rows);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        g.at(i, static_cast<std::size_t>(labels[i])) -= 1.0;
        for (std::size_t a = 0; a < logits.cols; ++a) g.at(i, a) *= inv_n;
    }
    return g;
}

namespace {

double glorot_scale(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void init_uniform(Matrix& m, double scale, rng& gen) {
    for (auto& x : m.data) x = scale * (2.0 * gen.next_unit() - 1.0);
}

Matrix head_logits(const DenseHead& head, const Matrix& features) {
    const std::size_t n = features.rows;
    const std::size_t c = head.bias.size();
    Matrix logits(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        double* out = logits.row(i);
        for (std::size_t a = 0; a < c; ++a) out[a] = head.bias[a];
        const double* x = features.row(i);
        for (std::size_t j = 0; j < features.cols; ++j) {
            const double xj = x[j];
            if (xj == 0.0) continue;
            const double* w = head.weights.row(j);
            for (std::size_t a = 0; a < c; ++a) out[a] += xj * w[a];
        }
    }
    return logits;
}

std::size_t argmax_row(const double* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < n; ++a)
        if (row[a] > row[best]) best = a;
    return best;
}

}  // namespace

double head_accuracy(const DenseHead& head, const Matrix& features,
                     const std::vector<int>& labels) {
    const Matrix logits = head_logits(head, features);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows; ++i)
        if (argmax_row(logits.row(i), logits.cols) == static_cast<std::size_t>(labels[i]))
            ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(logits.rows);
}

HeadTrainResult train_head(const Matrix& train_features, const std::vector<int>& train_labels,
                           const Matrix& val_features, const std::vector<int>& val_labels,
                           int num_classes, const TrainConfig& cfg) {
    if (train_features.rows != train_labels.size())
        throw dimension_error("train_head: feature/label count mismatch");
    const std::size_t n = train_features.rows;
    const std::size_t d = train_features.cols;
    const std::size_t c = static_cast<std::size_t>(num_classes);

    DenseHead head;
    head.weights = Matrix(d, c);
    head.bias.assign(c, 0.0);
    rng gen(cfg.seed);
    const double scale = cfg.init_scale > 0.0 ? cfg.init_scale : glorot_scale(d, c);
    init_uniform(head.weights, scale, gen);

    HeadTrainResult result;
    result.best = head;
    result.best_val_acc = -1.0;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    Matrix dw(d, c);
    std::vector<double> db(c, 0.0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        fisher_yates(order, gen);
        double epoch_loss = 0.0;
        std::size_t epoch_hits = 0;

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            std::fill(dw.data.begin(), dw.data.end(), 0.0);
            std::fill(db.begin(), db.end(), 0.0);
            const double inv_b = 1.0 / static_cast<double>(b);

            for (std::size_t s = 0; s < b; ++s) {
                const std::size_t i = order[start + s];
                const double* x = train_features.row(i);
                std::vector<double> z(head.bias);
                for (std::size_t j = 0; j < d; ++j) {
                    const double xj = x[j];
                    if (xj == 0.0) continue;
                    const double* w = head.weights.row(j);
                    for (std::size_t a = 0; a < c; ++a) z[a] += xj * w[a];
                }
                double zmax = z[0];
                for (std::size_t a = 1; a < c; ++a) zmax = std::max(zmax, z[a]);
                double sum = 0.0;
                std::vector<double> p(c);
                for (std::size_t a = 0; a < c; ++a) {
                    p[a] = std::exp(z[a] - zmax);
                    sum += p[a];
                }
                const int y = train_labels[i];
                epoch_loss += std::log(sum) + zmax - z[y];
                if (argmax_row(z.data(), c) == static_cast<std::size_t>(y)) ++epoch_hits;

                for (std::size_t a = 0; a < c; ++a) {
                    double g = p[a] / sum;
                    if (a == static_cast<std::size_t>(y)) g -= 1.0;
                    g *= inv_b;
                    db[a] += g;
                    if (g == 0.0) continue;
                    for (std::size_t j = 0; j < d; ++j) dw.at(j, a) += g * x[j];
                }
            }

            const double lr = cfg.learning_rate;
            for (std::size_t k = 0; k < dw.size(); ++k) head.weights.data[k] -= lr * dw.data[k];
            for (std::size_t a = 0; a < c; ++a) head.bias[a] -= lr * db[a];
        }

        epoch_loss /= static_cast<double>(n);
        if (!std::isfinite(epoch_loss) || epoch_loss > 1e100)
            throw train_error("train_head: loss diverged at epoch " + std::to_string(epoch) +
                              " (loss=" + std::to_string(epoch_loss) + ")");

        EpochMetric m;
        m.epoch = epoch;
        m.train_loss = epoch_loss;
        m.train_acc = 100.0 * static_cast<double>(epoch_hits) / static_cast<double>(n);
        if (val_features.rows > 0) {
            const Matrix vl = head_logits(head, val_features);
            m.val_loss = cross_entropy_loss(vl, val_labels);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < vl.rows; ++i)
                if (argmax_row(vl.row(i), c) == static_cast<std::size_t>(val_labels[i])) ++hits;
            m.val_acc = 100.0 * static_cast<double>(hits) / static_cast<double>(vl.rows);
        } else {
            m.val_loss = 0.0;
            m.val_acc = 0.0;
        }
        result.metrics.push_back(m);

        if (m.val_acc > result.best_val_acc) {
            result.best_val_acc = m.val_acc;
            result.best_epoch = epoch;
            result.best = head;
        }
    }
    result.final = head;
    if (val_features.rows == 0) result.best = head;
    return result;
}

std::size_t ConvNetBaseline::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : convs) n += l.filters.size() + l.bias.size();
    n += head.weights.size() + head.bias.size();
    return n;
}

std::vector<double> ConvNetBaseline::layer_parameters(std::size_t layer) const {
    std::vector<double> out;
    if (layer < convs.size()) {
        out = convs[layer].filters.data;
        out.insert(out.end(), convs[layer].bias.begin(), convs[layer].bias.end());
    } else {
        out = head.weights.data;
        out.insert(out.end(), head.bias.begin(), head.bias.end());
    }
    return out;
}

ConvNetBaseline make_convnet(std::size_t in_channels, std::size_t in_h, std::size_t in_w,
                             const std::vector<std::size_t>& filter_counts, int num_classes,
                             std::uint64_t seed, double init_scale) {
    if (filter_counts.empty())
        throw dimension_error("make_convnet: need at least one conv layer");
    ConvNetBaseline net;
    rng gen(seed);
    std::size_t c = in_channels, h = in_h, w = in_w;
    for (std::size_t f : filter_counts) {
        constexpr std::size_t k = 3;
        if (h < k || w < k) throw dimension_error("make_convnet: map shrank below kernel");
        ConvLayer layer;
        layer.kernel = k;
        layer.filters = Matrix(f, c * k * k);
        layer.bias.assign(f, 0.0);
        const double scale =
            init_scale > 0.0 ? init_scale : glorot_scale(c * k * k, f * k * k);
        init_uniform(layer.filters, scale, gen);
        net.convs.push_back(std::move(layer));
        h = (h - k + 1) / 2;
        w = (w - k + 1) / 2;
        c = f;
    }
    const std::size_t d_head = c * h * w;
    if (d_head == 0) throw dimension_error("make_convnet: head input collapsed to zero");
    net.head.weights = Matrix(d_head, static_cast<std::size_t>(num_classes));
    net.head.bias.assign(static_cast<std::size_t>(num_classes), 0.0);
    const double scale = init_scale > 0.0
                             ? init_scale
                             : glorot_scale(d_head, static_cast<std::size_t>(num_classes));
    init_uniform(net.head.weights, scale, gen);
    return net;
}

namespace {

// Per-sample forward cache, buffers reused across samples.
struct LayerCache {
    PatchMatrix patches;
    Matrix pre;  // positions x filters
    std::size_t conv_h = 0, conv_w = 0;
    FeatureMap pooled;
    std::vector<std::uint32_t> argmax;
};

FeatureMap slice_sample(const FeatureMap& input, std::size_t i) {
    FeatureMap one(1, input.channels, input.height, input.width);
    const double* src = input.sample(i);
    std::copy(src, src + input.map_size(), one.values.begin());
    return one;
}

// Forward one sample through all conv blocks, filling caches; returns logits.
std::vector<double> forward_sample(const ConvNetBaseline& net, const FeatureMap& input,
                                   std::size_t sample, std::vector<LayerCache>& caches) {
    FeatureMap cur = slice_sample(input, sample);
    caches.resize(net.convs.size());
    for (std::size_t l = 0; l < net.convs.size(); ++l) {
        const ConvLayer& layer = net.convs[l];
        LayerCache& cache = caches[l];
        cache.patches = extract_patches(cur, {}, layer.kernel, 1);
        cache.conv_h = cur.height - layer.kernel + 1;
        cache.conv_w = cur.width - layer.kernel + 1;
        const std::size_t n_f = layer.filters.rows;
        cache.pre = Matrix(cache.patches.count, n_f);
        for (std::size_t p = 0; p < cache.patches.count; ++p) {
            const double* v = cache.patches.patch(p);
            double* out = cache.pre.row(p);
            for (std::size_t f = 0; f < n_f; ++f) {
                const double* w = layer.filters.row(f);
                double acc = layer.bias[f];
                for (std::size_t d = 0; d < cache.patches.dim; ++d) acc += w[d] * v[d];
                out[f] = acc;
            }
        }
        FeatureMap grid(1, n_f, cache.conv_h, cache.conv_w);
        for (std::size_t p = 0; p < cache.patches.count; ++p)
            for (std::size_t f = 0; f < n_f; ++f) {
                const double v = cache.pre.at(p, f);
                grid.values[f * cache.patches.count + p] = v > 0.0 ? v : 0.0;
            }
        PoolResult pooled = maxpool2(grid);
        cache.pooled = std::move(pooled.map);
        cache.argmax = std::move(pooled.argmax);
        cur = cache.pooled;
    }

    const std::vector<double>& flat = cur.values;
    if (flat.size() != net.head.weights.rows)
        throw dimension_error("convnet forward: head input size mismatch");
    std::vector<double> logits(net.head.bias);
    for (std::size_t j = 0; j < flat.size(); ++j) {
        const double xj = flat[j];
        if (xj == 0.0) continue;
        const double* w = net.head.weights.row(j);
        for (std::size_t a = 0; a < logits.size(); ++a) logits[a] += xj * w[a];
    }
    return logits;
}

// Backward one sample given dloss/dlogits; accumulates into grads.
void backward_sample(const ConvNetBaseline& net, const std::vector<LayerCache>& caches,
                     const std::vector<double>& dlogits, ConvNetGradients& grads) {
    const std::vector<double>& flat = caches.back().pooled.values;
    const std::size_t d_head = net.head.weights.rows;
    const std::size_t n_cls = net.head.bias.size();

    std::vector<double> dflat(d_head, 0.0);
    for (std::size_t j = 0; j < d_head; ++j) {
        const double xj = flat[j];
        const double* w = net.head.weights.row(j);
        double* gw = grads.head_weight_grad.row(j);
        double acc = 0.0;
        for (std::size_t a = 0; a < n_cls; ++a) {
            gw[a] += xj * dlogits[a];
            acc += w[a] * dlogits[a];
        }
        dflat[j] = acc;
    }
    for (std::size_t a = 0; a < n_cls; ++a) grads.head_bias_grad[a] += dlogits[a];

    // route gradient down through the conv blocks
    std::vector<double> dpooled = std::move(dflat);
    for (std::size_t li = net.convs.size(); li-- > 0;) {
        const ConvLayer& layer = net.convs[li];
        const LayerCache& cache = caches[li];
        const std::size_t n_f = layer.filters.rows;
        const std::size_t positions = cache.patches.count;

        // unpool: scatter each pooled gradient to its argmax position,
        // then mask by the relu derivative
        Matrix delta(positions, n_f);
        const std::size_t out_cells = cache.pooled.height * cache.pooled.width;
        for (std::size_t f = 0; f < n_f; ++f)
            for (std::size_t cell = 0; cell < out_cells; ++cell) {
                const double g = dpooled[f * out_cells + cell];
                if (g == 0.0) continue;
                const std::uint32_t flat_yx = cache.argmax[f * out_cells + cell];
                // argmax is y*conv_w + x within the pre-pool grid
                if (cache.pre.at(flat_yx, f) > 0.0) delta.at(flat_yx, f) += g;
            }

        for (std::size_t p = 0; p < positions; ++p) {
            const double* v = cache.patches.patch(p);
            const double* drow = delta.row(p);
            for (std::size_t f = 0; f < n_f; ++f) {
                const double df = drow[f];
                if (df == 0.0) continue;
                grads.bias_grads[li][f] += df;
                double* gw = grads.filter_grads[li].row(f);
                for (std::size_t d = 0; d < cache.patches.dim; ++d) gw[d] += df * v[d];
            }
        }

        if (li == 0) break;  // no trainable layer below the first conv
        const LayerCache& below = caches[li - 1];
        const std::size_t in_c = below.pooled.channels;
        const std::size_t in_h = below.pooled.height;
        const std::size_t in_w = below.pooled.width;
        std::vector<double> dinput(in_c * in_h * in_w, 0.0);
        const std::size_t k = layer.kernel;
        for (std::size_t p = 0; p < positions; ++p) {
            const double* drow = delta.row(p);
            const std::size_t oy = p / cache.conv_w;
            const std::size_t ox = p % cache.conv_w;
            for (std::size_t f = 0; f < n_f; ++f) {
                const double df = drow[f];
                if (df == 0.0) continue;
                const double* w = layer.filters.row(f);
                std::size_t d = 0;
                for (std::size_t c = 0; c < in_c; ++c)
                    for (std::size_t dy = 0; dy < k; ++dy)
                        for (std::size_t dx = 0; dx < k; ++dx)
                            dinput[(c * in_h + oy + dy) * in_w + ox + dx] += df * w[d++];
            }
        }
        dpooled = std::move(dinput);
    }
}

}  // namespace

Matrix convnet_logits(const ConvNetBaseline& net, const FeatureMap& input) {
    Matrix logits(input.count, net.head.bias.size());
    std::vector<LayerCache> caches;
    for (std::size_t i = 0; i < input.count; ++i) {
        const auto z = forward_sample(net, input, i, caches);
        std::copy(z.begin(), z.end(), logits.row(i));
    }
    return logits;
}

double convnet_accuracy(const ConvNetBaseline& net, const FeatureMap& input,
                        const std::vector<int>& labels) {
    const Matrix logits = convnet_logits(net, input);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows; ++i)
        if (argmax_row(logits.row(i), logits.cols) == static_cast<std::size_t>(labels[i]))
            ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(logits.rows);
}

ConvNetGradients convnet_gradients(const ConvNetBaseline& net, const FeatureMap& batch,
                                   const std::vector<int>& labels) {
    ConvNetGradients grads;
    grads.filter_grads.reserve(net.convs.size());
    for (const auto& l : net.convs) {
        grads.filter_grads.emplace_back(l.filters.rows, l.filters.cols);
        grads.bias_grads.emplace_back(l.bias.size(), 0.0);
    }
    grads.head_weight_grad = Matrix(net.head.weights.rows, net.head.weights.cols);
    grads.head_bias_grad.assign(net.head.bias.size(), 0.0);

    const double inv_b = 1.0 / static_cast<double>(batch.count);
    std::vector<LayerCache> caches;
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.count; ++i) {
        std::vector<double> z = forward_sample(net, batch, i, caches);
        double zmax = z[0];
        for (double v : z) zmax = std::max(zmax, v);
        double sum = 0.0;
        std::vector<double> p(z.size());
        for (std::size_t a = 0; a < z.size(); ++a) {
            p[a] = std::exp(z[a] - zmax);
            sum += p[a];
        }
        const int y = labels[i];
        loss += std::log(sum) + zmax - z[y];
        if (argmax_row(z.data(), z.size()) == static_cast<std::size_t>(y)) ++grads.correct;
        std::vector<double> dlogits(z.size());
        for (std::size_t a = 0; a < z.size(); ++a) {
            double g = p[a] / sum;
            if (a == static_cast<std::size_t>(y)) g -= 1.0;
            dlogits[a] = g * inv_b;
        }
        backward_sample(net, caches, dlogits, grads);
    }
    grads.mean_loss = loss * inv_b;
    return grads;
}

void apply_gradients(ConvNetBaseline& net, const ConvNetGradients& grads,
                     double learning_rate) {
    for (std::size_t l = 0; l < net.convs.size(); ++l) {
        for (std::size_t k = 0; k < net.convs[l].filters.size(); ++k)
            net.convs[l].filters.data[k] -= learning_rate * grads.filter_grads[l].data[k];
        for (std::size_t f = 0; f < net.convs[l].bias.size(); ++f)
            net.convs[l].bias[f] -= learning_rate * grads.bias_grads[l][f];
    }
    for (std::size_t k = 0; k < net.head.weights.size(); ++k)
        net.head.weights.data[k] -= learning_rate * grads.head_weight_grad.data[k];
    for (std::size_t a = 0; a < net.head.bias.size(); ++a)
        net.head.bias[a] -= learning_rate * grads.head_bias_grad[a];
}

void conv_backprop_step(ConvNetBaseline& net, const FeatureMap& batch,
                        const std::vector<int>& labels, double learning_rate) {
    apply_gradients(net, convnet_gradients(net, batch, labels), learning_rate);
}

ConvNetTrainResult train_convnet(const FeatureMap& train_input,
                                 const std::vector<int>& train_labels,
                                 const FeatureMap& val_input, const std::vector<int>& val_labels,
                                 int num_classes, const std::vector<std::size_t>& filter_counts,
                                 const TrainConfig& cfg) {
    if (train_input.count != train_labels.size())
        throw dimension_error("train_convnet: sample/label count mismatch");

    ConvNetBaseline net = make_convnet(train_input.channels, train_input.height,
                                       train_input.width, filter_counts, num_classes, cfg.seed,
                                       cfg.init_scale);
    ConvNetTrainResult result;
    result.best = net;
    result.best_val_acc = -1.0;

    const std::size_t n_layers = net.convs.size() + 1;
    auto snapshot = [&]() {
        std::vector<std::vector<double>> snap(n_layers);
        for (std::size_t l = 0; l < n_layers; ++l) snap[l] = net.layer_parameters(l);
        result.snapshots.push_back(std::move(snap));
    };
    if (cfg.record_snapshots) snapshot();

    rng gen(cfg.seed + 0x9e3779b9ULL);
    std::vector<std::size_t> order(train_input.count);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const std::size_t n = train_input.count;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        fisher_yates(order, gen);
        double epoch_loss = 0.0;
        std::size_t epoch_hits = 0;

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            FeatureMap minibatch(b, train_input.channels, train_input.height, train_input.width);
            std::vector<int> mb_labels(b);
            for (std::size_t s = 0; s < b; ++s) {
                const double* src = train_input.sample(order[start + s]);
                std::copy(src, src + train_input.map_size(), minibatch.sample(s));
                mb_labels[s] = train_labels[order[start + s]];
            }
            // pre-update loss/accuracy come out of the gradient pass itself
            const ConvNetGradients grads = convnet_gradients(net, minibatch, mb_labels);
            epoch_loss += grads.mean_loss * static_cast<double>(b);
            epoch_hits += grads.correct;
            apply_gradients(net, grads, cfg.learning_rate);
        }

        epoch_loss /= static_cast<double>(n);
        if (!std::isfinite(epoch_loss) || epoch_loss > 1e100)
            throw train_error("train_convnet: loss diverged at epoch " + std::to_string(epoch) +
                              " (loss=" + std::to_string(epoch_loss) + ")");

        EpochMetric m;
        m.epoch = epoch;
        m.train_loss = epoch_loss;
        m.train_acc = 100.0 * static_cast<double>(epoch_hits) / static_cast<double>(n);
        if (val_input.count > 0) {
            const Matrix vl = convnet_logits(net, val_input);
            m.val_loss = cross_entropy_loss(vl, val_labels);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < vl.rows; ++i)
                if (argmax_row(vl.row(i), vl.cols) == static_cast<std::size_t>(val_labels[i]))
                    ++hits;
            m.val_acc = 100.0 * static_cast<double>(hits) / static_cast<double>(vl.rows);
        } else {
            m.val_loss = 0.0;
            m.val_acc = 0.0;
        }
        result.metrics.push_back(m);
        if (cfg.record_snapshots) snapshot();

        if (m.val_acc > result.best_val_acc) {
            result.best_val_acc = m.val_acc;
            result.best_epoch = epoch;
            result.best = net;
        }
    }
    result.final = net;
    if (val_input.count == 0) result.best = net;
    return result;
}

}  // namespace dmn
