#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmn/matrix.hpp"
#include "dmn/patches.hpp"

namespace dmn {

struct TrainConfig {
    double learning_rate = 0.05;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
    double init_scale = 0.0;  // 0 -> Glorot uniform sqrt(6/(fan_in+fan_out))
    bool record_snapshots = false;
};

struct EpochMetric {
    std::size_t epoch;
    double train_loss;
    double train_acc;
    double val_loss;
    double val_acc;
};

// Softmax classification head. Weights d_in x C, bias C.
struct DenseHead {
    Matrix weights;
    std::vector<double> bias;
};

// Mean categorical cross-entropy of logits against integer labels, softmax
// computed with max-shifted exponentials.
double cross_entropy_loss(const Matrix& logits, const std::vector<int>& labels);

// d(loss)/d(logits) = (softmax - onehot) / N
Matrix softmax_grad(const Matrix& logits, const std::vector<int>& labels);

Matrix softmax(const Matrix& logits);

struct HeadTrainResult {
    DenseHead best;   // highest validation accuracy seen
    DenseHead final;  // parameters after the last epoch
    std::vector<EpochMetric> metrics;
    double best_val_acc = 0.0;
    std::size_t best_epoch = 0;
};

// Minibatch SGD on the head alone. Deterministic per seed (single-threaded,
// fixed shuffle and accumulation order). Aborts with train_error if the loss
// turns non-finite.
HeadTrainResult train_head(const Matrix& train_features, const std::vector<int>& train_labels,
                           const Matrix& val_features, const std::vector<int>& val_labels,
                           int num_classes, const TrainConfig& cfg);

double head_accuracy(const DenseHead& head, const Matrix& features,
                     const std::vector<int>& labels);

// Backprop ConvNet baseline: (conv k=3, relu, maxpool2) x L plus a dense
// softmax head.
struct ConvLayer {
    Matrix filters;  // F x (C_in * k * k)
    std::vector<double> bias;
    std::size_t kernel = 3;
};

struct ConvNetBaseline {
    std::vector<ConvLayer> convs;
    DenseHead head;

    std::size_t parameter_count() const;
    // flattened parameters of one layer (convs first, head == convs.size())
    std::vector<double> layer_parameters(std::size_t layer) const;
};

struct ConvNetGradients {
    std::vector<Matrix> filter_grads;
    std::vector<std::vector<double>> bias_grads;
    Matrix head_weight_grad;
    std::vector<double> head_bias_grad;
    double mean_loss = 0.0;    // of the forward pass the gradients came from
    std::size_t correct = 0;
};

void apply_gradients(ConvNetBaseline& net, const ConvNetGradients& grads, double learning_rate);

ConvNetBaseline make_convnet(std::size_t in_channels, std::size_t in_h, std::size_t in_w,
                             const std::vector<std::size_t>& filter_counts, int num_classes,
                             std::uint64_t seed, double init_scale = 0.0);

// Forward pass over a set of samples; returns logits and the mean loss.
Matrix convnet_logits(const ConvNetBaseline& net, const FeatureMap& input);
double convnet_accuracy(const ConvNetBaseline& net, const FeatureMap& input,
                        const std::vector<int>& labels);

// Gradients of the mean cross-entropy over the minibatch, via the backprop
// chain (relu masks and pooling argmax routing included).
ConvNetGradients convnet_gradients(const ConvNetBaseline& net, const FeatureMap& batch,
                                   const std::vector<int>& labels);

// One SGD step: net -= lr * grad(minibatch).
void conv_backprop_step(ConvNetBaseline& net, const FeatureMap& batch,
                        const std::vector<int>& labels, double learning_rate);

struct ConvNetTrainResult {
    ConvNetBaseline best;
    ConvNetBaseline final;
    std::vector<EpochMetric> metrics;
    double best_val_acc = 0.0;
    std::size_t best_epoch = 0;
    // snapshots[epoch][layer] = flattened parameters, recorded when
    // cfg.record_snapshots is set (epoch 0 = initialization).
    std::vector<std::vector<std::vector<double>>> snapshots;
};

ConvNetTrainResult train_convnet(const FeatureMap& train_input,
                                 const std::vector<int>& train_labels,
                                 const FeatureMap& val_input, const std::vector<int>& val_labels,
                                 int num_classes, const std::vector<std::size_t>& filter_counts,
                                 const TrainConfig& cfg);

}  // namespace dmn
