#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "graph.hpp"
#include "multiscale.hpp"

namespace dagnet {

enum class TrainMode { FineTune, Ots };

TrainMode train_mode_from_string(const std::string& s);  // "finetune" | "ots"
const char* train_mode_name(TrainMode mode);

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 32;
    int epochs = 10;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::FineTune;
    double weight_decay = 0.0;
    int jobs = 1;

    void validate() const;
};

// One elementwise classical-momentum update:
// velocity <- momentum * velocity - lr * grad; param <- param + velocity.
void sgd_step(Tensor& param, Tensor& velocity, const Tensor& grad, double learning_rate,
              double momentum);

struct EpochMetrics {
    int epoch = 0;             // 1-based
    double train_loss = 0.0;   // mean per-example loss seen during the epoch
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    // mean |grad| over the first Conv layer's weights: value at the epoch's
    // final minibatch, and the mean across all of the epoch's minibatches
    double grad_last = 0.0;
    double grad_epoch_mean = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
};

// SGD over the dataset's train split; validation is evaluated after each
// epoch. Deterministic given config.seed for any jobs count: the shuffle is
// seed-derived per epoch and per-example gradients are reduced in ascending
// example order. mode=Ots freezes everything except the score-head
// FullyConnected parameters.
TrainResult train(Graph& g, const Dataset& ds, const TrainConfig& config);

// rows: epoch, split, loss, accuracy, grad_mean_abs_layer1,
// grad_mean_abs_layer1_epoch_mean (gradient columns filled on train rows)
void write_metrics_csv(const TrainResult& result, const std::string& path);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::vector<double> per_class_accuracy;
    std::vector<std::vector<int>> confusion;  // [true][predicted]
};

// Prediction = argmax of the loss node's input scores, ties -> lower class.
EvalResult evaluate(const Graph& g, const Dataset& ds, const std::vector<int>& indices,
                    int jobs);
void write_eval_csv(const EvalResult& result, const std::string& path);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::uint32_t node_id = 0;
    std::string param_name;
    std::size_t flat_index = 0;
};

// Central finite differences of the loss against the analytic gradient for
// every parameter entry (a seed-derived subsample above `subsample_above`
// entries per tensor). Relative error denominator: max(|a|, |b|, 1e-6); the
// floor keeps roundoff on numerically-zero gradients out of the comparison.
GradCheckResult gradient_check(const Graph& g, const Tensor& input, int label, double step,
                               std::size_t subsample_above = 64, std::uint64_t seed = 0);

// Distance from the nearest piecewise-linear kink for this input: the minimum
// over every ReLU input magnitude and every MaxPool window's top-two margin.
// Finite differences are only trustworthy when this is well above the step.
double kink_margin(const Graph& g, const Tensor& input);

struct GradTraceResult {
    std::vector<double> chain;  // per-epoch mean |grad| at the first Conv weights
    std::vector<double> dag;
    std::vector<double> ratio;  // dag / chain
};

// Builds a single-scale chain and a multi-scale DAG from the same backbone
// and seed (identical backbone initialization), trains both identically, and
// reports the per-epoch first-Conv gradient magnitudes plus their ratio.
GradTraceResult grad_trace_experiment(const BackboneSpec& backbone, const TapSet& taps,
                                      const Dataset& ds, const TrainConfig& config);
void write_grad_trace_csv(const GradTraceResult& result, const std::string& path);

// lowest-id Conv node (the trace target); errors if the graph has none
std::uint32_t first_conv_id(const Graph& g);

}  // namespace dagnet
