#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "error.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace dagnet {

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "finetune") return TrainMode::FineTune;
    if (s == "ots") return TrainMode::Ots;
    fail(ErrorCode::Argument, "unknown training mode: " + s + " (expected finetune|ots)");
}

const char* train_mode_name(TrainMode mode) {
    return mode == TrainMode::FineTune ? "finetune" : "ots";
}

void TrainConfig::validate() const {
    // learning rate 0 is allowed: it must provably leave parameters unchanged
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::Argument,
            "learning rate must be finite and >= 0");
    require(momentum >= 0.0 && momentum < 1.0, ErrorCode::Argument,
            "momentum must be in [0, 1)");
    require(batch_size >= 1, ErrorCode::Argument, "batch size must be >= 1");
    require(epochs >= 1, ErrorCode::Argument, "epoch count must be >= 1");
    require(weight_decay >= 0.0, ErrorCode::Argument, "weight decay must be >= 0");
    require(jobs >= 1, ErrorCode::Argument, "jobs must be >= 1");
}

void sgd_step(Tensor& param, Tensor& velocity, const Tensor& grad, double learning_rate,
              double momentum) {
    require(param.shape == grad.shape && param.shape == velocity.shape, ErrorCode::Argument,
            "sgd_step shape mismatch");
    check_finite(grad, "sgd_step gradient");
    for (std::size_t i = 0; i < param.data.size(); ++i) {
        velocity.data[i] = momentum * velocity.data[i] - learning_rate * grad.data[i];
        param.data[i] += velocity.data[i];
    }
}

std::uint32_t first_conv_id(const Graph& g) {
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        if (g.node(id).kind == LayerKind::Conv) return id;
    }
    fail(ErrorCode::Argument, "graph has no Conv node to trace");
}

namespace {

struct ParamRef {
    std::uint32_t node;
    std::size_t param;
};

// every parameter, ascending by (node, param slot)
std::vector<ParamRef> all_params(const Graph& g) {
    std::vector<ParamRef> refs;
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        for (std::size_t p = 0; p < g.node(id).params.size(); ++p) refs.push_back({id, p});
    }
    return refs;
}

std::vector<ParamRef> trainable_params(const Graph& g, TrainMode mode) {
    if (mode == TrainMode::FineTune) return all_params(g);
    std::vector<ParamRef> refs;
    for (std::uint32_t id : head_fc_ids(g)) {
        for (std::size_t p = 0; p < g.node(id).params.size(); ++p) refs.push_back({id, p});
    }
    require(!refs.empty(), ErrorCode::Argument,
            "off-the-shelf mode found no score heads to train");
    return refs;
}

double mean_abs(const Tensor& t) {
    double sum = 0.0;
    for (double v : t.data) sum += std::abs(v);
    return t.data.empty() ? 0.0 : sum / static_cast<double>(t.data.size());
}

int argmax_class(const std::vector<double>& scores) {
    int best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k) {
        if (scores[k] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    }
    return best;
}

// per-example forward/backward products that the batch reduction consumes
struct ExampleGrads {
    double loss = 0.0;
    bool correct = false;
    std::vector<Tensor> grads;       // aligned with the trainable ParamRef list
    Tensor first_conv_grad;          // only filled when the graph has a Conv
};

bool lowest_conv(const Graph& g, std::uint32_t& id) {
    for (std::uint32_t i = 0; i < g.num_nodes(); ++i) {
        if (g.node(i).kind == LayerKind::Conv) {
            id = i;
            return true;
        }
    }
    return false;
}

}  // namespace

TrainResult train(Graph& g, const Dataset& ds, const TrainConfig& config) {
    config.validate();
    ds.validate();
    g.validate();
    require(g.has_loss(), ErrorCode::Argument, "training needs a SoftmaxLoss node");
    require(ds.num_classes == g.num_classes(), ErrorCode::Argument,
            "dataset class count does not match the model");
    require(!ds.train_idx.empty(), ErrorCode::Argument, "train split is empty");

    std::vector<ParamRef> trainable = trainable_params(g, config.mode);
    std::vector<Tensor> velocity;
    velocity.reserve(trainable.size());
    for (const ParamRef& ref : trainable) {
        velocity.push_back(Tensor::zeros(g.node(ref.node).params[ref.param].value.shape));
    }
    std::uint32_t trace_node = 0;
    bool traced = lowest_conv(g, trace_node);
    std::uint32_t score_node = g.node(g.loss_id()).parents[0];

    TrainResult result;
    std::vector<int> order = ds.train_idx;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(config.seed, 0x45504f00ull + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

        double loss_sum = 0.0;
        std::size_t correct = 0;
        double trace_sum = 0.0, trace_last = 0.0;
        std::size_t batches = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t count = std::min(order.size() - start,
                                         static_cast<std::size_t>(config.batch_size));
            std::vector<ExampleGrads> per_example(count);
            try {
                parallel_for(count, config.jobs, [&](std::size_t i) {
                    int example = order[start + i];
                    ExecContext ctx;
                    forward(g, ctx, ds.images[static_cast<std::size_t>(example)],
                            ds.labels[static_cast<std::size_t>(example)]);
                    backward(g, ctx);
                    ExampleGrads& out = per_example[i];
                    out.loss = ctx.loss;
                    out.correct = argmax_class(ctx.acts[score_node].data) ==
                                  ds.labels[static_cast<std::size_t>(example)];
                    out.grads.reserve(trainable.size());
                    for (const ParamRef& ref : trainable) {
                        out.grads.push_back(ctx.param_grads[ref.node][ref.param]);
                    }
                    if (traced) {
                        out.first_conv_grad = ctx.param_grads[trace_node][0];
                    }
                });
            } catch (const Error& e) {
                fail(e.code(), std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                   ", minibatch " + std::to_string(batches + 1) + ")");
            }

            // ascending example order keeps the reduction bit-identical for
            // any jobs count
            std::vector<Tensor> grad_sum;
            grad_sum.reserve(trainable.size());
            for (const Tensor& v : velocity) grad_sum.push_back(Tensor::zeros(v.shape));
            Tensor trace_grad =
                traced ? Tensor::zeros(per_example[0].first_conv_grad.shape) : Tensor{};
            for (std::size_t i = 0; i < count; ++i) {
                loss_sum += per_example[i].loss;
                if (per_example[i].correct) ++correct;
                for (std::size_t p = 0; p < trainable.size(); ++p) {
                    const Tensor& src = per_example[i].grads[p];
                    for (std::size_t j = 0; j < src.data.size(); ++j) {
                        grad_sum[p].data[j] += src.data[j];
                    }
                }
                if (traced) {
                    for (std::size_t j = 0; j < trace_grad.data.size(); ++j) {
                        trace_grad.data[j] += per_example[i].first_conv_grad.data[j];
                    }
                }
            }

            double inv = 1.0 / static_cast<double>(count);
            for (std::size_t p = 0; p < trainable.size(); ++p) {
                Tensor& param = g.node_mut(trainable[p].node).params[trainable[p].param].value;
                for (std::size_t j = 0; j < grad_sum[p].data.size(); ++j) {
                    grad_sum[p].data[j] =
                        grad_sum[p].data[j] * inv + config.weight_decay * param.data[j];
                }
                sgd_step(param, velocity[p], grad_sum[p], config.learning_rate, config.momentum);
            }
            if (traced) {
                for (double& v : trace_grad.data) v *= inv;
                trace_last = mean_abs(trace_grad);
                trace_sum += trace_last;
            }
            ++batches;
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.train_loss = loss_sum / static_cast<double>(order.size());
        metrics.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        if (!ds.val_idx.empty()) {
            EvalResult val = evaluate(g, ds, ds.val_idx, config.jobs);
            metrics.val_loss = val.mean_loss;
            metrics.val_accuracy = val.accuracy;
        }
        if (traced) {
            metrics.grad_last = trace_last;
            metrics.grad_epoch_mean = trace_sum / static_cast<double>(batches);
        }
        result.epochs.push_back(metrics);
    }
    return result;
}

void write_metrics_csv(const TrainResult& result, const std::string& path) {
    std::ofstream out(path);
    require(out.is_open(), ErrorCode::Io, "cannot open csv for writing: " + path);
    out.precision(17);
    out << "epoch,split,loss,accuracy,grad_mean_abs_layer1,grad_mean_abs_layer1_epoch_mean\n";
    for (const EpochMetrics& m : result.epochs) {
        out << m.epoch << ",train," << m.train_loss << "," << m.train_accuracy << ","
            << m.grad_last << "," << m.grad_epoch_mean << "\n";
        out << m.epoch << ",val," << m.val_loss << "," << m.val_accuracy << ",,\n";
    }
    require(out.good(), ErrorCode::Io, "failed writing csv: " + path);
}

EvalResult evaluate(const Graph& g, const Dataset& ds, const std::vector<int>& indices,
                    int jobs) {
    g.validate();
    require(g.has_loss(), ErrorCode::Argument, "evaluation needs a SoftmaxLoss node");
    require(!indices.empty(), ErrorCode::Argument, "evaluation split is empty");
    int num_classes = g.num_classes();
    require(ds.num_classes == num_classes, ErrorCode::Argument,
            "dataset class count does not match the model");
    std::uint32_t score_node = g.node(g.loss_id()).parents[0];

    std::vector<int> predictions(indices.size());
    std::vector<double> losses(indices.size());
    parallel_for(indices.size(), jobs, [&](std::size_t i) {
        int example = indices[i];
        require(example >= 0 && example < static_cast<int>(ds.images.size()),
                ErrorCode::Argument, "evaluation index out of range");
        ExecContext ctx;
        losses[i] = forward(g, ctx, ds.images[static_cast<std::size_t>(example)],
                            ds.labels[static_cast<std::size_t>(example)]);
        predictions[i] = argmax_class(ctx.acts[score_node].data);
    });

    EvalResult result;
    result.confusion.assign(static_cast<std::size_t>(num_classes),
                            std::vector<int>(static_cast<std::size_t>(num_classes), 0));
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        int truth = ds.labels[static_cast<std::size_t>(indices[i])];
        ++result.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predictions[i])];
        if (predictions[i] == truth) ++correct;
        loss_sum += losses[i];
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
    result.mean_loss = loss_sum / static_cast<double>(indices.size());
    for (int k = 0; k < num_classes; ++k) {
        const std::vector<int>& row = result.confusion[static_cast<std::size_t>(k)];
        int support = std::accumulate(row.begin(), row.end(), 0);
        result.per_class_accuracy.push_back(
            support == 0 ? 0.0
                         : static_cast<double>(row[static_cast<std::size_t>(k)]) / support);
    }
    return result;
}

void write_eval_csv(const EvalResult& result, const std::string& path) {
    std::ofstream out(path);
    require(out.is_open(), ErrorCode::Io, "cannot open csv for writing: " + path);
    out.precision(17);
    out << "class,accuracy";
    for (std::size_t k = 0; k < result.confusion.size(); ++k) out << ",predicted_" << k;
    out << "\n";
    for (std::size_t k = 0; k < result.confusion.size(); ++k) {
        out << k << "," << result.per_class_accuracy[k];
        for (int c : result.confusion[k]) out << "," << c;
        out << "\n";
    }
    require(out.good(), ErrorCode::Io, "failed writing csv: " + path);
}

GradCheckResult gradient_check(const Graph& g, const Tensor& input, int label, double step,
                               std::size_t subsample_above, std::uint64_t seed) {
    require(step > 0.0, ErrorCode::Argument, "finite-difference step must be > 0");
    Graph work = g;  // perturbations stay local to this copy

    ExecContext ctx;
    forward(work, ctx, input, label);
    backward(work, ctx);

    auto loss_at = [&](const char* where) {
        ExecContext probe_ctx;
        double loss = forward(work, probe_ctx, input, label);
        require(std::isfinite(loss), ErrorCode::Numeric,
                std::string("non-finite loss at ") + where + " perturbation");
        return loss;
    };

    GradCheckResult result;
    for (std::uint32_t id = 0; id < work.num_nodes(); ++id) {
        for (std::size_t p = 0; p < work.node(id).params.size(); ++p) {
            const Tensor& analytic = ctx.param_grads[id][p];
            std::size_t numel = analytic.data.size();
            std::vector<std::size_t> entries;
            if (numel <= subsample_above) {
                entries.resize(numel);
                std::iota(entries.begin(), entries.end(), 0);
            } else {
                Rng rng(mix_seed(seed, (static_cast<std::uint64_t>(id) << 8) + p));
                for (std::size_t k = 0; k < subsample_above; ++k) {
                    entries.push_back(static_cast<std::size_t>(
                        rng.uniform_int(0, static_cast<std::int64_t>(numel) - 1)));
                }
            }
            for (std::size_t j : entries) {
                double& w = work.node_mut(id).params[p].value.data[j];
                double saved = w;
                w = saved + step;
                double plus = loss_at("+");
                w = saved - step;
                double minus = loss_at("-");
                w = saved;
                double numeric = (plus - minus) / (2.0 * step);
                double a = analytic.data[j];
                // the 1e-6 denominator floor keeps near-zero gradients from
                // amplifying double-precision noise: central differences of a
                // loss of order 1 carry ~1e-11 of roundoff, so entries where
                // both sides are below the floor agree to absolute precision
                double rel = std::abs(a - numeric) /
                             std::max({std::abs(a), std::abs(numeric), 1e-6});
                if (rel > result.max_rel_error) {
                    result.max_rel_error = rel;
                    result.node_id = id;
                    result.param_name = work.node(id).params[p].name;
                    result.flat_index = j;
                }
            }
        }
    }
    return result;
}

double kink_margin(const Graph& g, const Tensor& input) {
    ExecContext ctx;
    forward(g, ctx, input);
    double margin = std::numeric_limits<double>::infinity();
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        const Node& node = g.node(id);
        if (node.kind == LayerKind::ReLU) {
            // an exactly-zero pre-activation only arises from upstream values
            // that are themselves clamped at zero (a zero bias plus a sum over
            // a clamped patch); weight and input perturbations leave it frozen
            // because every term keeps a zero factor. Only perturbing that
            // exact zero bias straddles the kink, so probes that difference
            // bias entries should use models with non-zero biases.
            for (double v : ctx.acts[node.parents[0]].data) {
                if (v != 0.0) margin = std::min(margin, std::abs(v));
            }
        } else if (node.kind == LayerKind::MaxPool) {
            const Tensor& in = ctx.acts[node.parents[0]];
            int h = in.shape[0], w = in.shape[1], c = in.shape[2];
            int window = node.hyper.window, stride = node.hyper.pool_stride;
            for (int oy = 0; oy + window <= h; oy += stride) {
                for (int ox = 0; ox + window <= w; ox += stride) {
                    for (int ch = 0; ch < c; ++ch) {
                        double top = -std::numeric_limits<double>::infinity();
                        double second = top;
                        for (int ky = 0; ky < window; ++ky) {
                            for (int kx = 0; kx < window; ++kx) {
                                double v = in.at3(oy + ky, ox + kx, ch);
                                if (v > top) {
                                    second = top;
                                    top = v;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                        }
                        // an exact tie means duplicated computation (clamped
                        // patches reduce to the same bias-only value), and the
                        // tied entries move in lockstep under perturbations;
                        // independent values tie exactly with probability zero
                        if (window > 1 && top != second) {
                            margin = std::min(margin, top - second);
                        }
                    }
                }
            }
        }
    }
    return margin;
}

GradTraceResult grad_trace_experiment(const BackboneSpec& backbone, const TapSet& taps,
                                      const Dataset& ds, const TrainConfig& config) {
    // same seed, same creation order over the shared backbone prefix =>
    // bit-identical backbone initialization in both models
    Graph chain = build_chain(backbone, ds.num_classes, normal_init(config.seed));
    Graph dag = build_multiscale(backbone, taps, ds.num_classes, normal_init(config.seed));

    TrainResult chain_run = train(chain, ds, config);
    TrainResult dag_run = train(dag, ds, config);

    GradTraceResult result;
    for (int e = 0; e < config.epochs; ++e) {
        double c = chain_run.epochs[static_cast<std::size_t>(e)].grad_epoch_mean;
        double d = dag_run.epochs[static_cast<std::size_t>(e)].grad_epoch_mean;
        require(c > 0.0, ErrorCode::Numeric, "chain gradient trace vanished entirely");
        result.chain.push_back(c);
        result.dag.push_back(d);
        result.ratio.push_back(d / c);
    }
    return result;
}

void write_grad_trace_csv(const GradTraceResult& result, const std::string& path) {
    std::ofstream out(path);
    require(out.is_open(), ErrorCode::Io, "cannot open csv for writing: " + path);
    out.precision(17);
    out << "epoch,chain_grad_mean_abs,dag_grad_mean_abs,ratio\n";
    for (std::size_t e = 0; e < result.ratio.size(); ++e) {
        out << (e + 1) << "," << result.chain[e] << "," << result.dag[e] << "," << result.ratio[e]
            << "\n";
    }
    require(out.good(), ErrorCode::Io, "failed writing csv: " + path);
}

}  // namespace dagnet
