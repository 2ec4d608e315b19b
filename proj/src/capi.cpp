#include "dagnet.h"

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "config.hpp"
#include "data.hpp"
#include "digest.hpp"
#include "error.hpp"
#include "graph.hpp"
#include "multiscale.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "select.hpp"
#include "train.hpp"

struct dagnet_model {
    dagnet::Graph graph;
};

struct dagnet_dataset {
    dagnet::Dataset ds;
};

namespace {

using dagnet::ErrorCode;

thread_local std::string g_last_error;

dagnet_status map_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::Argument: return DAGNET_ERR_ARGUMENT;
        case ErrorCode::Io: return DAGNET_ERR_IO;
        case ErrorCode::Format: return DAGNET_ERR_FORMAT;
        case ErrorCode::Numeric: return DAGNET_ERR_NUMERIC;
        case ErrorCode::Internal: return DAGNET_ERR_INTERNAL;
    }
    return DAGNET_ERR_INTERNAL;
}

template <typename Fn>
dagnet_status wrap(Fn&& fn) noexcept {
    try {
        fn();
        g_last_error.clear();
        return DAGNET_OK;
    } catch (const dagnet::Error& e) {
        g_last_error = e.what();
        return map_code(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return DAGNET_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return DAGNET_ERR_INTERNAL;
    }
}

void need(const void* p, const char* name) {
    dagnet::require(p != nullptr, ErrorCode::Argument,
                    std::string(name) + " must not be null");
}

char* copy_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

// "all" (every backbone ReLU) or a comma list of ReLU layer indices
dagnet::TapSet parse_taps(const std::string& spec, const dagnet::BackboneSpec& backbone) {
    if (spec.empty() || spec == "all") {
        return dagnet::TapSet::of(backbone.relu_indices());
    }
    return dagnet::TapSet::of(dagnet::parse_int_list(spec));
}

dagnet::Graph build_from_config(const std::string& config_text, const std::string& taps,
                                std::uint64_t seed, bool chain) {
    dagnet::Config cfg = dagnet::parse_config_text(config_text);
    dagnet::BackboneSpec backbone = dagnet::backbone_from_config(cfg);
    int classes = dagnet::classes_from_config(cfg);
    double epsilon = dagnet::l2n_epsilon_from_config(cfg);
    if (chain) {
        return dagnet::build_chain(backbone, classes, dagnet::normal_init(seed), epsilon);
    }
    return dagnet::build_multiscale(backbone, parse_taps(taps, backbone), classes,
                                    dagnet::normal_init(seed), epsilon);
}

int argmax_score(const std::vector<double>& scores) {
    int best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k) {
        if (scores[k] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    }
    return best;
}

// backbone layer indices of every ReLU node that carries a pooled head
std::vector<int> model_tap_indices(const dagnet::Graph& g) {
    std::vector<int> taps;
    auto edges = g.child_edges();
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        if (g.node(id).kind != dagnet::LayerKind::ReLU) continue;
        for (const dagnet::Edge& e : edges[id]) {
            if (g.node(e.child).kind == dagnet::LayerKind::GlobalAvgPool) {
                taps.push_back(static_cast<int>(id) - 1);
                break;
            }
        }
    }
    return taps;
}

std::string join_ints(const std::vector<int>& values) {
    std::ostringstream os;
    for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
    return os.str();
}

}  // namespace

extern "C" {

const char* dagnet_last_error(void) { return g_last_error.c_str(); }

void dagnet_string_free(char* s) { delete[] s; }

// ---------------------------------------------------------------------------
// datasets

dagnet_status dagnet_dataset_load(const char* prefix, dagnet_dataset** out) {
    return wrap([&] {
        need(prefix, "prefix");
        need(out, "out");
        auto handle = new dagnet_dataset{dagnet::load_dataset(prefix)};
        *out = handle;
    });
}

dagnet_status dagnet_dataset_save(const dagnet_dataset* ds, const char* prefix) {
    return wrap([&] {
        need(ds, "dataset");
        need(prefix, "prefix");
        dagnet::save_dataset(ds->ds, prefix);
    });
}

dagnet_status dagnet_dataset_gen_synth(const char* config_text, uint64_t seed,
                                       dagnet_dataset** out) {
    return wrap([&] {
        need(config_text, "config_text");
        need(out, "out");
        dagnet::Config cfg = dagnet::parse_config_text(config_text);
        dagnet::SynthTaskConfig sc = dagnet::synth_from_config(cfg);
        sc.seed = seed;
        *out = new dagnet_dataset{dagnet::apply_preprocess(dagnet::synth_multiscale(sc), cfg)};
    });
}

dagnet_status dagnet_dataset_info(const dagnet_dataset* ds, uint64_t* count, int32_t* classes,
                                  int32_t* height, int32_t* width) {
    return wrap([&] {
        need(ds, "dataset");
        if (count) *count = ds->ds.images.size();
        if (classes) *classes = ds->ds.num_classes;
        if (height) *height = ds->ds.images.empty() ? 0 : ds->ds.images[0].shape[0];
        if (width) *width = ds->ds.images.empty() ? 0 : ds->ds.images[0].shape[1];
    });
}

void dagnet_dataset_free(dagnet_dataset* ds) { delete ds; }

// ---------------------------------------------------------------------------
// models

dagnet_status dagnet_model_load(const char* path, dagnet_model** out) {
    return wrap([&] {
        need(path, "path");
        need(out, "out");
        *out = new dagnet_model{dagnet::load_model(path)};
    });
}

dagnet_status dagnet_model_save(const dagnet_model* m, const char* path) {
    return wrap([&] {
        need(m, "model");
        need(path, "path");
        dagnet::save_model(m->graph, path);
    });
}

dagnet_status dagnet_model_build(const char* config_text, const char* taps, uint64_t seed,
                                 dagnet_model** out) {
    return wrap([&] {
        need(config_text, "config_text");
        need(out, "out");
        std::string tap_spec = taps ? taps : "all";
        *out = new dagnet_model{build_from_config(config_text, tap_spec, seed, false)};
    });
}

dagnet_status dagnet_model_build_chain(const char* config_text, uint64_t seed,
                                       dagnet_model** out) {
    return wrap([&] {
        need(config_text, "config_text");
        need(out, "out");
        *out = new dagnet_model{build_from_config(config_text, "", seed, true)};
    });
}

dagnet_status dagnet_model_info(const dagnet_model* m, uint32_t* nodes, int32_t* classes) {
    return wrap([&] {
        need(m, "model");
        if (nodes) *nodes = static_cast<uint32_t>(m->graph.num_nodes());
        if (classes) *classes = m->graph.has_loss() ? m->graph.num_classes() : 0;
    });
}

dagnet_status dagnet_model_taps(const dagnet_model* m, char** out) {
    return wrap([&] {
        need(m, "model");
        need(out, "out");
        *out = copy_string(join_ints(model_tap_indices(m->graph)));
    });
}

dagnet_status dagnet_model_predict(const dagnet_model* m, const double* image, size_t len,
                                   int32_t* predicted, double* scores) {
    return wrap([&] {
        need(m, "model");
        need(image, "image");
        need(predicted, "predicted");
        const dagnet::Graph& g = m->graph;
        const dagnet::Shape& in_shape = g.output_shape(g.input_id());
        dagnet::require(len == in_shape.numel(), ErrorCode::Argument,
                        "image length does not match the model input shape");
        dagnet::Tensor input = dagnet::Tensor::from(
            in_shape, std::vector<double>(image, image + len));
        dagnet::ExecContext ctx;
        dagnet::forward(g, ctx, input);
        std::uint32_t score_node = g.node(g.loss_id()).parents[0];
        const std::vector<double>& s = ctx.acts[score_node].data;
        *predicted = argmax_score(s);
        if (scores) std::memcpy(scores, s.data(), s.size() * sizeof(double));
    });
}

void dagnet_model_free(dagnet_model* m) { delete m; }

// ---------------------------------------------------------------------------
// workflows

dagnet_status dagnet_train_run(dagnet_model* m, const dagnet_dataset* ds,
                               const char* config_text, const char* mode, uint64_t seed,
                               int32_t jobs, const char* metrics_csv) {
    return wrap([&] {
        need(m, "model");
        need(ds, "dataset");
        need(config_text, "config_text");
        need(metrics_csv, "metrics_csv");
        dagnet::Config cfg = dagnet::parse_config_text(config_text);
        dagnet::TrainConfig tc = dagnet::train_config_from_config(cfg);
        tc.mode = dagnet::train_mode_from_string(mode ? mode : "finetune");
        tc.seed = seed;
        tc.jobs = jobs;
        dagnet::TrainResult result = dagnet::train(m->graph, ds->ds, tc);
        dagnet::write_metrics_csv(result, metrics_csv);
    });
}

dagnet_status dagnet_eval_run(const dagnet_model* m, const dagnet_dataset* ds,
                              const char* split, int32_t jobs, const char* report_csv,
                              double* accuracy) {
    return wrap([&] {
        need(m, "model");
        need(ds, "dataset");
        need(split, "split");
        dagnet::EvalResult result =
            dagnet::evaluate(m->graph, ds->ds, ds->ds.split(split), jobs);
        if (report_csv) dagnet::write_eval_csv(result, report_csv);
        if (accuracy) *accuracy = result.accuracy;
    });
}

dagnet_status dagnet_select_run(const char* config_text, const dagnet_dataset* ds,
                                const char* model_path, uint64_t seed, int32_t jobs,
                                const char* out_prefix, char** selected_taps) {
    return wrap([&] {
        need(config_text, "config_text");
        need(ds, "dataset");
        need(out_prefix, "out_prefix");
        dagnet::Config cfg = dagnet::parse_config_text(config_text);
        dagnet::BackboneSpec backbone = dagnet::backbone_from_config(cfg);
        double epsilon = dagnet::l2n_epsilon_from_config(cfg);
        dagnet::ProbeConfig probe = dagnet::probe_from_config(cfg);

        dagnet::Graph graph;
        if (model_path) {
            graph = dagnet::load_model(model_path);
        } else {
            graph = build_from_config(config_text, "all", seed, false);
        }

        dagnet::TapSet candidates = dagnet::TapSet::of(backbone.relu_indices());
        dagnet::LayerFeatureBank bank =
            dagnet::build_feature_bank(graph, candidates, ds->ds, true, epsilon, jobs);

        std::string prefix = out_prefix;
        dagnet::save_bank(bank, prefix + "-bank.dagbank");
        std::vector<double> layer_acc = dagnet::per_layer_accuracy(bank, probe);
        dagnet::write_per_layer_csv(bank.layer_ids, layer_acc, prefix + "-layers.csv");
        dagnet::PerClassBestLayer per_class = dagnet::per_class_best_layer(bank, probe);
        dagnet::write_per_class_csv(bank.layer_ids, per_class, prefix + "-classes.csv");
        std::vector<dagnet::PooledVsFullRow> pf = dagnet::pooled_vs_full(bank, probe);
        dagnet::write_pooled_vs_full_csv(pf, prefix + "-pooled-vs-full.csv");
        dagnet::SelectionTrace trace =
            dagnet::forward_select_parallel(candidates.indices, bank, probe, jobs);
        dagnet::write_selection_csv(trace, prefix + "-selection.csv");

        if (selected_taps) *selected_taps = copy_string(join_ints(trace.selected));
    });
}

dagnet_status dagnet_diagnose_run(const char* config_text, const dagnet_dataset* ds,
                                  const char* taps, uint64_t seed, int32_t jobs,
                                  const char* out_csv) {
    return wrap([&] {
        need(config_text, "config_text");
        need(ds, "dataset");
        need(out_csv, "out_csv");
        dagnet::Config cfg = dagnet::parse_config_text(config_text);
        dagnet::TrainConfig tc = dagnet::train_config_from_config(cfg);
        tc.seed = seed;
        tc.jobs = jobs;
        std::string tap_spec = taps ? taps : "all";

        std::ostringstream csv;
        csv.precision(17);
        csv << "arch,mode,train_accuracy,val_accuracy,test_accuracy\n";
        for (const char* arch : {"chain", "dag"}) {
            for (dagnet::TrainMode mode : {dagnet::TrainMode::Ots, dagnet::TrainMode::FineTune}) {
                dagnet::Graph g = build_from_config(config_text, tap_spec, seed,
                                                    std::string(arch) == "chain");
                dagnet::TrainConfig cell = tc;
                cell.mode = mode;
                dagnet::TrainResult run = dagnet::train(g, ds->ds, cell);
                dagnet::EvalResult train_eval =
                    dagnet::evaluate(g, ds->ds, ds->ds.train_idx, jobs);
                dagnet::EvalResult test_eval = dagnet::evaluate(g, ds->ds, ds->ds.test_idx, jobs);
                csv << arch << "," << dagnet::train_mode_name(mode) << ","
                    << train_eval.accuracy << "," << run.epochs.back().val_accuracy << ","
                    << test_eval.accuracy << "\n";
            }
        }
        std::ofstream out(out_csv);
        dagnet::require(out.is_open(), ErrorCode::Io,
                        std::string("cannot open csv for writing: ") + out_csv);
        out << csv.str();
        dagnet::require(out.good(), ErrorCode::Io,
                        std::string("failed writing csv: ") + out_csv);
    });
}

dagnet_status dagnet_gradcheck_run(const char* config_text, const char* taps, uint64_t seed,
                                   double step, double* max_rel_error, char** worst) {
    return wrap([&] {
        need(config_text, "config_text");
        need(max_rel_error, "max_rel_error");
        dagnet::Graph g = build_from_config(config_text, taps ? taps : "all", seed, false);
        const dagnet::Shape& in_shape = g.output_shape(g.input_id());

        // finite differences are meaningless next to a ReLU/MaxPool kink, so
        // redraw the probe input until every kink is comfortably far away
        dagnet::Tensor input;
        int label = 0;
        bool clean = false;
        for (std::uint64_t attempt = 0; attempt < 32 && !clean; ++attempt) {
            dagnet::Rng rng(dagnet::mix_seed(seed, 0x696e7000ull + attempt));
            input = dagnet::Tensor::zeros(in_shape);
            for (double& v : input.data) v = rng.uniform(-1.0, 1.0);
            label = static_cast<int>(rng.uniform_int(0, g.num_classes() - 1));
            clean = dagnet::kink_margin(g, input) > 1e-4;
        }
        dagnet::require(clean, ErrorCode::Numeric,
                        "could not find a kink-free probe input for this seed");

        dagnet::GradCheckResult result = dagnet::gradient_check(g, input, label, step, 64, seed);
        *max_rel_error = result.max_rel_error;
        if (worst) {
            std::ostringstream os;
            os << "node " << result.node_id << " ("
               << dagnet::layer_kind_name(g.node(result.node_id).kind) << ") "
               << result.param_name << "[" << result.flat_index << "]";
            *worst = copy_string(os.str());
        }
    });
}

dagnet_status dagnet_gradtrace_run(const char* config_text, const dagnet_dataset* ds,
                                   const char* taps, uint64_t seed, int32_t jobs,
                                   const char* out_csv) {
    return wrap([&] {
        need(config_text, "config_text");
        need(ds, "dataset");
        need(out_csv, "out_csv");
        dagnet::Config cfg = dagnet::parse_config_text(config_text);
        dagnet::BackboneSpec backbone = dagnet::backbone_from_config(cfg);
        dagnet::TrainConfig tc = dagnet::train_config_from_config(cfg);
        tc.seed = seed;
        tc.jobs = jobs;
        dagnet::GradTraceResult result = dagnet::grad_trace_experiment(
            backbone, parse_taps(taps ? taps : "all", backbone), ds->ds, tc);
        dagnet::write_grad_trace_csv(result, out_csv);
    });
}

dagnet_status dagnet_retrieve_run(const dagnet_model* m, const dagnet_dataset* ds,
                                  const char* split, int32_t layer, int32_t query_index,
                                  int32_t count, int32_t jobs, char** result_csv) {
    return wrap([&] {
        need(m, "model");
        need(ds, "dataset");
        need(split, "split");
        need(result_csv, "result_csv");
        const dagnet::Graph& g = m->graph;
        std::uint32_t relu_id = dagnet::backbone_node_id(layer);
        dagnet::require(layer >= 0 && relu_id < g.num_nodes() &&
                            g.node(relu_id).kind == dagnet::LayerKind::ReLU,
                        ErrorCode::Argument,
                        "layer " + std::to_string(layer) + " is not a ReLU tap candidate");
        const std::vector<int>& gallery_ids = ds->ds.split(split);
        dagnet::require(!gallery_ids.empty(), ErrorCode::Argument,
                        "gallery split is empty: " + std::string(split));
        dagnet::require(query_index >= 0 &&
                            query_index < static_cast<int>(gallery_ids.size()),
                        ErrorCode::Argument, "query index outside the gallery");

        std::vector<std::vector<double>> gallery(gallery_ids.size());
        dagnet::parallel_for(gallery_ids.size(), jobs, [&](std::size_t i) {
            dagnet::ExecContext ctx;
            dagnet::forward(g, ctx,
                            ds->ds.images[static_cast<std::size_t>(gallery_ids[i])]);
            gallery[i] =
                dagnet::l2_normalize(dagnet::global_avg_pool(ctx.acts[relu_id]).data, 1e-12);
        });
        std::vector<dagnet::RetrievalHit> hits = dagnet::retrieve_nearest(
            gallery[static_cast<std::size_t>(query_index)], gallery, count);

        std::ostringstream os;
        os.precision(17);
        os << "layer,rank,gallery_index,distance\n";
        for (std::size_t r = 0; r < hits.size(); ++r) {
            os << layer << "," << (r + 1) << "," << hits[r].index << "," << hits[r].distance
               << "\n";
        }
        *result_csv = copy_string(os.str());
    });
}

// ---------------------------------------------------------------------------
// support

dagnet_status dagnet_config_resolve(const char* config_text, char** canonical) {
    return wrap([&] {
        need(config_text, "config_text");
        need(canonical, "canonical");
        *canonical = copy_string(dagnet::parse_config_text(config_text).serialize());
    });
}

dagnet_status dagnet_file_digest(const char* path, uint64_t* digest) {
    return wrap([&] {
        need(path, "path");
        need(digest, "digest");
        *digest = dagnet::file_digest(path);
    });
}

}  // extern "C"
