#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "data.hpp"
#include "graph.hpp"
#include "multiscale.hpp"

namespace dagnet {

// Per-layer feature matrices for one dataset: pooled rows always, raw
// flattened rows optionally. Row order follows the dataset; train/val/test
// membership is carried as row index lists.
struct LayerFeatureBank {
    std::vector<int> layer_ids;  // backbone layer indices, ascending
    // [layer][row][dim]; pooled width = channel count, full width = H*W*C
    std::vector<std::vector<std::vector<double>>> pooled;
    std::vector<std::vector<std::vector<double>>> full;  // empty when not built
    std::vector<int> labels;
    int num_classes = 0;
    std::vector<int> train_rows, val_rows, test_rows;

    bool has_full() const { return !full.empty(); }
    std::size_t num_rows() const { return labels.size(); }
    void validate() const;
};

// Runs the graph over every image and records, per tap ReLU: the pooled
// feature (channel averages, L2-normalized) and optionally the full feature
// (flattened activation, L2-normalized). Pooling is applied here, so any
// graph with ReLU nodes works — branches are not required.
LayerFeatureBank build_feature_bank(const Graph& g, const TapSet& taps, const Dataset& ds,
                                    bool include_full, double epsilon, int jobs);

// Bank file format, magic "DAGBANK1"; see README for the layout.
void save_bank(const LayerFeatureBank& bank, const std::string& path);
LayerFeatureBank load_bank(const std::string& path);

// ---- linear probes ----
// Full-batch gradient descent on softmax cross entropy from zero weights: the
// problem is convex, so no random restarts are needed and results are
// deterministic for any worker count.
struct ProbeConfig {
    int iterations = 200;
    double learning_rate = 0.5;
};

struct LinearProbe {
    Tensor weights;  // D x K
    std::vector<double> bias;
};

LinearProbe train_linear_probe(const std::vector<const std::vector<double>*>& rows,
                               const std::vector<int>& labels, int num_classes,
                               const ProbeConfig& config);
// argmax score prediction, ties -> lower class id
int probe_predict(const LinearProbe& probe, const std::vector<double>& row);
double probe_accuracy(const LinearProbe& probe,
                      const std::vector<const std::vector<double>*>& rows,
                      const std::vector<int>& labels);

// ---- per-layer analyses ----

// Validation accuracy of a pooled-feature probe per layer (trained on the
// bank's train rows).
std::vector<double> per_layer_accuracy(const LayerFeatureBank& bank, const ProbeConfig& config);

struct PerClassBestLayer {
    // counts[k][n] = validation rows of class k that layer n's probe got right
    std::vector<std::vector<int>> counts;
    std::vector<int> best_layer;  // argmax per class, ties -> lower layer id
};
PerClassBestLayer per_class_best_layer(const LayerFeatureBank& bank, const ProbeConfig& config);

struct PooledVsFullRow {
    int layer;
    double pooled_train, pooled_val, full_train, full_val;
};
std::vector<PooledVsFullRow> pooled_vs_full(const LayerFeatureBank& bank,
                                            const ProbeConfig& config);

// ---- greedy forward selection ----

struct SelectionStep {
    int layer;
    double score;  // score of the subset after adding `layer`
};

struct SelectionTrace {
    std::vector<SelectionStep> steps;  // in selection order, scores strictly increasing
    std::vector<int> selected;         // final subset, ascending
    std::string stop_reason;           // "no_improvement" or "exhausted"
};

// Starts from the empty set (score 0); each round scores every remaining
// candidate appended to the current subset, takes the best (ties -> lower
// id), and stops when the best extension no longer strictly improves.
SelectionTrace forward_select(const std::vector<int>& candidates,
                              const std::function<double(const std::vector<int>&)>& scorer);

// subset -> validation accuracy of a probe on the concatenated pooled
// features; candidate evaluations within a round run on `jobs` workers
std::function<double(const std::vector<int>&)> make_subset_scorer(const LayerFeatureBank& bank,
                                                                  const ProbeConfig& config);
SelectionTrace forward_select_parallel(const std::vector<int>& candidates,
                                       const LayerFeatureBank& bank, const ProbeConfig& config,
                                       int jobs);

// ---- retrieval ----

struct RetrievalHit {
    int index;
    double distance;  // L2
};
// M nearest gallery rows, ascending distance, ties -> lower index
std::vector<RetrievalHit> retrieve_nearest(const std::vector<double>& query,
                                           const std::vector<std::vector<double>>& gallery,
                                           int m);

// ---- CSV emitters ----
void write_selection_csv(const SelectionTrace& trace, const std::string& path);
void write_per_layer_csv(const std::vector<int>& layer_ids, const std::vector<double>& accuracy,
                         const std::string& path);
void write_per_class_csv(const std::vector<int>& layer_ids, const PerClassBestLayer& result,
                         const std::string& path);
void write_pooled_vs_full_csv(const std::vector<PooledVsFullRow>& rows, const std::string& path);

}  // namespace dagnet
