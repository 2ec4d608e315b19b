#pragma once

#include <cstdint>
#include <vector>

#include "graph.hpp"
#include "rng.hpp"

namespace dagnet {

// One backbone stage; only Conv, ReLU and MaxPool are legal here.
struct BackboneLayer {
    LayerKind kind;
    Hyper hyper;
};

// A chain of Conv/ReLU/MaxPool stages. Layer indices are 0-based positions in
// `layers`; when built into a Graph, layer i becomes node i + 1 (node 0 is the
// Input).
struct BackboneSpec {
    int in_h = 0, in_w = 0, in_c = 0;
    std::vector<BackboneLayer> layers;

    // Checks kinds, that at least one ReLU exists, and that every Conv is
    // followed by a ReLU before the next Conv begins.
    void validate() const;
    std::vector<int> relu_indices() const;  // candidate tap layers
};

// Backbone ReLU indices whose activations feed multi-scale branches. Stored
// ascending; that is also the concatenation order of pooled features.
struct TapSet {
    std::vector<int> indices;

    static TapSet of(std::vector<int> indices);  // sorts and checks duplicates
    void validate(const BackboneSpec& backbone) const;
};

// Node id of backbone layer `index` in a graph built by the functions below.
inline std::uint32_t backbone_node_id(int index) {
    return static_cast<std::uint32_t>(index + 1);
}

// Sequential initializer: rank-4 weights ~ N(0, sqrt(2/fan_in)), rank-2 head
// weights ~ N(0, 0.01), biases stay zero. Draws depend only on creation
// order, so two architectures sharing a backbone prefix and seed start from
// identical backbone weights.
ParamInit normal_init(std::uint64_t seed);

// Backbone chain, then per tap (ascending): GlobalAvgPool -> L2Normalize ->
// FullyConnected[K]; all head outputs meet in a single Add feeding
// SoftmaxLoss.
Graph build_multiscale(const BackboneSpec& backbone, const TapSet& taps, int num_classes,
                       const ParamInit& init, double l2n_epsilon = 1e-12);

// Plain single-scale baseline: backbone, pooled head at the final ReLU,
// FullyConnected straight into SoftmaxLoss (no Add).
Graph build_chain(const BackboneSpec& backbone, int num_classes, const ParamInit& init,
                  double l2n_epsilon = 1e-12);

// Concatenation, in ascending tap order, of each tap's post-L2Normalize
// pooled vector; requires a completed forward pass on ctx.
std::vector<double> multiscale_feature(const Graph& g, const ExecContext& ctx,
                                       const TapSet& taps);

// The L2Normalize node of the pooled branch hanging off `tap` (a backbone
// layer index); errors if that branch is absent.
std::uint32_t tap_normalize_id(const Graph& g, int tap);

// FullyConnected nodes feeding Add or SoftmaxLoss — the score heads, and the
// only parameters trained in off-the-shelf mode.
std::vector<std::uint32_t> head_fc_ids(const Graph& g);

}  // namespace dagnet
