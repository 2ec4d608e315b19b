#include "multiscale.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "error.hpp"

namespace dagnet {

void BackboneSpec::validate() const {
    require(in_h >= 1 && in_w >= 1 && in_c >= 1, ErrorCode::Argument,
            "backbone input dimensions must be positive");
    require(!layers.empty(), ErrorCode::Argument, "backbone has no layers");
    bool conv_open = false;  // a Conv not yet followed by a ReLU
    bool any_relu = false;
    for (const BackboneLayer& layer : layers) {
        switch (layer.kind) {
            case LayerKind::Conv:
                require(!conv_open, ErrorCode::Argument,
                        "every Conv must be followed by a ReLU before the next Conv");
                conv_open = true;
                break;
            case LayerKind::ReLU:
                conv_open = false;
                any_relu = true;
                break;
            case LayerKind::MaxPool:
                break;
            default:
                fail(ErrorCode::Argument, std::string("backbone layers may only be "
                                                      "Conv/ReLU/MaxPool, got ") +
                                              layer_kind_name(layer.kind));
        }
    }
    require(!conv_open, ErrorCode::Argument, "trailing Conv has no ReLU after it");
    require(any_relu, ErrorCode::Argument, "backbone needs at least one ReLU");
}

std::vector<int> BackboneSpec::relu_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::ReLU) out.push_back(static_cast<int>(i));
    }
    return out;
}

TapSet TapSet::of(std::vector<int> indices) {
    std::sort(indices.begin(), indices.end());
    require(std::adjacent_find(indices.begin(), indices.end()) == indices.end(),
            ErrorCode::Argument, "duplicate tap index");
    return TapSet{std::move(indices)};
}

void TapSet::validate(const BackboneSpec& backbone) const {
    require(!indices.empty(), ErrorCode::Argument, "tap set is empty");
    require(std::is_sorted(indices.begin(), indices.end()), ErrorCode::Argument,
            "tap indices must be ascending");
    require(std::adjacent_find(indices.begin(), indices.end()) == indices.end(),
            ErrorCode::Argument, "duplicate tap index");
    for (int t : indices) {
        require(t >= 0 && t < static_cast<int>(backbone.layers.size()), ErrorCode::Argument,
                "tap index " + std::to_string(t) + " is out of backbone range");
        require(backbone.layers[static_cast<std::size_t>(t)].kind == LayerKind::ReLU,
                ErrorCode::Argument, "tap index " + std::to_string(t) + " is not a ReLU layer");
    }
}

ParamInit normal_init(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(mix_seed(seed, 0x70617261));  // "para"
    return [rng](const std::string& name, Tensor& value) {
        if (name != "weights") return;  // biases stay zero
        double stddev;
        if (value.shape.rank() == 4) {
            double fan_in = static_cast<double>(value.shape[0]) * value.shape[1] * value.shape[2];
            stddev = std::sqrt(2.0 / fan_in);
        } else {
            stddev = 0.01;  // score heads start near zero
        }
        for (double& v : value.data) v = rng->normal(0.0, stddev);
    };
}

namespace {

// Adds Input + all backbone layers; returns the node id of the last layer.
std::uint32_t add_backbone(Graph& g, const BackboneSpec& backbone, const ParamInit& init) {
    Hyper in_hyper;
    in_hyper.in_h = backbone.in_h;
    in_hyper.in_w = backbone.in_w;
    in_hyper.in_c = backbone.in_c;
    std::uint32_t prev = g.add_node(LayerKind::Input, {}, in_hyper);
    for (const BackboneLayer& layer : backbone.layers) {
        prev = g.add_node(layer.kind, {prev}, layer.hyper, init);
    }
    return prev;
}

// GlobalAvgPool -> L2Normalize -> FullyConnected[K] hanging off `from`.
std::uint32_t add_pooled_head(Graph& g, std::uint32_t from, int num_classes,
                              const ParamInit& init, double l2n_epsilon) {
    std::uint32_t gap = g.add_node(LayerKind::GlobalAvgPool, {from});
    Hyper l2n_hyper;
    l2n_hyper.epsilon = l2n_epsilon;
    std::uint32_t l2n = g.add_node(LayerKind::L2Normalize, {gap}, l2n_hyper);
    Hyper fc_hyper;
    fc_hyper.units = num_classes;
    return g.add_node(LayerKind::FullyConnected, {l2n}, fc_hyper, init);
}

}  // namespace

Graph build_multiscale(const BackboneSpec& backbone, const TapSet& taps, int num_classes,
                       const ParamInit& init, double l2n_epsilon) {
    backbone.validate();
    taps.validate(backbone);
    require(num_classes >= 2, ErrorCode::Argument, "need at least two classes");

    Graph g;
    add_backbone(g, backbone, init);
    std::vector<std::uint32_t> heads;
    heads.reserve(taps.indices.size());
    for (int t : taps.indices) {
        heads.push_back(add_pooled_head(g, backbone_node_id(t), num_classes, init, l2n_epsilon));
    }
    std::uint32_t sum = g.add_node(LayerKind::Add, heads);
    g.add_node(LayerKind::SoftmaxLoss, {sum});
    g.validate();
    return g;
}

Graph build_chain(const BackboneSpec& backbone, int num_classes, const ParamInit& init,
                  double l2n_epsilon) {
    backbone.validate();
    require(num_classes >= 2, ErrorCode::Argument, "need at least two classes");

    Graph g;
    add_backbone(g, backbone, init);
    int last_relu = backbone.relu_indices().back();
    std::uint32_t head =
        add_pooled_head(g, backbone_node_id(last_relu), num_classes, init, l2n_epsilon);
    g.add_node(LayerKind::SoftmaxLoss, {head});
    g.validate();
    return g;
}

std::uint32_t tap_normalize_id(const Graph& g, int tap) {
    std::uint32_t relu_id = backbone_node_id(tap);
    require(relu_id < g.num_nodes() && g.node(relu_id).kind == LayerKind::ReLU,
            ErrorCode::Argument, "tap index " + std::to_string(tap) + " is not a ReLU node");
    std::vector<std::vector<Edge>> edges = g.child_edges();
    for (const Edge& e : edges[relu_id]) {
        if (g.node(e.child).kind != LayerKind::GlobalAvgPool) continue;
        for (const Edge& e2 : edges[e.child]) {
            if (g.node(e2.child).kind == LayerKind::L2Normalize) return e2.child;
        }
    }
    fail(ErrorCode::Argument,
         "tap index " + std::to_string(tap) + " has no pooled multi-scale branch");
}

std::vector<double> multiscale_feature(const Graph& g, const ExecContext& ctx,
                                       const TapSet& taps) {
    require(ctx.forward_done, ErrorCode::Argument,
            "multiscale_feature requires a completed forward pass");
    require(!taps.indices.empty(), ErrorCode::Argument, "tap set is empty");
    std::vector<double> feature;
    for (int t : taps.indices) {
        const Tensor& seg = ctx.acts[tap_normalize_id(g, t)];
        feature.insert(feature.end(), seg.data.begin(), seg.data.end());
    }
    return feature;
}

std::vector<std::uint32_t> head_fc_ids(const Graph& g) {
    std::vector<std::uint32_t> out;
    std::vector<std::vector<Edge>> edges = g.child_edges();
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        if (g.node(id).kind != LayerKind::FullyConnected) continue;
        for (const Edge& e : edges[id]) {
            LayerKind child = g.node(e.child).kind;
            if (child == LayerKind::Add || child == LayerKind::SoftmaxLoss) {
                out.push_back(id);
                break;
            }
        }
    }
    return out;
}

}  // namespace dagnet
