#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dagnet {

enum class LayerKind : std::uint8_t {
    Input = 0,
    Conv = 1,
    ReLU = 2,
    MaxPool = 3,
    GlobalAvgPool = 4,
    L2Normalize = 5,
    FullyConnected = 6,
    Add = 7,
    SoftmaxLoss = 8,
};

const char* layer_kind_name(LayerKind kind);

// Kind-specific hyperparameters; unused fields stay at their defaults.
struct Hyper {
    int in_h = 0, in_w = 0, in_c = 0;          // Input
    int kh = 0, kw = 0, out_channels = 0;      // Conv
    int stride = 1, pad = 0;                   // Conv
    int window = 0, pool_stride = 1;           // MaxPool
    int units = 0;                             // FullyConnected
    double epsilon = 1e-12;                    // L2Normalize
};

struct Param {
    std::string name;
    Tensor value;
};

struct Node {
    std::uint32_t id = 0;
    LayerKind kind = LayerKind::Input;
    Hyper hyper;
    std::vector<std::uint32_t> parents;  // ordered slots; Add may repeat a parent
    std::vector<Param> params;
};

// Called once per freshly created parameter; default leaves zeros.
using ParamInit = std::function<void(const std::string& name, Tensor& value)>;

// one child edge: (child id, parent-slot index within the child)
struct Edge {
    std::uint32_t child;
    int slot;
};

class Graph {
public:
    // Appends a node. Parents must already exist, so graphs are acyclic by
    // construction; only Add may have more than one parent. Shape inference
    // runs immediately and creates zero parameters, which `init` may fill.
    std::uint32_t add_node(LayerKind kind, std::vector<std::uint32_t> parents, Hyper hyper = {},
                           const ParamInit& init = {});

    std::size_t num_nodes() const { return nodes_.size(); }
    const Node& node(std::uint32_t id) const;
    Node& node_mut(std::uint32_t id);
    const Shape& output_shape(std::uint32_t id) const;

    std::uint32_t input_id() const;
    bool has_loss() const { return loss_id_.has_value(); }
    std::uint32_t loss_id() const;
    int num_classes() const;  // K of the loss node's logits

    // Every parent precedes its children; ties broken by ascending id.
    std::vector<std::uint32_t> topo_order() const;
    // Per node, child edges sorted by (child id, slot).
    std::vector<std::vector<Edge>> child_edges() const;
    std::size_t fan_out(std::uint32_t id) const;

    void validate() const;

private:
    friend Graph load_model(const std::string& path);

    Shape infer_shape(LayerKind kind, const std::vector<std::uint32_t>& parents,
                      const Hyper& hyper) const;
    void make_params(Node& node, const ParamInit& init);

    std::vector<Node> nodes_;
    std::vector<Shape> shapes_;
    std::optional<std::uint32_t> input_id_;
    std::optional<std::uint32_t> loss_id_;
};

// Per-run state; a Graph may be shared across concurrent executions, each
// owning its ExecContext.
struct ExecContext {
    std::vector<Tensor> acts;                         // per-node output
    std::vector<std::vector<std::size_t>> pool_argmax;
    double loss = 0.0;
    int label = -1;
    bool forward_done = false;
    bool backward_done = false;

    std::vector<Tensor> grad_out;                  // dz/d(node output), summed over children
    std::vector<std::vector<Tensor>> input_grads;  // per node, per parent slot
    std::vector<std::vector<Tensor>> param_grads;  // aligned with node params
};

// Evaluates every node in topo order. label < 0 skips the loss node (pure
// feature pass); with a label the return value is the softmax loss z.
double forward(const Graph& g, ExecContext& ctx, const Tensor& input, int label = -1);

// Reverse-topo sweep. Each node first sums the back-prop signals from all of
// its children, then applies its local gradient once (the duplicate-output
// fast path); Add replicates the incoming signal to every parent unchanged.
void backward(const Graph& g, ExecContext& ctx);

// The general per-branch rule kept as an oracle: multiplies each child signal
// by the local gradient separately and sums the products.
void backward_reference(const Graph& g, ExecContext& ctx);

// Binary model format, magic "DAGNET1\0"; see README for the exact layout.
void save_model(const Graph& g, const std::string& path);
Graph load_model(const std::string& path);

}  // namespace dagnet
