#include "graph.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <queue>
#include <sstream>

#include "bytes.hpp"
#include "error.hpp"

namespace dagnet {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'G', 'N', 'E', 'T', '1', '\0'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kNoLoss = 0xFFFFFFFFu;

}  // namespace

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Input: return "Input";
        case LayerKind::Conv: return "Conv";
        case LayerKind::ReLU: return "ReLU";
        case LayerKind::MaxPool: return "MaxPool";
        case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
        case LayerKind::L2Normalize: return "L2Normalize";
        case LayerKind::FullyConnected: return "FullyConnected";
        case LayerKind::Add: return "Add";
        case LayerKind::SoftmaxLoss: return "SoftmaxLoss";
    }
    return "Unknown";
}

const Node& Graph::node(std::uint32_t id) const {
    require(id < nodes_.size(), ErrorCode::Argument, "node id out of range");
    return nodes_[id];
}

Node& Graph::node_mut(std::uint32_t id) {
    require(id < nodes_.size(), ErrorCode::Argument, "node id out of range");
    return nodes_[id];
}

const Shape& Graph::output_shape(std::uint32_t id) const {
    require(id < shapes_.size(), ErrorCode::Argument, "node id out of range");
    return shapes_[id];
}

std::uint32_t Graph::input_id() const {
    require(input_id_.has_value(), ErrorCode::Argument, "graph has no Input node");
    return *input_id_;
}

std::uint32_t Graph::loss_id() const {
    require(loss_id_.has_value(), ErrorCode::Argument, "graph has no SoftmaxLoss node");
    return *loss_id_;
}

int Graph::num_classes() const {
    const Node& loss = node(loss_id());
    return static_cast<int>(shapes_[loss.parents[0]].numel());
}

Shape Graph::infer_shape(LayerKind kind, const std::vector<std::uint32_t>& parents,
                         const Hyper& hyper) const {
    auto parent_shape = [&](std::size_t slot) -> const Shape& {
        return shapes_[parents[slot]];
    };
    switch (kind) {
        case LayerKind::Input: {
            require(hyper.in_h >= 1 && hyper.in_w >= 1 && hyper.in_c >= 1, ErrorCode::Argument,
                    "Input dimensions must be positive");
            return Shape{{hyper.in_h, hyper.in_w, hyper.in_c}};
        }
        case LayerKind::Conv: {
            const Shape& in = parent_shape(0);
            require(in.rank() == 3, ErrorCode::Argument, "Conv parent must produce a rank-3 tensor");
            require(hyper.kh >= 1 && hyper.kw >= 1, ErrorCode::Argument,
                    "Conv kernel extents must be positive");
            require(hyper.out_channels >= 1, ErrorCode::Argument,
                    "Conv out_channels must be positive");
            require(hyper.stride >= 1, ErrorCode::Argument, "Conv stride must be >= 1");
            require(hyper.pad >= 0, ErrorCode::Argument, "Conv pad must be >= 0");
            int oh = conv_extent(in.dims[0], hyper.kh, hyper.stride, hyper.pad, "height");
            int ow = conv_extent(in.dims[1], hyper.kw, hyper.stride, hyper.pad, "width");
            return Shape{{oh, ow, hyper.out_channels}};
        }
        case LayerKind::ReLU:
            return parent_shape(0);
        case LayerKind::MaxPool: {
            const Shape& in = parent_shape(0);
            require(in.rank() == 3, ErrorCode::Argument,
                    "MaxPool parent must produce a rank-3 tensor");
            require(hyper.window >= 1, ErrorCode::Argument, "MaxPool window must be positive");
            require(hyper.pool_stride >= 1, ErrorCode::Argument, "MaxPool stride must be >= 1");
            require(hyper.window <= in.dims[0] && hyper.window <= in.dims[1], ErrorCode::Argument,
                    "MaxPool window exceeds input extent");
            require(hyper.pool_stride <= in.dims[0] && hyper.pool_stride <= in.dims[1],
                    ErrorCode::Argument, "MaxPool stride exceeds input extent");
            int oh = (in.dims[0] - hyper.window) / hyper.pool_stride + 1;
            int ow = (in.dims[1] - hyper.window) / hyper.pool_stride + 1;
            return Shape{{oh, ow, in.dims[2]}};
        }
        case LayerKind::GlobalAvgPool: {
            const Shape& in = parent_shape(0);
            require(in.rank() == 3, ErrorCode::Argument,
                    "GlobalAvgPool parent must produce a rank-3 tensor");
            return Shape{{1, 1, in.dims[2]}};
        }
        case LayerKind::L2Normalize: {
            require(hyper.epsilon > 0.0, ErrorCode::Argument,
                    "L2Normalize epsilon must be positive");
            return parent_shape(0);
        }
        case LayerKind::FullyConnected: {
            require(hyper.units >= 1, ErrorCode::Argument,
                    "FullyConnected units must be positive");
            return Shape{{hyper.units}};
        }
        case LayerKind::Add: {
            const Shape& first = parent_shape(0);
            for (std::size_t s = 1; s < parents.size(); ++s) {
                require(parent_shape(s).dims == first.dims, ErrorCode::Argument,
                        "Add parents must share one shape");
            }
            return first;
        }
        case LayerKind::SoftmaxLoss: {
            require(parent_shape(0).numel() >= 2, ErrorCode::Argument,
                    "SoftmaxLoss needs at least two logits");
            return Shape{{1}};
        }
    }
    fail(ErrorCode::Argument, "unknown layer kind");
}

void Graph::make_params(Node& node, const ParamInit& init) {
    if (node.kind == LayerKind::Conv) {
        const Shape& in = shapes_[node.parents[0]];
        Shape wshape{{node.hyper.kh, node.hyper.kw, in.dims[2], node.hyper.out_channels}};
        node.params.push_back({"weights", Tensor::zeros(wshape)});
        node.params.push_back({"bias", Tensor::zeros(Shape{{node.hyper.out_channels}})});
    } else if (node.kind == LayerKind::FullyConnected) {
        int fan_in = static_cast<int>(shapes_[node.parents[0]].numel());
        node.params.push_back({"weights", Tensor::zeros(Shape{{fan_in, node.hyper.units}})});
        node.params.push_back({"bias", Tensor::zeros(Shape{{node.hyper.units}})});
    }
    if (init) {
        for (Param& p : node.params) init(p.name, p.value);
    }
}

std::uint32_t Graph::add_node(LayerKind kind, std::vector<std::uint32_t> parents, Hyper hyper,
                              const ParamInit& init) {
    std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
    if (kind == LayerKind::Input) {
        require(parents.empty(), ErrorCode::Argument, "Input node takes no parents");
        require(!input_id_.has_value(), ErrorCode::Argument, "graph already has an Input node");
    } else {
        require(!parents.empty(), ErrorCode::Argument, "non-Input node needs at least one parent");
    }
    if (kind != LayerKind::Add) {
        require(parents.size() <= 1, ErrorCode::Argument,
                "only Add may take more than one parent");
    }
    for (std::uint32_t p : parents) {
        require(p < id, ErrorCode::Argument, "parent id must precede the new node");
        require(nodes_[p].kind != LayerKind::SoftmaxLoss, ErrorCode::Argument,
                "SoftmaxLoss cannot feed another node");
    }
    if (kind == LayerKind::SoftmaxLoss) {
        require(!loss_id_.has_value(), ErrorCode::Argument,
                "graph already has a SoftmaxLoss node");
    }

    Node node;
    node.id = id;
    node.kind = kind;
    node.hyper = hyper;
    node.parents = std::move(parents);
    Shape out = infer_shape(kind, node.parents, node.hyper);
    make_params(node, init);

    nodes_.push_back(std::move(node));
    shapes_.push_back(std::move(out));
    if (kind == LayerKind::Input) input_id_ = id;
    if (kind == LayerKind::SoftmaxLoss) loss_id_ = id;
    return id;
}

std::vector<std::uint32_t> Graph::topo_order() const {
    std::size_t n = nodes_.size();
    std::vector<std::size_t> indegree(n, 0);
    std::vector<std::vector<std::uint32_t>> children(n);
    for (const Node& node : nodes_) {
        indegree[node.id] = node.parents.size();
        for (std::uint32_t p : node.parents) children[p].push_back(node.id);
    }
    std::priority_queue<std::uint32_t, std::vector<std::uint32_t>, std::greater<>> ready;
    for (std::uint32_t i = 0; i < n; ++i) {
        if (indegree[i] == 0) ready.push(i);
    }
    std::vector<std::uint32_t> order;
    order.reserve(n);
    while (!ready.empty()) {
        std::uint32_t i = ready.top();
        ready.pop();
        order.push_back(i);
        for (std::uint32_t c : children[i]) {
            if (--indegree[c] == 0) ready.push(c);
        }
    }
    require(order.size() == n, ErrorCode::Argument, "graph contains a cycle");
    return order;
}

std::vector<std::vector<Edge>> Graph::child_edges() const {
    std::vector<std::vector<Edge>> edges(nodes_.size());
    for (const Node& node : nodes_) {
        for (std::size_t slot = 0; slot < node.parents.size(); ++slot) {
            edges[node.parents[slot]].push_back({node.id, static_cast<int>(slot)});
        }
    }
    for (auto& list : edges) {
        std::sort(list.begin(), list.end(), [](const Edge& a, const Edge& b) {
            return a.child != b.child ? a.child < b.child : a.slot < b.slot;
        });
    }
    return edges;
}

std::size_t Graph::fan_out(std::uint32_t id) const {
    require(id < nodes_.size(), ErrorCode::Argument, "node id out of range");
    std::size_t count = 0;
    for (const Node& node : nodes_) {
        for (std::uint32_t p : node.parents) {
            if (p == id) ++count;
        }
    }
    return count;
}

void Graph::validate() const {
    require(!nodes_.empty(), ErrorCode::Argument, "graph is empty");
    require(input_id_.has_value(), ErrorCode::Argument, "graph has no Input node");
    topo_order();  // throws on cycles
    for (const Node& node : nodes_) {
        for (std::uint32_t p : node.parents) {
            require(p < node.id, ErrorCode::Argument, "parent id must precede its child");
        }
    }
}

// ---------------------------------------------------------------------------
// Execution

namespace {

void check_node_finite(const Tensor& t, const Node& node, const char* what) {
    if (!all_finite(t)) {
        std::ostringstream msg;
        msg << "non-finite " << what << " at node " << node.id << " ("
            << layer_kind_name(node.kind) << ")";
        fail(ErrorCode::Numeric, msg.str());
    }
}

void axpy(Tensor& acc, const Tensor& x) {
    require(acc.data.size() == x.data.size(), ErrorCode::Internal,
            "gradient accumulation shape mismatch");
    for (std::size_t i = 0; i < x.data.size(); ++i) acc.data[i] += x.data[i];
}

// Applies node's local gradient to one incoming signal, accumulating into the
// per-parent-slot and per-param buffers. Both backward flavours share this.
void local_backward(ExecContext& ctx, const Node& node, const Tensor& signal,
                    std::vector<Tensor>& slot_accum, std::vector<Tensor>& param_accum) {
    switch (node.kind) {
        case LayerKind::Input:
            return;  // no parents, nothing to propagate
        case LayerKind::Conv: {
            const Tensor& x = ctx.acts[node.parents[0]];
            ConvGrads cg = conv2d_backward(x, node.params[0].value, signal, node.hyper.stride,
                                           node.hyper.pad);
            axpy(slot_accum[0], cg.input);
            axpy(param_accum[0], cg.kernels);
            for (std::size_t i = 0; i < cg.bias.size(); ++i) param_accum[1].data[i] += cg.bias[i];
            return;
        }
        case LayerKind::ReLU: {
            axpy(slot_accum[0], relu_backward(ctx.acts[node.parents[0]], signal));
            return;
        }
        case LayerKind::MaxPool: {
            axpy(slot_accum[0], maxpool2d_backward(ctx.acts[node.parents[0]].shape,
                                                   ctx.pool_argmax[node.id], signal));
            return;
        }
        case LayerKind::GlobalAvgPool: {
            axpy(slot_accum[0],
                 global_avg_pool_backward(ctx.acts[node.parents[0]].shape, signal));
            return;
        }
        case LayerKind::L2Normalize: {
            std::vector<double> dx = l2_normalize_backward(ctx.acts[node.parents[0]].data,
                                                           signal.data, node.hyper.epsilon);
            for (std::size_t i = 0; i < dx.size(); ++i) slot_accum[0].data[i] += dx[i];
            return;
        }
        case LayerKind::FullyConnected: {
            FcGrads fg = fully_connected_backward(ctx.acts[node.parents[0]].data,
                                                  node.params[0].value, signal.data);
            for (std::size_t i = 0; i < fg.input.size(); ++i) slot_accum[0].data[i] += fg.input[i];
            axpy(param_accum[0], fg.weights);
            for (std::size_t i = 0; i < fg.bias.size(); ++i) param_accum[1].data[i] += fg.bias[i];
            return;
        }
        case LayerKind::Add: {
            // local gradient is identity on every input slot
            for (Tensor& slot : slot_accum) axpy(slot, signal);
            return;
        }
        case LayerKind::SoftmaxLoss: {
            const Tensor& logits = ctx.acts[node.parents[0]];
            SoftmaxLossResult r = softmax_cross_entropy(logits.data, ctx.label);
            double scale = signal.data[0];
            for (std::size_t i = 0; i < r.grad_logits.size(); ++i) {
                slot_accum[0].data[i] += scale * r.grad_logits[i];
            }
            return;
        }
    }
    fail(ErrorCode::Internal, "unknown layer kind in backward");
}

void run_backward(const Graph& g, ExecContext& ctx, bool per_signal) {
    require(ctx.forward_done, ErrorCode::Argument, "backward requires a completed forward pass");
    require(g.has_loss(), ErrorCode::Argument, "backward requires a SoftmaxLoss node");
    require(ctx.label >= 0, ErrorCode::Argument, "backward requires a forward pass with a label");

    std::size_t n = g.num_nodes();
    ctx.grad_out.assign(n, Tensor{});
    ctx.input_grads.assign(n, {});
    ctx.param_grads.assign(n, {});
    std::vector<std::vector<Edge>> edges = g.child_edges();
    std::vector<std::uint32_t> order = g.topo_order();

    Tensor seed = Tensor::from(Shape{{1}}, {1.0});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Node& node = g.node(*it);
        std::uint32_t id = node.id;

        // incoming signals, one per child edge, in ascending (child, slot) order
        std::vector<const Tensor*> signals;
        if (g.has_loss() && id == g.loss_id()) {
            signals.push_back(&seed);
        } else {
            for (const Edge& e : edges[id]) signals.push_back(&ctx.input_grads[e.child][e.slot]);
        }

        Tensor total = Tensor::zeros(ctx.acts[id].shape);
        for (const Tensor* s : signals) axpy(total, *s);
        ctx.grad_out[id] = total;

        std::vector<Tensor> slot_accum;
        slot_accum.reserve(node.parents.size());
        for (std::uint32_t p : node.parents) slot_accum.push_back(Tensor::zeros(ctx.acts[p].shape));
        std::vector<Tensor> param_accum;
        param_accum.reserve(node.params.size());
        for (const Param& p : node.params) param_accum.push_back(Tensor::zeros(p.value.shape));

        if (per_signal) {
            // general rule: local gradient times each child's signal, summed
            for (const Tensor* s : signals) {
                local_backward(ctx, node, *s, slot_accum, param_accum);
            }
        } else {
            // fast path: signals are already summed, apply the local gradient once
            local_backward(ctx, node, total, slot_accum, param_accum);
        }

        for (const Tensor& t : slot_accum) check_node_finite(t, node, "gradient");
        for (const Tensor& t : param_accum) check_node_finite(t, node, "gradient");
        ctx.input_grads[id] = std::move(slot_accum);
        ctx.param_grads[id] = std::move(param_accum);
    }
    ctx.backward_done = true;
}

}  // namespace

double forward(const Graph& g, ExecContext& ctx, const Tensor& input, int label) {
    g.validate();
    std::size_t n = g.num_nodes();
    ctx.acts.assign(n, Tensor{});
    ctx.pool_argmax.assign(n, {});
    ctx.loss = 0.0;
    ctx.label = -1;
    ctx.forward_done = false;
    ctx.backward_done = false;

    require(input.shape.dims == g.output_shape(g.input_id()).dims, ErrorCode::Argument,
            "input tensor does not match the graph's Input shape");
    check_finite(input, "graph input");

    for (std::uint32_t id : g.topo_order()) {
        const Node& node = g.node(id);
        switch (node.kind) {
            case LayerKind::Input:
                ctx.acts[id] = input;
                break;
            case LayerKind::Conv:
                ctx.acts[id] = conv2d(ctx.acts[node.parents[0]], node.params[0].value,
                                      node.params[1].value.data, node.hyper.stride,
                                      node.hyper.pad);
                break;
            case LayerKind::ReLU:
                ctx.acts[id] = relu(ctx.acts[node.parents[0]]);
                break;
            case LayerKind::MaxPool: {
                PoolResult r = maxpool2d(ctx.acts[node.parents[0]], node.hyper.window,
                                         node.hyper.pool_stride);
                ctx.acts[id] = std::move(r.output);
                ctx.pool_argmax[id] = std::move(r.argmax);
                break;
            }
            case LayerKind::GlobalAvgPool:
                ctx.acts[id] = global_avg_pool(ctx.acts[node.parents[0]]);
                break;
            case LayerKind::L2Normalize: {
                Tensor out = ctx.acts[node.parents[0]];
                out.data = l2_normalize(out.data, node.hyper.epsilon);
                ctx.acts[id] = std::move(out);
                break;
            }
            case LayerKind::FullyConnected: {
                Tensor out = Tensor::zeros(g.output_shape(id));
                out.data = fully_connected(ctx.acts[node.parents[0]].data, node.params[0].value,
                                           node.params[1].value.data);
                ctx.acts[id] = std::move(out);
                break;
            }
            case LayerKind::Add: {
                std::vector<const Tensor*> inputs;
                inputs.reserve(node.parents.size());
                for (std::uint32_t p : node.parents) inputs.push_back(&ctx.acts[p]);
                ctx.acts[id] = add_n(inputs);
                break;
            }
            case LayerKind::SoftmaxLoss: {
                if (label < 0) {
                    // feature pass: leave the loss untouched at zero
                    ctx.acts[id] = Tensor::zeros(Shape{{1}});
                    continue;
                }
                SoftmaxLossResult r =
                    softmax_cross_entropy(ctx.acts[node.parents[0]].data, label);
                ctx.acts[id] = Tensor::from(Shape{{1}}, {r.loss});
                ctx.loss = r.loss;
                break;
            }
        }
        check_node_finite(ctx.acts[id], node, "activation");
    }

    if (label >= 0) {
        require(g.has_loss(), ErrorCode::Argument,
                "label given but the graph has no SoftmaxLoss node");
        ctx.label = label;
    }
    ctx.forward_done = true;
    return ctx.loss;
}

void backward(const Graph& g, ExecContext& ctx) { run_backward(g, ctx, false); }

void backward_reference(const Graph& g, ExecContext& ctx) { run_backward(g, ctx, true); }

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::vector<std::uint32_t> hyper_words(const Node& node) {
    const Hyper& h = node.hyper;
    switch (node.kind) {
        case LayerKind::Input:
            return {static_cast<std::uint32_t>(h.in_h), static_cast<std::uint32_t>(h.in_w),
                    static_cast<std::uint32_t>(h.in_c)};
        case LayerKind::Conv:
            return {static_cast<std::uint32_t>(h.kh), static_cast<std::uint32_t>(h.kw),
                    static_cast<std::uint32_t>(h.out_channels),
                    static_cast<std::uint32_t>(h.stride), static_cast<std::uint32_t>(h.pad)};
        case LayerKind::MaxPool:
            return {static_cast<std::uint32_t>(h.window),
                    static_cast<std::uint32_t>(h.pool_stride)};
        case LayerKind::L2Normalize: {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(h.epsilon));
            std::memcpy(&bits, &h.epsilon, sizeof(bits));
            return {static_cast<std::uint32_t>(bits & 0xFFFFFFFFu),
                    static_cast<std::uint32_t>(bits >> 32)};
        }
        case LayerKind::FullyConnected:
            return {static_cast<std::uint32_t>(h.units)};
        case LayerKind::ReLU:
        case LayerKind::GlobalAvgPool:
        case LayerKind::Add:
        case LayerKind::SoftmaxLoss:
            return {};
    }
    fail(ErrorCode::Internal, "unknown layer kind in serialization");
}

Hyper hyper_from_words(LayerKind kind, const std::vector<std::uint32_t>& w) {
    auto expect = [&](std::size_t n) {
        require(w.size() == n, ErrorCode::Format, "unexpected hyperparameter count in model file");
    };
    Hyper h;
    switch (kind) {
        case LayerKind::Input:
            expect(3);
            h.in_h = static_cast<int>(w[0]);
            h.in_w = static_cast<int>(w[1]);
            h.in_c = static_cast<int>(w[2]);
            return h;
        case LayerKind::Conv:
            expect(5);
            h.kh = static_cast<int>(w[0]);
            h.kw = static_cast<int>(w[1]);
            h.out_channels = static_cast<int>(w[2]);
            h.stride = static_cast<int>(w[3]);
            h.pad = static_cast<int>(w[4]);
            return h;
        case LayerKind::MaxPool:
            expect(2);
            h.window = static_cast<int>(w[0]);
            h.pool_stride = static_cast<int>(w[1]);
            return h;
        case LayerKind::L2Normalize: {
            expect(2);
            std::uint64_t bits =
                static_cast<std::uint64_t>(w[0]) | (static_cast<std::uint64_t>(w[1]) << 32);
            std::memcpy(&h.epsilon, &bits, sizeof(h.epsilon));
            return h;
        }
        case LayerKind::FullyConnected:
            expect(1);
            h.units = static_cast<int>(w[0]);
            return h;
        case LayerKind::ReLU:
        case LayerKind::GlobalAvgPool:
        case LayerKind::Add:
        case LayerKind::SoftmaxLoss:
            expect(0);
            return h;
    }
    fail(ErrorCode::Format, "unknown layer kind in model file");
}

std::size_t hyper_word_count(LayerKind kind) {
    switch (kind) {
        case LayerKind::Input: return 3;
        case LayerKind::Conv: return 5;
        case LayerKind::MaxPool: return 2;
        case LayerKind::L2Normalize: return 2;
        case LayerKind::FullyConnected: return 1;
        case LayerKind::ReLU:
        case LayerKind::GlobalAvgPool:
        case LayerKind::Add:
        case LayerKind::SoftmaxLoss: return 0;
    }
    fail(ErrorCode::Format, "unknown layer kind in model file");
}

void write_name(std::ostream& out, const std::string& s) {
    require(s.size() <= 255, ErrorCode::Argument, "parameter name too long for the model format");
    write_u8(out, static_cast<std::uint8_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_name(std::istream& in) {
    std::uint8_t len = read_u8(in, "name length");
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    require(static_cast<std::size_t>(in.gcount()) == len, ErrorCode::Format,
            "truncated input reading name bytes");
    return s;
}

}  // namespace

void save_model(const Graph& g, const std::string& path) {
    g.validate();
    std::ofstream out(path, std::ios::binary);
    require(out.is_open(), ErrorCode::Io, "cannot open model file for writing: " + path);

    out.write(kMagic, sizeof(kMagic));
    write_u32_le(out, kFormatVersion);
    write_u32_le(out, static_cast<std::uint32_t>(g.num_nodes()));

    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        const Node& node = g.node(id);
        write_u32_le(out, node.id);
        write_u8(out, static_cast<std::uint8_t>(node.kind));
        for (std::uint32_t w : hyper_words(node)) write_u32_le(out, w);
        require(node.parents.size() <= 255, ErrorCode::Argument,
                "too many parents for the model format");
        write_u8(out, static_cast<std::uint8_t>(node.parents.size()));
        for (std::uint32_t p : node.parents) write_u32_le(out, p);
    }

    std::size_t param_count = 0;
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        param_count += g.node(id).params.size();
    }
    write_u32_le(out, static_cast<std::uint32_t>(param_count));
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        for (const Param& p : g.node(id).params) {
            write_u32_le(out, id);
            write_name(out, p.name);
            write_u8(out, static_cast<std::uint8_t>(p.value.shape.rank()));
            for (int d : p.value.shape.dims) write_u32_le(out, static_cast<std::uint32_t>(d));
            for (double v : p.value.data) write_f64_le(out, v);
        }
    }

    write_u32_le(out, g.input_id());
    write_u32_le(out, g.has_loss() ? g.loss_id() : kNoLoss);
    require(out.good(), ErrorCode::Io, "failed writing model file: " + path);
}

Graph load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.is_open(), ErrorCode::Io, "cannot open model file: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    require(in.gcount() == sizeof(magic) && std::memcmp(magic, kMagic, sizeof(magic)) == 0,
            ErrorCode::Format, "bad magic in model file: " + path);
    std::uint32_t version = read_u32_le(in, "format version");
    require(version == kFormatVersion, ErrorCode::Format, "unsupported model format version");
    std::uint32_t node_count = read_u32_le(in, "node count");
    require(node_count >= 1, ErrorCode::Format, "model file has no nodes");

    Graph g;
    for (std::uint32_t i = 0; i < node_count; ++i) {
        std::uint32_t id = read_u32_le(in, "node id");
        require(id == i, ErrorCode::Format, "node ids must be dense and ascending");
        std::uint8_t kind_raw = read_u8(in, "node kind");
        require(kind_raw <= static_cast<std::uint8_t>(LayerKind::SoftmaxLoss), ErrorCode::Format,
                "unknown node kind in model file");
        LayerKind kind = static_cast<LayerKind>(kind_raw);
        std::vector<std::uint32_t> words(hyper_word_count(kind));
        for (std::uint32_t& w : words) w = read_u32_le(in, "hyperparameter word");
        std::uint8_t parent_count = read_u8(in, "parent count");
        std::vector<std::uint32_t> parents(parent_count);
        for (std::uint32_t& p : parents) {
            p = read_u32_le(in, "parent id");
            require(p < i, ErrorCode::Format, "parent id must precede its child");
        }
        g.add_node(kind, std::move(parents), hyper_from_words(kind, words));
    }

    std::uint32_t param_count = read_u32_le(in, "parameter count");
    std::size_t expected = 0;
    for (std::uint32_t id = 0; id < node_count; ++id) expected += g.node(id).params.size();
    require(param_count == expected, ErrorCode::Format,
            "parameter count does not match the architecture");

    for (std::uint32_t i = 0; i < param_count; ++i) {
        std::uint32_t owner = read_u32_le(in, "parameter owner");
        require(owner < node_count, ErrorCode::Format, "parameter owner out of range");
        std::string name = read_name(in);
        std::uint8_t rank = read_u8(in, "parameter rank");
        require(rank >= 1 && rank <= 8, ErrorCode::Format, "parameter rank out of range");
        Shape shape;
        shape.dims.resize(rank);
        for (std::uint8_t d = 0; d < rank; ++d) {
            shape.dims[d] = static_cast<int>(read_u32_le(in, "parameter extent"));
        }
        shape.validate();

        Node& node = g.node_mut(owner);
        Param* target = nullptr;
        for (Param& p : node.params) {
            if (p.name == name) target = &p;
        }
        require(target != nullptr, ErrorCode::Format,
                "model file names a parameter the architecture does not declare");
        require(target->value.shape.dims == shape.dims, ErrorCode::Format,
                "parameter shape does not match the architecture");
        for (double& v : target->value.data) v = read_f64_le(in, "parameter value");
    }

    std::uint32_t input_id = read_u32_le(in, "input id");
    std::uint32_t loss_id = read_u32_le(in, "loss id");
    require(g.input_id() == input_id, ErrorCode::Format,
            "input id in trailer does not match the node table");
    if (loss_id == kNoLoss) {
        require(!g.has_loss(), ErrorCode::Format,
                "loss id in trailer does not match the node table");
    } else {
        require(g.has_loss() && g.loss_id() == loss_id, ErrorCode::Format,
                "loss id in trailer does not match the node table");
    }
    require(in.peek() == std::char_traits<char>::eof(), ErrorCode::Format,
            "trailing bytes after model data");
    g.validate();
    return g;
}

}  // namespace dagnet
