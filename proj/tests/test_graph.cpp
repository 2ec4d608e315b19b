#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "graph.hpp"
#include "multiscale.hpp"
#include "test_support.hpp"

using namespace dagnet;

namespace {

void expect_error(const std::function<void()>& fn, ErrorCode code, const std::string& substr) {
    try {
        fn();
        FAIL_CHECK("expected an error containing '" << substr << "'");
    } catch (const Error& e) {
        CHECK(e.code() == code);
        CHECK(std::string(e.what()).find(substr) != std::string::npos);
    }
}

// Input(1x1xK) feeding SoftmaxLoss directly: the logits are the input
Graph logits_graph(int k) {
    Graph g;
    Hyper in;
    in.in_h = 1;
    in.in_w = 1;
    in.in_c = k;
    std::uint32_t input = g.add_node(LayerKind::Input, {}, in);
    g.add_node(LayerKind::SoftmaxLoss, {input});
    return g;
}

}  // namespace

TEST_CASE("add_node enforces the structural rules") {
    Graph g;
    Hyper in;
    in.in_h = 2;
    in.in_w = 2;
    in.in_c = 2;
    std::uint32_t input = g.add_node(LayerKind::Input, {}, in);

    expect_error([&] { g.add_node(LayerKind::Input, {}, in); }, ErrorCode::Argument,
                 "already has an Input");
    expect_error([&] { g.add_node(LayerKind::ReLU, {}); }, ErrorCode::Argument,
                 "at least one parent");
    expect_error([&] { g.add_node(LayerKind::ReLU, {input, input}); }, ErrorCode::Argument,
                 "only Add");
    expect_error([&] { g.add_node(LayerKind::ReLU, {7}); }, ErrorCode::Argument,
                 "parent id must precede");

    std::uint32_t loss = g.add_node(LayerKind::SoftmaxLoss, {input});
    expect_error([&] { g.add_node(LayerKind::SoftmaxLoss, {input}); }, ErrorCode::Argument,
                 "already has a SoftmaxLoss");
    expect_error([&] { g.add_node(LayerKind::ReLU, {loss}); }, ErrorCode::Argument,
                 "cannot feed another node");
}

TEST_CASE("shape inference rejects invalid hyperparameters") {
    Graph g;
    Hyper in;
    in.in_h = 4;
    in.in_w = 4;
    in.in_c = 1;
    std::uint32_t input = g.add_node(LayerKind::Input, {}, in);

    Hyper conv;
    conv.kh = conv.kw = 9;
    conv.out_channels = 1;
    expect_error([&] { g.add_node(LayerKind::Conv, {input}, conv); }, ErrorCode::Argument,
                 "kernel");

    Hyper pool;
    pool.window = 5;
    expect_error([&] { g.add_node(LayerKind::MaxPool, {input}, pool); }, ErrorCode::Argument,
                 "window");

    Hyper l2n;
    l2n.epsilon = 0.0;
    expect_error([&] { g.add_node(LayerKind::L2Normalize, {input}, l2n); }, ErrorCode::Argument,
                 "epsilon");

    // a 1-logit loss is rejected
    Graph g1;
    Hyper one;
    one.in_h = one.in_w = one.in_c = 1;
    std::uint32_t i1 = g1.add_node(LayerKind::Input, {}, one);
    expect_error([&] { g1.add_node(LayerKind::SoftmaxLoss, {i1}); }, ErrorCode::Argument,
                 "at least two logits");
}

TEST_CASE("topological order of a diamond is 0,1,2,3") {
    Graph g;
    Hyper in;
    in.in_h = 2;
    in.in_w = 2;
    in.in_c = 1;
    std::uint32_t input = g.add_node(LayerKind::Input, {}, in);
    std::uint32_t a = g.add_node(LayerKind::ReLU, {input});
    std::uint32_t b = g.add_node(LayerKind::ReLU, {input});
    std::uint32_t add = g.add_node(LayerKind::Add, {a, b});
    CHECK(g.topo_order() == std::vector<std::uint32_t>{input, a, b, add});
    CHECK(g.fan_out(input) == 2);
    CHECK(g.fan_out(a) == 1);
    CHECK(g.fan_out(add) == 0);
}

TEST_CASE("child_edges reports Add parent slots separately") {
    Graph g;
    Hyper in;
    in.in_h = 1;
    in.in_w = 1;
    in.in_c = 3;
    std::uint32_t input = g.add_node(LayerKind::Input, {}, in);
    std::uint32_t add = g.add_node(LayerKind::Add, {input, input});
    auto edges = g.child_edges();
    REQUIRE(edges[input].size() == 2);
    CHECK(edges[input][0].child == add);
    CHECK(edges[input][0].slot == 0);
    CHECK(edges[input][1].child == add);
    CHECK(edges[input][1].slot == 1);
    CHECK(g.fan_out(input) == 2);
}

TEST_CASE("uniform logits produce loss ln K") {
    Graph g = logits_graph(2);
    ExecContext ctx;
    double loss = forward(g, ctx, Tensor::from(Shape{{1, 1, 2}}, {0.0, 0.0}), 0);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("feature pass skips the loss node") {
    Graph g = logits_graph(3);
    ExecContext ctx;
    double loss = forward(g, ctx, Tensor::from(Shape{{1, 1, 3}}, {1.0, 2.0, 3.0}));
    CHECK(loss == 0.0);
    CHECK(ctx.label == -1);
    expect_error([&] { backward(g, ctx); }, ErrorCode::Argument, "label");
}

TEST_CASE("forward rejects a mismatched input shape") {
    Graph g = logits_graph(2);
    ExecContext ctx;
    expect_error([&] { forward(g, ctx, Tensor::zeros(Shape{{1, 1, 3}}), 0); },
                 ErrorCode::Argument, "Input shape");
}

TEST_CASE("adding one FC head to itself equals doubling its weights") {
    Rng rng(5);
    Tensor weights = Tensor::zeros(Shape{{4, 3}});
    for (double& v : weights.data) v = rng.normal(0, 0.5);
    std::vector<double> bias = {0.1, -0.2, 0.3};

    auto build = [&](bool doubled, bool via_add) {
        Graph g;
        Hyper in;
        in.in_h = 2;
        in.in_w = 2;
        in.in_c = 1;
        std::uint32_t input = g.add_node(LayerKind::Input, {}, in);
        Hyper fc;
        fc.units = 3;
        std::uint32_t head = g.add_node(LayerKind::FullyConnected, {input}, fc);
        Tensor w = weights;
        std::vector<double> b = bias;
        if (doubled) {
            for (double& v : w.data) v *= 2.0;
            for (double& v : b) v *= 2.0;
        }
        g.node_mut(head).params[0].value = w;
        g.node_mut(head).params[1].value.data = b;
        std::uint32_t top = head;
        if (via_add) top = g.add_node(LayerKind::Add, {head, head});
        g.add_node(LayerKind::SoftmaxLoss, {top});
        return g;
    };

    Graph twice = build(false, true);
    Graph doubled = build(true, false);
    Tensor input = Tensor::from(Shape{{2, 2, 1}}, {0.3, -0.8, 1.2, 0.5});
    ExecContext ca, cb;
    double la = forward(twice, ca, input, 1);
    double lb = forward(doubled, cb, input, 1);
    CHECK(la == doctest::Approx(lb).epsilon(1e-15));

    // the duplicated head receives the back-prop signal once per slot
    backward(twice, ca);
    backward(doubled, cb);
    std::uint32_t head = 1;
    for (std::size_t i = 0; i < ca.param_grads[head][0].data.size(); ++i) {
        // d loss/d w of the doubled-weight model is half the duplicated model's
        CHECK(ca.param_grads[head][0].data[i] ==
              doctest::Approx(2.0 * cb.param_grads[head][0].data[i]).epsilon(1e-12));
    }
}

TEST_CASE("Add replicates the incoming signal to every parent slot") {
    Graph g;
    Hyper in;
    in.in_h = 1;
    in.in_w = 1;
    in.in_c = 4;
    std::uint32_t input = g.add_node(LayerKind::Input, {}, in);
    std::uint32_t a = g.add_node(LayerKind::ReLU, {input});
    std::uint32_t b = g.add_node(LayerKind::ReLU, {input});
    std::uint32_t add = g.add_node(LayerKind::Add, {a, b});
    g.add_node(LayerKind::SoftmaxLoss, {add});

    ExecContext ctx;
    forward(g, ctx, Tensor::from(Shape{{1, 1, 4}}, {0.5, 1.0, 2.0, 0.25}), 2);
    backward(g, ctx);
    REQUIRE(ctx.input_grads[add].size() == 2);
    CHECK(ctx.input_grads[add][0].data == ctx.grad_out[add].data);
    CHECK(ctx.input_grads[add][1].data == ctx.grad_out[add].data);
    // both ReLU branches then feed the same signal back to the input
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(ctx.grad_out[input].data[i] ==
              doctest::Approx(2.0 * ctx.grad_out[add].data[i]).epsilon(1e-15));
    }
}

TEST_CASE("backward and backward_reference agree on random DAGs") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        CAPTURE(seed);
        Rng rng(mix_seed(seed, 0xfa57));
        Graph g = testsup::random_dag(rng, 12);
        Rng input_rng(mix_seed(seed, 0x1a57));
        Tensor input = testsup::random_input(input_rng, g);
        int label = static_cast<int>(input_rng.uniform_int(0, g.num_classes() - 1));

        ExecContext fast, ref;
        forward(g, fast, input, label);
        forward(g, ref, input, label);
        backward(g, fast);
        backward_reference(g, ref);

        double max_diff = 0.0;
        for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
            for (std::size_t i = 0; i < fast.grad_out[id].data.size(); ++i) {
                max_diff = std::max(max_diff, std::abs(fast.grad_out[id].data[i] -
                                                       ref.grad_out[id].data[i]));
            }
            for (std::size_t s = 0; s < fast.input_grads[id].size(); ++s) {
                for (std::size_t i = 0; i < fast.input_grads[id][s].data.size(); ++i) {
                    max_diff = std::max(max_diff, std::abs(fast.input_grads[id][s].data[i] -
                                                           ref.input_grads[id][s].data[i]));
                }
            }
            for (std::size_t p = 0; p < fast.param_grads[id].size(); ++p) {
                for (std::size_t i = 0; i < fast.param_grads[id][p].data.size(); ++i) {
                    max_diff = std::max(max_diff, std::abs(fast.param_grads[id][p].data[i] -
                                                           ref.param_grads[id][p].data[i]));
                }
            }
        }
        CHECK(max_diff <= 1e-12);
    }
}

TEST_CASE("forward and backward are deterministic") {
    Rng rng(77);
    Graph g = testsup::random_dag(rng, 10);
    Rng input_rng(78);
    Tensor input = testsup::random_input(input_rng, g);
    int label = 0;

    ExecContext a, b;
    forward(g, a, input, label);
    forward(g, b, input, label);
    backward(g, a);
    backward(g, b);
    CHECK(a.loss == b.loss);
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        CHECK(a.acts[id].data == b.acts[id].data);
        CHECK(a.grad_out[id].data == b.grad_out[id].data);
    }
}

TEST_CASE("an ExecContext can be reused across runs") {
    Graph g = logits_graph(2);
    ExecContext ctx;
    double l0 = forward(g, ctx, Tensor::from(Shape{{1, 1, 2}}, {0.0, 0.0}), 0);
    backward(g, ctx);
    double l1 = forward(g, ctx, Tensor::from(Shape{{1, 1, 2}}, {3.0, -1.0}), 1);
    backward(g, ctx);
    CHECK(l0 == doctest::Approx(std::log(2.0)));
    CHECK(l1 > l0);
}

TEST_CASE("model files round-trip byte-exactly") {
    std::string dir = testsup::scratch_dir("graph-io");
    Rng rng(400);
    BackboneSpec backbone = testsup::random_backbone(rng, 3);
    TapSet taps = testsup::random_taps(rng, backbone, 2);
    Graph g = build_multiscale(backbone, taps, 4, normal_init(9));

    std::string path_a = dir + "/model-a.dagnet";
    std::string path_b = dir + "/model-b.dagnet";
    save_model(g, path_a);
    Graph loaded = load_model(path_a);

    REQUIRE(loaded.num_nodes() == g.num_nodes());
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        CHECK(loaded.node(id).kind == g.node(id).kind);
        CHECK(loaded.node(id).parents == g.node(id).parents);
        REQUIRE(loaded.node(id).params.size() == g.node(id).params.size());
        for (std::size_t p = 0; p < g.node(id).params.size(); ++p) {
            CHECK(loaded.node(id).params[p].name == g.node(id).params[p].name);
            CHECK(loaded.node(id).params[p].value.data == g.node(id).params[p].value.data);
        }
    }
    save_model(loaded, path_b);
    CHECK(testsup::read_file_bytes(path_a) == testsup::read_file_bytes(path_b));

    // the loaded model computes the same loss
    Rng input_rng(401);
    Tensor input = testsup::random_input(input_rng, g);
    ExecContext ca, cb;
    CHECK(forward(g, ca, input, 1) == forward(loaded, cb, input, 1));
}

TEST_CASE("model loading rejects corrupted files") {
    std::string dir = testsup::scratch_dir("graph-corrupt");
    Graph g = logits_graph(3);
    std::string path = dir + "/model.dagnet";
    save_model(g, path);
    std::string bytes = testsup::read_file_bytes(path);

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        testsup::write_file_bytes(path, bad);
        expect_error([&] { load_model(path); }, ErrorCode::Format, "bad magic");
    }
    SUBCASE("unsupported version") {
        std::string bad = bytes;
        bad[8] = static_cast<char>(0x77);
        testsup::write_file_bytes(path, bad);
        expect_error([&] { load_model(path); }, ErrorCode::Format, "version");
    }
    SUBCASE("truncation") {
        for (std::size_t cut : {4ul, 9ul, 17ul, bytes.size() - 3}) {
            testsup::write_file_bytes(path, bytes.substr(0, cut));
            try {
                load_model(path);
                FAIL_CHECK("expected truncated file to be rejected at cut " << cut);
            } catch (const Error& e) {
                CHECK(e.code() == ErrorCode::Format);
            }
        }
    }
    SUBCASE("trailing bytes") {
        testsup::write_file_bytes(path, bytes + "x");
        expect_error([&] { load_model(path); }, ErrorCode::Format, "trailing bytes");
    }
    SUBCASE("missing file") {
        expect_error([&] { load_model(dir + "/nope.dagnet"); }, ErrorCode::Io, "nope.dagnet");
    }
}

TEST_CASE("saved models keep every layer kind's hyperparameters") {
    std::string dir = testsup::scratch_dir("graph-hyper");
    Graph g;
    Hyper in;
    in.in_h = 8;
    in.in_w = 8;
    in.in_c = 2;
    std::uint32_t input = g.add_node(LayerKind::Input, {}, in);
    Hyper conv;
    conv.kh = 3;
    conv.kw = 2;
    conv.out_channels = 4;
    conv.stride = 2;
    conv.pad = 1;
    std::uint32_t c = g.add_node(LayerKind::Conv, {input}, conv, normal_init(3));
    std::uint32_t r = g.add_node(LayerKind::ReLU, {c});
    Hyper pool;
    pool.window = 2;
    pool.pool_stride = 2;
    std::uint32_t p = g.add_node(LayerKind::MaxPool, {r}, pool);
    std::uint32_t gap = g.add_node(LayerKind::GlobalAvgPool, {p});
    Hyper l2n;
    l2n.epsilon = 3.25e-7;
    std::uint32_t n = g.add_node(LayerKind::L2Normalize, {gap}, l2n);
    Hyper fc;
    fc.units = 5;
    std::uint32_t f = g.add_node(LayerKind::FullyConnected, {n}, fc, normal_init(4));
    std::uint32_t add = g.add_node(LayerKind::Add, {f, f});
    g.add_node(LayerKind::SoftmaxLoss, {add});

    std::string path = dir + "/all-kinds.dagnet";
    save_model(g, path);
    Graph loaded = load_model(path);
    CHECK(loaded.node(c).hyper.kh == 3);
    CHECK(loaded.node(c).hyper.kw == 2);
    CHECK(loaded.node(c).hyper.out_channels == 4);
    CHECK(loaded.node(c).hyper.stride == 2);
    CHECK(loaded.node(c).hyper.pad == 1);
    CHECK(loaded.node(p).hyper.window == 2);
    CHECK(loaded.node(p).hyper.pool_stride == 2);
    CHECK(loaded.node(n).hyper.epsilon == 3.25e-7);  // bit-exact through the file
    CHECK(loaded.node(f).hyper.units == 5);
    CHECK(loaded.node(add).parents == std::vector<std::uint32_t>{f, f});
    CHECK(loaded.output_shape(c).dims == g.output_shape(c).dims);
}
