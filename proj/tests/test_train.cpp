#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "data.hpp"
#include "doctest.h"
#include "multiscale.hpp"
#include "test_support.hpp"
#include "train.hpp"

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

BackboneSpec tiny_backbone(int channels = 4, int size = 8) {
    BackboneSpec spec;
    spec.in_h = spec.in_w = size;
    spec.in_c = 1;
    Hyper conv;
    conv.kh = conv.kw = 3;
    conv.pad = 1;
    conv.stride = 1;
    conv.out_channels = channels;
    spec.layers.push_back({LayerKind::Conv, conv});
    spec.layers.push_back({LayerKind::ReLU, {}});
    spec.layers.push_back({LayerKind::Conv, conv});
    spec.layers.push_back({LayerKind::ReLU, {}});
    return spec;
}

// flat texture vs checkerboard texture: separable by channel statistics, so
// the signal survives global average pooling and feature normalization
Dataset separable_dataset(int size, int per_class, std::uint64_t seed) {
    Dataset ds;
    ds.num_classes = 2;
    Rng rng(seed);
    for (int i = 0; i < 2 * per_class; ++i) {
        int label = i % 2;
        Tensor img = Tensor::zeros(Shape{{size, size, 1}});
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                double base = label == 0 ? 0.5 : ((x + y) % 2 == 0 ? 0.9 : 0.1);
                img.at3(y, x, 0) = base + rng.uniform(-0.02, 0.02);
            }
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
        int third = 2 * per_class / 3;
        if (i < third) {
            ds.train_idx.push_back(i);
        } else if (i < 2 * third) {
            ds.val_idx.push_back(i);
        } else {
            ds.test_idx.push_back(i);
        }
    }
    ds.validate();
    return ds;
}

std::vector<std::vector<double>> snapshot_params(const Graph& g) {
    std::vector<std::vector<double>> out;
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        for (const Param& p : g.node(id).params) out.push_back(p.value.data);
    }
    return out;
}

}  // namespace

TEST_CASE("sgd_step matches the hand arithmetic for vanilla SGD") {
    Tensor param = Tensor::from(Shape{{1}}, {1.0});
    Tensor velocity = Tensor::zeros(Shape{{1}});
    sgd_step(param, velocity, Tensor::from(Shape{{1}}, {2.0}), 0.1, 0.0);
    CHECK(param.data[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("sgd_step with momentum follows the two-step recursion") {
    Tensor param = Tensor::from(Shape{{1}}, {0.0});
    Tensor velocity = Tensor::zeros(Shape{{1}});
    Tensor grad = Tensor::from(Shape{{1}}, {1.0});
    sgd_step(param, velocity, grad, 0.1, 0.9);
    CHECK(param.data[0] == doctest::Approx(-0.1).epsilon(1e-15));
    sgd_step(param, velocity, grad, 0.1, 0.9);
    CHECK(param.data[0] == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("sgd_step with zero gradient only decays the velocity") {
    Tensor param = Tensor::from(Shape{{1}}, {5.0});
    Tensor velocity = Tensor::from(Shape{{1}}, {1.0});
    sgd_step(param, velocity, Tensor::zeros(Shape{{1}}), 0.1, 0.5);
    CHECK(velocity.data[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(param.data[0] == doctest::Approx(5.5).epsilon(1e-15));
}

TEST_CASE("sgd_step rejects non-finite gradients") {
    Tensor param = Tensor::from(Shape{{1}}, {1.0});
    Tensor velocity = Tensor::zeros(Shape{{1}});
    expect_error([&] {
        sgd_step(param, velocity, Tensor::from(Shape{{1}}, {std::nan("")}), 0.1, 0.0);
    }, ErrorCode::Numeric, "non-finite");
}

TEST_CASE("training with learning rate zero leaves every parameter unchanged") {
    BackboneSpec backbone = tiny_backbone();
    Graph g = build_multiscale(backbone, TapSet::of({1, 3}), 2, normal_init(3));
    Dataset ds = separable_dataset(8, 9, 4);

    std::vector<std::vector<double>> before = snapshot_params(g);
    TrainConfig config;
    config.learning_rate = 0.0;
    config.epochs = 3;
    config.batch_size = 4;
    config.seed = 5;
    train(g, ds, config);
    CHECK(snapshot_params(g) == before);  // bit-identical
}

TEST_CASE("training is deterministic given the seed") {
    BackboneSpec backbone = tiny_backbone();
    Dataset ds = separable_dataset(8, 9, 14);
    TrainConfig config;
    config.learning_rate = 0.05;
    config.epochs = 3;
    config.batch_size = 4;
    config.seed = 15;

    Graph a = build_multiscale(backbone, TapSet::of({1, 3}), 2, normal_init(13));
    Graph b = build_multiscale(backbone, TapSet::of({1, 3}), 2, normal_init(13));
    TrainResult ra = train(a, ds, config);
    TrainResult rb = train(b, ds, config);
    CHECK(snapshot_params(a) == snapshot_params(b));
    REQUIRE(ra.epochs.size() == rb.epochs.size());
    for (std::size_t e = 0; e < ra.epochs.size(); ++e) {
        CHECK(ra.epochs[e].train_loss == rb.epochs[e].train_loss);
        CHECK(ra.epochs[e].val_accuracy == rb.epochs[e].val_accuracy);
    }
}

TEST_CASE("worker count does not change the trained parameters") {
    BackboneSpec backbone = tiny_backbone();
    Dataset ds = separable_dataset(8, 9, 24);
    TrainConfig config;
    config.learning_rate = 0.05;
    config.epochs = 2;
    config.batch_size = 4;
    config.seed = 25;

    Graph a = build_multiscale(backbone, TapSet::of({1, 3}), 2, normal_init(23));
    Graph b = build_multiscale(backbone, TapSet::of({1, 3}), 2, normal_init(23));
    config.jobs = 1;
    train(a, ds, config);
    config.jobs = 3;
    train(b, ds, config);
    CHECK(snapshot_params(a) == snapshot_params(b));
}

TEST_CASE("a separable toy task trains to perfect train accuracy") {
    BackboneSpec backbone = tiny_backbone();
    Graph g = build_multiscale(backbone, TapSet::of({3}), 2, normal_init(33));
    Dataset ds = separable_dataset(8, 9, 34);

    TrainConfig config;
    config.learning_rate = 0.05;
    config.epochs = 10;
    config.batch_size = 4;
    config.seed = 35;
    TrainResult result = train(g, ds, config);
    EvalResult eval = evaluate(g, ds, ds.train_idx, 1);
    CHECK(eval.accuracy == 1.0);
    CHECK(result.epochs.size() == 10);
}

TEST_CASE("off-the-shelf mode freezes everything but the FC heads") {
    BackboneSpec backbone = tiny_backbone();
    Graph g = build_multiscale(backbone, TapSet::of({1, 3}), 2, normal_init(43));
    Dataset ds = separable_dataset(8, 9, 44);

    std::vector<std::uint32_t> heads = head_fc_ids(g);
    std::vector<std::vector<std::vector<double>>> before(g.num_nodes());
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        for (const Param& p : g.node(id).params) before[id].push_back(p.value.data);
    }

    TrainConfig config;
    config.learning_rate = 0.1;
    config.epochs = 4;
    config.batch_size = 4;
    config.seed = 45;
    config.mode = TrainMode::Ots;
    train(g, ds, config);

    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        bool is_head = std::find(heads.begin(), heads.end(), id) != heads.end();
        for (std::size_t p = 0; p < g.node(id).params.size(); ++p) {
            if (is_head) {
                CHECK(g.node(id).params[p].value.data != before[id][p]);
            } else {
                CHECK(g.node(id).params[p].value.data == before[id][p]);  // bit-identical
            }
        }
    }
}

TEST_CASE("training rejects a dataset whose class count mismatches the model") {
    BackboneSpec backbone = tiny_backbone();
    Graph g = build_multiscale(backbone, TapSet::of({1}), 3, normal_init(1));
    Dataset ds = separable_dataset(8, 6, 2);  // 2 classes
    TrainConfig config;
    expect_error([&] { train(g, ds, config); }, ErrorCode::Argument, "class count");
    expect_error([&] { evaluate(g, ds, ds.val_idx, 1); }, ErrorCode::Argument, "class count");
}

TEST_CASE("train config validation") {
    TrainConfig config;
    config.learning_rate = -0.1;
    expect_error([&] { config.validate(); }, ErrorCode::Argument, "learning rate");
    config.learning_rate = 0.01;
    config.momentum = 1.0;
    expect_error([&] { config.validate(); }, ErrorCode::Argument, "momentum");
    config.momentum = 0.9;
    config.epochs = 0;
    expect_error([&] { config.validate(); }, ErrorCode::Argument, "epoch");
    config.epochs = 1;
    config.batch_size = 0;
    expect_error([&] { config.validate(); }, ErrorCode::Argument, "batch");

    CHECK(train_mode_from_string("ots") == TrainMode::Ots);
    CHECK(train_mode_from_string("finetune") == TrainMode::FineTune);
    CHECK(std::string(train_mode_name(TrainMode::Ots)) == "ots");
    expect_error([&] { train_mode_from_string("sgd"); }, ErrorCode::Argument, "mode");
}

TEST_CASE("evaluate scores a constant-prediction model at chance") {
    // zero weights with a bias favouring class 1: every image predicts 1
    BackboneSpec backbone = tiny_backbone();
    Graph g = build_multiscale(backbone, TapSet::of({1}), 2, {});
    std::uint32_t head = head_fc_ids(g)[0];
    g.node_mut(head).params[1].value.data = {0.0, 1.0};

    Dataset ds = separable_dataset(8, 9, 54);
    EvalResult eval = evaluate(g, ds, ds.train_idx, 1);
    CHECK(eval.accuracy == doctest::Approx(0.5));  // balanced two-class split
    CHECK(eval.per_class_accuracy[0] == 0.0);
    CHECK(eval.per_class_accuracy[1] == 1.0);

    // confusion row sums equal the per-class support
    std::vector<int> support(2, 0);
    for (int i : ds.train_idx) support[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])]++;
    for (std::size_t k = 0; k < 2; ++k) {
        int row = 0;
        for (int c : eval.confusion[k]) row += c;
        CHECK(row == support[k]);
    }
}

TEST_CASE("evaluate breaks prediction ties toward the lower class id") {
    // all-zero parameters: every logit is 0 for every input
    BackboneSpec backbone = tiny_backbone();
    Graph g = build_multiscale(backbone, TapSet::of({1}), 3, {});
    Dataset ds;
    ds.num_classes = 3;
    for (int i = 0; i < 3; ++i) {
        ds.images.push_back(Tensor::full(Shape{{8, 8, 1}}, 0.5));
        ds.labels.push_back(i);
        ds.train_idx.push_back(i);
    }
    EvalResult eval = evaluate(g, ds, ds.train_idx, 1);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(eval.confusion[k][0] == 1);  // everything lands on class 0
    }
}

// gradient_check differences bias entries too, and a zero bias can sit exactly
// on a ReLU hinge when a whole patch upstream is clamped; probing models with
// non-zero biases keeps every comparison on smooth ground
void randomize_biases(Graph& g, Rng& rng) {
    for (std::uint32_t id = 0; id < g.num_nodes(); ++id) {
        for (Param& prm : g.node_mut(id).params) {
            if (prm.name != "bias") continue;
            for (double& v : prm.value.data) {
                double mag = rng.uniform(0.05, 0.3);
                v = rng.uniform_int(0, 1) ? mag : -mag;
            }
        }
    }
}

TEST_CASE("gradient_check passes on a chain and on a multiscale DAG") {
    Rng rng(64);
    BackboneSpec backbone = testsup::random_backbone(rng, 3);
    Graph chain = build_chain(backbone, 3, normal_init(65));
    randomize_biases(chain, rng);
    Tensor input = testsup::kink_free_input(chain, 66);
    GradCheckResult r = gradient_check(chain, input, 1, 1e-5, 64, 67);
    CHECK(r.max_rel_error < 1e-4);

    Graph dag = build_multiscale(backbone, testsup::random_taps(rng, backbone, 3), 3,
                                 normal_init(68));
    randomize_biases(dag, rng);
    Tensor dag_input = testsup::kink_free_input(dag, 69);
    GradCheckResult rd = gradient_check(dag, dag_input, 2, 1e-5, 64, 70);
    CHECK(rd.max_rel_error < 1e-4);
}

TEST_CASE("gradient_check would catch a doubled Add backward") {
    // simulate the classic duplicate-output bug: if Add's backward doubled the
    // signal, every FC-head gradient would double, and the finite-difference
    // comparison must flag it with a large relative error
    Rng rng(74);
    BackboneSpec backbone = testsup::random_backbone(rng, 2);
    Graph g = build_multiscale(backbone, testsup::random_taps(rng, backbone, 2), 3,
                               normal_init(75));
    Tensor input = testsup::kink_free_input(g, 76);
    int label = 1;

    ExecContext ctx;
    forward(g, ctx, input, label);
    backward(g, ctx);
    std::uint32_t head = head_fc_ids(g)[0];
    const Tensor& analytic = ctx.param_grads[head][0];

    // the healthy gradient agrees with central differences...
    std::size_t j = 0;
    for (std::size_t i = 0; i < analytic.data.size(); ++i) {
        if (std::abs(analytic.data[i]) > std::abs(analytic.data[j])) j = i;
    }
    double& w = g.node_mut(head).params[0].value.data[j];
    double saved = w;
    const double step = 1e-5;
    ExecContext cp, cm;
    w = saved + step;
    double plus = forward(g, cp, input, label);
    w = saved - step;
    double minus = forward(g, cm, input, label);
    w = saved;
    double numeric = (plus - minus) / (2.0 * step);
    CHECK(testsup::rel_err(analytic.data[j], numeric) < 1e-6);

    // ...and the doubled gradient is flagged. With the max-normalized error
    // metric, doubling lands at |2g - g| / |2g| = 0.5.
    double corrupted = 2.0 * analytic.data[j];
    CHECK(testsup::rel_err(corrupted, numeric) > 0.3);
}

TEST_CASE("gradient_check reports the step-size contract") {
    Graph g;
    Hyper in;
    in.in_h = 1;
    in.in_w = 1;
    in.in_c = 2;
    std::uint32_t input = g.add_node(LayerKind::Input, {}, in);
    g.add_node(LayerKind::SoftmaxLoss, {input});
    expect_error([&] { gradient_check(g, Tensor::zeros(Shape{{1, 1, 2}}), 0, 0.0); },
                 ErrorCode::Argument, "step");
}

TEST_CASE("kink_margin measures the distance to ReLU and MaxPool kinks") {
    Graph g;
    Hyper in;
    in.in_h = 1;
    in.in_w = 1;
    in.in_c = 3;
    std::uint32_t input = g.add_node(LayerKind::Input, {}, in);
    std::uint32_t r = g.add_node(LayerKind::ReLU, {input});
    g.add_node(LayerKind::SoftmaxLoss, {r});
    CHECK(kink_margin(g, Tensor::from(Shape{{1, 1, 3}}, {0.3, -0.7, 1.2})) ==
          doctest::Approx(0.3).epsilon(1e-12));

    Graph p;
    Hyper pin;
    pin.in_h = 2;
    pin.in_w = 2;
    pin.in_c = 1;
    std::uint32_t pi = p.add_node(LayerKind::Input, {}, pin);
    Hyper pool;
    pool.window = 2;
    pool.pool_stride = 2;
    std::uint32_t pp = p.add_node(LayerKind::MaxPool, {pi}, pool);
    std::uint32_t gap = p.add_node(LayerKind::GlobalAvgPool, {pp});
    Hyper fc;
    fc.units = 2;
    std::uint32_t f = p.add_node(LayerKind::FullyConnected, {gap}, fc);
    p.add_node(LayerKind::SoftmaxLoss, {f});
    // window values 1,4,2,3: the top two are 4 and 3
    CHECK(kink_margin(p, Tensor::from(Shape{{2, 2, 1}}, {1, 4, 2, 3})) ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a single tap at the last ReLU traces a gradient ratio of one") {
    BackboneSpec backbone = tiny_backbone();
    Dataset ds = separable_dataset(8, 9, 84);
    TrainConfig config;
    config.learning_rate = 0.05;
    config.epochs = 3;
    config.batch_size = 4;
    config.seed = 85;
    GradTraceResult trace = grad_trace_experiment(backbone, TapSet::of({3}), ds, config);
    REQUIRE(trace.ratio.size() == 3);
    for (double r : trace.ratio) {
        CHECK(r == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (double v : trace.chain) {
        CHECK(v >= 0.0);
        CHECK(std::isfinite(v));
    }
}

TEST_CASE("metrics CSV carries the documented columns") {
    std::string dir = testsup::scratch_dir("train-csv");
    BackboneSpec backbone = tiny_backbone();
    Graph g = build_multiscale(backbone, TapSet::of({1}), 2, normal_init(93));
    Dataset ds = separable_dataset(8, 9, 94);
    TrainConfig config;
    config.learning_rate = 0.05;
    config.epochs = 2;
    config.batch_size = 4;
    config.seed = 95;
    TrainResult result = train(g, ds, config);
    write_metrics_csv(result, dir + "/metrics.csv");
    std::string text = testsup::read_file_bytes(dir + "/metrics.csv");
    CHECK(text.find("epoch,split,loss,accuracy,grad_mean_abs_layer1") != std::string::npos);
    CHECK(text.find("1,train,") != std::string::npos);
    CHECK(text.find("2,val,") != std::string::npos);

    // the traced first-conv gradient is present and positive on this model
    REQUIRE(result.epochs.size() == 2);
    for (const EpochMetrics& m : result.epochs) {
        CHECK(m.grad_last > 0.0);
        CHECK(m.grad_epoch_mean > 0.0);
    }
}

TEST_CASE("first_conv_id finds the earliest convolution") {
    BackboneSpec backbone = tiny_backbone();
    Graph g = build_multiscale(backbone, TapSet::of({1}), 2, normal_init(99));
    CHECK(first_conv_id(g) == backbone_node_id(0));
}
