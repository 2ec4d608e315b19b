#include <functional>
#include <string>
#include <vector>

#include "config.hpp"
#include "doctest.h"
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

const char* kSampleConfig =
    "# toy model\n"
    "input = 8x8x1\n"
    "\n"
    "classes = 4        # comment after a value\n"
    "lr = 0.125\n"
    "layer conv 3x3 8 stride 1 pad 1\n"
    "layer relu\n"
    "layer maxpool 2 stride 2\n";

}  // namespace

TEST_CASE("parsing skips comments and blank lines and keeps entry order") {
    Config cfg = parse_config_text(kSampleConfig);
    REQUIRE(cfg.entries.size() == 3);
    CHECK(cfg.entries[0].first == "input");
    CHECK(cfg.entries[1].first == "classes");
    CHECK(cfg.entries[2].first == "lr");
    CHECK(cfg.get_str("input") == "8x8x1");
    CHECK(cfg.get_int("classes") == 4);
    CHECK(cfg.get_double("lr") == 0.125);
    REQUIRE(cfg.layers.size() == 3);
    CHECK(cfg.layers[0].kind == LayerKind::Conv);
    CHECK(cfg.layers[1].kind == LayerKind::ReLU);
    CHECK(cfg.layers[2].kind == LayerKind::MaxPool);
}

TEST_CASE("typed getters validate their values") {
    Config cfg = parse_config_text("a = hello\nb = 12\nc = 1.5\n");
    expect_error([&] { cfg.get_str("missing"); }, ErrorCode::Argument, "missing config key");
    expect_error([&] { cfg.get_int("a"); }, ErrorCode::Argument, "not an integer");
    expect_error([&] { cfg.get_int("c"); }, ErrorCode::Argument, "not an integer");
    expect_error([&] { cfg.get_double("a"); }, ErrorCode::Argument, "not a number");
    CHECK(cfg.get_int_or("b", 7) == 12);
    CHECK(cfg.get_int_or("nope", 7) == 7);
    CHECK(cfg.get_double_or("c", 0.0) == 1.5);
    CHECK(cfg.get_double_or("nope", 2.5) == 2.5);
    CHECK(cfg.get_str_or("a", "x") == "hello");
    CHECK(cfg.get_str_or("nope", "x") == "x");
    CHECK(cfg.get_u64_or("b", 0) == 12);
    CHECK(cfg.get_u64_or("nope", 3) == 3);
    Config neg = parse_config_text("s = -4\n");
    expect_error([&] { neg.get_u64_or("s", 0); }, ErrorCode::Argument, ">= 0");
}

TEST_CASE("set replaces a key in place without reordering") {
    Config cfg = parse_config_text("a = 1\nb = 2\nc = 3\n");
    cfg.set("b", "20");
    REQUIRE(cfg.entries.size() == 3);
    CHECK(cfg.entries[1].first == "b");
    CHECK(cfg.entries[1].second == "20");
    cfg.set("d", "4");  // new keys append
    CHECK(cfg.entries.back().first == "d");

    // a repeated key inside the text also replaces in place
    Config dup = parse_config_text("a = 1\nb = 2\na = 9\n");
    REQUIRE(dup.entries.size() == 2);
    CHECK(dup.entries[0].second == "9");
}

TEST_CASE("serialize and reparse is a fixed point") {
    Config cfg = parse_config_text(kSampleConfig);
    std::string once = cfg.serialize();
    Config reparsed = parse_config_text(once);
    CHECK(reparsed.serialize() == once);
    CHECK(reparsed.entries == cfg.entries);
    REQUIRE(reparsed.layers.size() == cfg.layers.size());
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        CHECK(layer_line(reparsed.layers[i]) == layer_line(cfg.layers[i]));
    }
}

TEST_CASE("layer lines parse every option and round-trip through layer_line") {
    Config cfg = parse_config_text(
        "layer conv 5x3 16 stride 2 pad 2\n"
        "layer relu\n"
        "layer maxpool 3\n"
        "layer maxpool 3 stride 1\n");
    REQUIRE(cfg.layers.size() == 4);
    CHECK(cfg.layers[0].hyper.kh == 5);
    CHECK(cfg.layers[0].hyper.kw == 3);
    CHECK(cfg.layers[0].hyper.out_channels == 16);
    CHECK(cfg.layers[0].hyper.stride == 2);
    CHECK(cfg.layers[0].hyper.pad == 2);
    CHECK(layer_line(cfg.layers[0]) == "layer conv 5x3 16 stride 2 pad 2");
    CHECK(layer_line(cfg.layers[1]) == "layer relu");
    // a bare window leaves the pool stride equal to the window
    CHECK(cfg.layers[2].hyper.window == 3);
    CHECK(cfg.layers[2].hyper.pool_stride == 3);
    CHECK(layer_line(cfg.layers[2]) == "layer maxpool 3 stride 3");
    CHECK(cfg.layers[3].hyper.pool_stride == 1);
}

TEST_CASE("bad layer lines are rejected with the offending text") {
    expect_error([] { parse_config_text("layer\n"); }, ErrorCode::Argument, "no kind");
    expect_error([] { parse_config_text("layer conv 3x3\n"); }, ErrorCode::Argument, "conv layer");
    expect_error([] { parse_config_text("layer conv 3x3x3 8\n"); }, ErrorCode::Argument,
                 "KhxKw");
    expect_error([] { parse_config_text("layer maxpool\n"); }, ErrorCode::Argument,
                 "needs a window");
    expect_error([] { parse_config_text("layer dropout 0.5\n"); }, ErrorCode::Argument,
                 "unknown layer kind");
    expect_error([] { parse_config_text("layer conv 3x3 8 dilation 2\n"); }, ErrorCode::Argument,
                 "unknown layer option");
    expect_error([] { parse_config_text("layer conv 3x3 8 stride\n"); }, ErrorCode::Argument,
                 "missing its value");
    expect_error([] { parse_config_text("layer maxpool 2 pad 1\n"); }, ErrorCode::Argument,
                 "unknown layer option");
}

TEST_CASE("keys that merely start with 'layer' stay ordinary entries") {
    Config cfg = parse_config_text("layers = 5\n");
    CHECK(cfg.layers.empty());
    CHECK(cfg.get_int("layers") == 5);
}

TEST_CASE("malformed lines report their line number") {
    expect_error([] { parse_config_text("a = 1\nnot a kv line\n"); }, ErrorCode::Argument,
                 "line 2");
    expect_error([] { parse_config_text("= 3\n"); }, ErrorCode::Argument, "empty key");
    expect_error([] { parse_config_file("/nonexistent/cfg.txt"); }, ErrorCode::Io,
                 "cannot open config file");
}

TEST_CASE("parse_int_list splits on commas and trims spaces") {
    CHECK(parse_int_list("1,4,7") == std::vector<int>{1, 4, 7});
    CHECK(parse_int_list(" 2 , 3 ") == std::vector<int>{2, 3});
    CHECK(parse_int_list("9") == std::vector<int>{9});
    expect_error([] { parse_int_list(""); }, ErrorCode::Argument, "empty list");
    expect_error([] { parse_int_list("1,,2"); }, ErrorCode::Argument, "empty entry");
    expect_error([] { parse_int_list("1,x"); }, ErrorCode::Argument, "not an integer");
}

TEST_CASE("backbone_from_config builds a validated spec") {
    Config cfg = parse_config_text(kSampleConfig);
    BackboneSpec spec = backbone_from_config(cfg);
    CHECK(spec.in_h == 8);
    CHECK(spec.in_w == 8);
    CHECK(spec.in_c == 1);
    CHECK(spec.layers.size() == 3);

    Config flat = parse_config_text("input = 8x8\nlayer relu\n");
    expect_error([&] { backbone_from_config(flat); }, ErrorCode::Argument, "HxWxC");

    // validation runs: a conv with no following relu is not a legal backbone
    Config badnet = parse_config_text("input = 8x8x1\nlayer conv 3x3 4\n");
    expect_error([&] { backbone_from_config(badnet); }, ErrorCode::Argument, "ReLU");
}

TEST_CASE("train_config_from_config reads overrides and keeps defaults") {
    Config cfg = parse_config_text("lr = 0.5\nbatch = 8\nepochs = 3\n");
    TrainConfig tc = train_config_from_config(cfg);
    CHECK(tc.learning_rate == 0.5);
    CHECK(tc.batch_size == 8);
    CHECK(tc.epochs == 3);
    CHECK(tc.momentum == TrainConfig{}.momentum);
    CHECK(tc.weight_decay == TrainConfig{}.weight_decay);

    Config bad = parse_config_text("lr = -1\n");
    expect_error([&] { train_config_from_config(bad); }, ErrorCode::Argument, "learning rate");
}

TEST_CASE("synth and probe sections expose their keys") {
    Config cfg = parse_config_text(
        "size = 16\nk_coarse = 2\nk_fine = 3\nper_class = 12\nnoise = 0.01\n"
        "train_frac = 0.5\nval_frac = 0.25\nprobe_iters = 50\nprobe_lr = 0.25\n");
    SynthTaskConfig sc = synth_from_config(cfg);
    CHECK(sc.size == 16);
    CHECK(sc.k_coarse == 2);
    CHECK(sc.k_fine == 3);
    CHECK(sc.per_class == 12);
    CHECK(sc.noise == 0.01);
    ProbeConfig pc = probe_from_config(cfg);
    CHECK(pc.iterations == 50);
    CHECK(pc.learning_rate == 0.25);

    Config empty = parse_config_text("");
    SynthTaskConfig defaults = synth_from_config(empty);
    CHECK(defaults.size == SynthTaskConfig{}.size);
    CHECK(defaults.per_class == SynthTaskConfig{}.per_class);
}

TEST_CASE("classes_from_config insists on at least two classes") {
    CHECK(classes_from_config(parse_config_text("classes = 6\n")) == 6);
    expect_error([] { classes_from_config(parse_config_text("classes = 1\n")); },
                 ErrorCode::Argument, ">= 2");
    expect_error([] { classes_from_config(parse_config_text("")); }, ErrorCode::Argument,
                 "missing config key");
}

TEST_CASE("the branch recipe keys accept only the supported variants") {
    Config empty = parse_config_text("");
    CHECK(l2n_epsilon_from_config(empty) == 1e-12);
    CHECK(l2n_epsilon_from_config(parse_config_text("l2n_epsilon = 1e-6\n")) == 1e-6);
    CHECK(l2n_epsilon_from_config(parse_config_text("pooling = avg\nnormalize = l2\n")) ==
          1e-12);
    expect_error([] { l2n_epsilon_from_config(parse_config_text("pooling = max\n")); },
                 ErrorCode::Argument, "average pooling");
    expect_error([] { l2n_epsilon_from_config(parse_config_text("normalize = none\n")); },
                 ErrorCode::Argument, "L2 normalization");
    expect_error([] { l2n_epsilon_from_config(parse_config_text("l2n_epsilon = 0\n")); },
                 ErrorCode::Argument, "> 0");
}

TEST_CASE("apply_preprocess is the identity without target or mean keys") {
    Dataset ds;
    ds.num_classes = 2;
    ds.images.push_back(Tensor::full(Shape{{4, 4, 1}}, 0.25));
    ds.labels.push_back(0);
    ds.train_idx.push_back(0);
    Dataset out = apply_preprocess(ds, parse_config_text("lr = 0.1\n"));
    CHECK(out.images[0].data == ds.images[0].data);
    CHECK(out.target_h == 0);
    CHECK(out.channel_mean.empty());
}

TEST_CASE("apply_preprocess resizes and subtracts the mean per the config") {
    Dataset ds;
    ds.num_classes = 2;
    ds.images.push_back(Tensor::full(Shape{{4, 4, 1}}, 0.75));
    ds.labels.push_back(1);
    ds.train_idx.push_back(0);

    Dataset out = apply_preprocess(ds, parse_config_text("target = 2x2\nmean = 0.5\n"));
    REQUIRE(out.images[0].shape == Shape{{2, 2, 1}});
    for (double v : out.images[0].data) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(out.target_h == 2);
    CHECK(out.target_w == 2);
    CHECK(out.channel_mean == std::vector<double>{0.5});

    // mean alone, no resize
    Dataset just_mean = apply_preprocess(ds, parse_config_text("mean = 0.75\n"));
    REQUIRE(just_mean.images[0].shape == Shape{{4, 4, 1}});
    for (double v : just_mean.images[0].data) CHECK(v == doctest::Approx(0.0));

    expect_error([&] { apply_preprocess(ds, parse_config_text("mean = 0.1,0.2\n")); },
                 ErrorCode::Argument, "one value or one per channel");
    expect_error([&] { apply_preprocess(ds, parse_config_text("target = 2x2x1\n")); },
                 ErrorCode::Argument, "HxW");
}
