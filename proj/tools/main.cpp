// Command-line surface for the multi-scale DAG network toolkit. Everything
// here goes through the public C API; the heavy lifting lives in the library.

#include <chrono>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dagnet.h"

namespace {

using nlohmann::json;

// exit codes: 0 success, 1 internal/numeric failure, 2 usage/input error
struct ExitError {
    int code;
};

int status_to_exit(dagnet_status s) {
    switch (s) {
        case DAGNET_OK: return 0;
        case DAGNET_ERR_ARGUMENT:
        case DAGNET_ERR_IO:
        case DAGNET_ERR_FORMAT: return 2;
        case DAGNET_ERR_NUMERIC:
        case DAGNET_ERR_INTERNAL: return 1;
    }
    return 1;
}

void check(dagnet_status s) {
    if (s == DAGNET_OK) return;
    std::fprintf(stderr, "error: %s\n", dagnet_last_error());
    throw ExitError{status_to_exit(s)};
}

[[noreturn]] void usage_fail(const std::string& msg) {
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    throw ExitError{2};
}

std::string take_string(char* s) {
    std::string out = s ? s : "";
    dagnet_string_free(s);
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) usage_fail("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string digest_hex(const std::string& path) {
    std::uint64_t d = 0;
    check(dagnet_file_digest(path.c_str(), &d));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, d);
    return buf;
}

std::vector<std::string> dataset_files(const std::string& prefix) {
    std::vector<std::string> out;
    for (const char* split : {"train", "val", "test"}) {
        for (const char* kind : {"images", "labels"}) {
            out.push_back(prefix + "-" + split + "-" + kind + ".idx");
        }
    }
    return out;
}

class Timer {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// One manifest per run: enough to re-run the command and to verify that the
// inputs are the same bytes it originally saw.
struct Manifest {
    std::string command;
    std::vector<std::string> argv;
    std::uint64_t seed = 0;
    std::string config;  // fully resolved, "" when the command takes none
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    json extra = json::object();

    void write(const std::string& path, const Timer& timer) const {
        json j;
        j["command"] = command;
        j["argv"] = argv;
        j["seed"] = seed;
        j["config"] = config;
        json digests = json::object();
        for (const std::string& p : inputs) digests[p] = digest_hex(p);
        j["inputs"] = digests;
        j["outputs"] = outputs;
        for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
        j["duration_seconds"] = timer.seconds();
        std::ofstream out(path);
        if (!out.is_open()) usage_fail("cannot open manifest for writing: " + path);
        out << j.dump(2) << "\n";
        if (!out.good()) usage_fail("failed writing manifest: " + path);
    }
};

struct ModelHandle {
    dagnet_model* p = nullptr;
    ~ModelHandle() { dagnet_model_free(p); }
};

struct DatasetHandle {
    dagnet_dataset* p = nullptr;
    ~DatasetHandle() { dagnet_dataset_free(p); }
};

// flags override config-file values; the merged text is what actually runs
std::string resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::string text = read_text_file(path) + "\n";
    for (const std::string& line : overrides) text += line + "\n";
    char* canon = nullptr;
    check(dagnet_config_resolve(text.c_str(), &canon));
    return take_string(canon);
}

void override_num(const CLI::App* cmd, const char* flag, const char* key, double value,
                  std::vector<std::string>& out) {
    if (!cmd->count(flag)) return;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out.push_back(std::string(key) + " = " + buf);
}

void override_int(const CLI::App* cmd, const char* flag, const char* key, int value,
                  std::vector<std::string>& out) {
    if (!cmd->count(flag)) return;
    out.push_back(std::string(key) + " = " + std::to_string(value));
}

// ---------------------------------------------------------------------------

struct CommonArgs {
    std::string config;
    std::string data;
    std::string out;
    std::string taps = "all";
    std::string mode = "finetune";
    std::string split = "test";
    std::string model;
    std::uint64_t seed = 0;
    int jobs = 1;
    // config overrides
    double lr = 0.0, momentum = 0.0, weight_decay = 0.0, noise = 0.0, probe_lr = 0.0;
    int batch = 0, epochs = 0, probe_iters = 0, per_class = 0, size = 0;
    // retrieve
    std::vector<int> layers;
    int query = 0;
    int count = 7;
    // diagnose variants
    bool gradcheck = false;
    bool gradtrace = false;
    double step = 1e-5;
};

std::vector<std::string> train_overrides(const CLI::App* cmd, const CommonArgs& a) {
    std::vector<std::string> lines;
    override_num(cmd, "--lr", "lr", a.lr, lines);
    override_num(cmd, "--momentum", "momentum", a.momentum, lines);
    override_num(cmd, "--weight-decay", "weight_decay", a.weight_decay, lines);
    override_int(cmd, "--batch", "batch", a.batch, lines);
    override_int(cmd, "--epochs", "epochs", a.epochs, lines);
    override_int(cmd, "--probe-iters", "probe_iters", a.probe_iters, lines);
    override_num(cmd, "--probe-lr", "probe_lr", a.probe_lr, lines);
    return lines;
}

int run_gen_synth(const CLI::App* cmd, const CommonArgs& a,
                  const std::vector<std::string>& argv) {
    Timer timer;
    std::vector<std::string> lines;
    override_int(cmd, "--size", "size", a.size, lines);
    override_int(cmd, "--per-class", "per_class", a.per_class, lines);
    override_num(cmd, "--noise", "noise", a.noise, lines);
    std::string config = resolve_config(a.config, lines);

    DatasetHandle ds;
    check(dagnet_dataset_gen_synth(config.c_str(), a.seed, &ds.p));
    check(dagnet_dataset_save(ds.p, a.out.c_str()));

    std::uint64_t n = 0;
    int32_t classes = 0, h = 0, w = 0;
    check(dagnet_dataset_info(ds.p, &n, &classes, &h, &w));
    std::printf("wrote %" PRIu64 " images (%dx%d, %d classes) under %s\n", n, h, w, classes,
                a.out.c_str());

    Manifest m;
    m.command = "gen-synth";
    m.argv = argv;
    m.seed = a.seed;
    m.config = config;
    m.inputs = {a.config};
    m.outputs = dataset_files(a.out);
    m.write(a.out + "-manifest.json", timer);
    return 0;
}

int run_train(const CLI::App* cmd, const CommonArgs& a, const std::vector<std::string>& argv) {
    Timer timer;
    std::string config = resolve_config(a.config, train_overrides(cmd, a));

    DatasetHandle ds;
    check(dagnet_dataset_load(a.data.c_str(), &ds.p));

    Manifest m;
    m.command = "train";
    m.argv = argv;
    m.seed = a.seed;
    m.config = config;
    m.inputs = {a.config};
    for (const std::string& f : dataset_files(a.data)) m.inputs.push_back(f);

    std::string taps = a.taps;
    if (taps == "auto") {
        char* selected = nullptr;
        check(dagnet_select_run(config.c_str(), ds.p, nullptr, a.seed, a.jobs, a.out.c_str(),
                                &selected));
        taps = take_string(selected);
        if (taps.empty()) usage_fail("tap selection chose no layers; pass --taps explicitly");
        std::printf("selected taps: %s\n", taps.c_str());
        for (const char* suffix : {"-bank.dagbank", "-layers.csv", "-classes.csv",
                                   "-pooled-vs-full.csv", "-selection.csv"}) {
            m.outputs.push_back(a.out + suffix);
        }
    }

    ModelHandle model;
    check(dagnet_model_build(config.c_str(), taps.c_str(), a.seed, &model.p));

    std::string metrics_path = a.out + "-metrics.csv";
    check(dagnet_train_run(model.p, ds.p, config.c_str(), a.mode.c_str(), a.seed, a.jobs,
                           metrics_path.c_str()));
    std::string model_path = a.out + "-model.dagnet";
    check(dagnet_model_save(model.p, model_path.c_str()));

    double val_acc = 0.0;
    check(dagnet_eval_run(model.p, ds.p, "val", a.jobs, nullptr, &val_acc));
    std::printf("trained %s model (taps %s): val accuracy %.4f\n", a.mode.c_str(), taps.c_str(),
                val_acc);

    m.outputs.push_back(metrics_path);
    m.outputs.push_back(model_path);
    m.extra["taps"] = taps;
    m.extra["mode"] = a.mode;
    m.write(a.out + "-manifest.json", timer);
    return 0;
}

int run_eval(const CommonArgs& a, const std::vector<std::string>& argv) {
    Timer timer;
    ModelHandle model;
    check(dagnet_model_load(a.model.c_str(), &model.p));
    DatasetHandle ds;
    check(dagnet_dataset_load(a.data.c_str(), &ds.p));

    std::string report_path = a.out + "-eval.csv";
    double accuracy = 0.0;
    check(dagnet_eval_run(model.p, ds.p, a.split.c_str(), a.jobs, report_path.c_str(),
                          &accuracy));
    std::printf("%s accuracy %.17g\n", a.split.c_str(), accuracy);

    Manifest m;
    m.command = "eval";
    m.argv = argv;
    m.inputs = {a.model};
    for (const std::string& f : dataset_files(a.data)) m.inputs.push_back(f);
    m.outputs = {report_path};
    m.extra["accuracy"] = accuracy;
    m.write(a.out + "-manifest.json", timer);
    return 0;
}

int run_select(const CLI::App* cmd, const CommonArgs& a, const std::vector<std::string>& argv) {
    Timer timer;
    std::string config = resolve_config(a.config, train_overrides(cmd, a));

    DatasetHandle ds;
    check(dagnet_dataset_load(a.data.c_str(), &ds.p));

    char* selected = nullptr;
    check(dagnet_select_run(config.c_str(), ds.p, a.model.empty() ? nullptr : a.model.c_str(),
                            a.seed, a.jobs, a.out.c_str(), &selected));
    std::string taps = take_string(selected);
    std::printf("selected taps: %s\n", taps.c_str());

    Manifest m;
    m.command = "select";
    m.argv = argv;
    m.seed = a.seed;
    m.config = config;
    m.inputs = {a.config};
    for (const std::string& f : dataset_files(a.data)) m.inputs.push_back(f);
    if (!a.model.empty()) m.inputs.push_back(a.model);
    for (const char* suffix : {"-bank.dagbank", "-layers.csv", "-classes.csv",
                               "-pooled-vs-full.csv", "-selection.csv"}) {
        m.outputs.push_back(a.out + suffix);
    }
    m.extra["taps"] = taps;
    m.write(a.out + "-manifest.json", timer);
    return 0;
}

int run_diagnose(const CLI::App* cmd, const CommonArgs& a,
                 const std::vector<std::string>& argv) {
    Timer timer;
    if (a.gradcheck && a.gradtrace) usage_fail("pick one of --gradcheck and --gradtrace");
    if (!a.gradcheck && a.data.empty()) {
        usage_fail("diagnose requires --data (only --gradcheck runs without a dataset)");
    }
    std::string config = resolve_config(a.config, train_overrides(cmd, a));

    Manifest m;
    m.command = "diagnose";
    m.argv = argv;
    m.seed = a.seed;
    m.config = config;
    m.inputs = {a.config};

    if (a.gradcheck) {
        double max_rel = 0.0;
        char* worst = nullptr;
        check(dagnet_gradcheck_run(config.c_str(), a.taps.c_str(), a.seed, a.step, &max_rel,
                                   &worst));
        std::printf("max rel error %.17g at %s\n", max_rel, take_string(worst).c_str());
        m.extra["max_rel_error"] = max_rel;
        m.write(a.out + "-manifest.json", timer);
        return max_rel < 1e-4 ? 0 : 1;
    }

    DatasetHandle ds;
    check(dagnet_dataset_load(a.data.c_str(), &ds.p));
    for (const std::string& f : dataset_files(a.data)) m.inputs.push_back(f);

    if (a.gradtrace) {
        std::string csv_path = a.out + "-gradtrace.csv";
        check(dagnet_gradtrace_run(config.c_str(), ds.p, a.taps.c_str(), a.seed, a.jobs,
                                   csv_path.c_str()));
        std::printf("wrote %s\n", csv_path.c_str());
        m.outputs = {csv_path};
    } else {
        std::string csv_path = a.out + "-diagnose.csv";
        check(dagnet_diagnose_run(config.c_str(), ds.p, a.taps.c_str(), a.seed, a.jobs,
                                  csv_path.c_str()));
        std::printf("wrote %s\n", csv_path.c_str());
        m.outputs = {csv_path};
    }
    m.write(a.out + "-manifest.json", timer);
    return 0;
}

int run_retrieve(const CommonArgs& a, const std::vector<std::string>& argv) {
    Timer timer;
    if (a.layers.empty()) usage_fail("retrieve needs at least one --layer");
    ModelHandle model;
    check(dagnet_model_load(a.model.c_str(), &model.p));
    DatasetHandle ds;
    check(dagnet_dataset_load(a.data.c_str(), &ds.p));

    std::string csv;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        char* text = nullptr;
        check(dagnet_retrieve_run(model.p, ds.p, a.split.c_str(), a.layers[i], a.query,
                                  a.count, a.jobs, &text));
        std::string part = take_string(text);
        if (i > 0) part.erase(0, part.find('\n') + 1);  // keep one header
        csv += part;
    }
    std::fputs(csv.c_str(), stdout);

    std::string csv_path = a.out + "-retrieval.csv";
    std::ofstream out(csv_path);
    if (!out.is_open()) usage_fail("cannot open csv for writing: " + csv_path);
    out << csv;
    if (!out.good()) usage_fail("failed writing csv: " + csv_path);

    Manifest m;
    m.command = "retrieve";
    m.argv = argv;
    m.inputs = {a.model};
    for (const std::string& f : dataset_files(a.data)) m.inputs.push_back(f);
    m.outputs = {csv_path};
    m.write(a.out + "-manifest.json", timer);
    return 0;
}

void add_train_overrides(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--lr", a.lr, "override config lr");
    cmd->add_option("--momentum", a.momentum, "override config momentum");
    cmd->add_option("--weight-decay", a.weight_decay, "override config weight_decay");
    cmd->add_option("--batch", a.batch, "override config batch");
    cmd->add_option("--epochs", a.epochs, "override config epochs");
    cmd->add_option("--probe-iters", a.probe_iters, "override config probe_iters");
    cmd->add_option("--probe-lr", a.probe_lr, "override config probe_lr");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-scale DAG network toolkit"};
    app.require_subcommand(1);
    CommonArgs a;

    CLI::App* gen = app.add_subcommand("gen-synth", "generate the synthetic layoutxtexture task");
    gen->add_option("--config", a.config, "task config file")->required();
    gen->add_option("--seed", a.seed, "random seed");
    gen->add_option("--out", a.out, "output dataset prefix")->required();
    gen->add_option("--size", a.size, "override config size");
    gen->add_option("--per-class", a.per_class, "override config per_class");
    gen->add_option("--noise", a.noise, "override config noise");

    CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
    train->add_option("--config", a.config, "model + training config file")->required();
    train->add_option("--data", a.data, "dataset prefix")->required();
    train->add_option("--out", a.out, "output prefix")->required();
    train->add_option("--taps", a.taps, "all | auto | comma list of ReLU layer indices");
    train->add_option("--mode", a.mode, "finetune | ots")
        ->check(CLI::IsMember({"finetune", "ots"}));
    train->add_option("--seed", a.seed, "random seed");
    train->add_option("--jobs", a.jobs, "worker threads");
    add_train_overrides(train, a);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a saved model");
    eval->add_option("--model", a.model, "model file")->required();
    eval->add_option("--data", a.data, "dataset prefix")->required();
    eval->add_option("--split", a.split, "train | val | test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--jobs", a.jobs, "worker threads");
    eval->add_option("--out", a.out, "output prefix")->required();

    CLI::App* select = app.add_subcommand("select", "per-layer probes + greedy tap selection");
    select->add_option("--config", a.config, "model config file")->required();
    select->add_option("--data", a.data, "dataset prefix")->required();
    select->add_option("--model", a.model, "score features of this saved model instead");
    select->add_option("--seed", a.seed, "random seed");
    select->add_option("--jobs", a.jobs, "worker threads");
    select->add_option("--out", a.out, "output prefix")->required();
    add_train_overrides(select, a);

    CLI::App* diagnose = app.add_subcommand(
        "diagnose", "chain-vs-dag / ots-vs-finetune matrix; --gradcheck; --gradtrace");
    diagnose->add_option("--config", a.config, "model + training config file")->required();
    diagnose->add_option("--data", a.data, "dataset prefix");
    diagnose->add_option("--taps", a.taps, "all | comma list of ReLU layer indices");
    diagnose->add_option("--seed", a.seed, "random seed");
    diagnose->add_option("--jobs", a.jobs, "worker threads");
    diagnose->add_option("--out", a.out, "output prefix")->required();
    diagnose->add_flag("--gradcheck", a.gradcheck,
                       "finite-difference gradient check (exit 0 iff max rel error < 1e-4)");
    diagnose->add_option("--step", a.step, "finite-difference step");
    diagnose->add_flag("--gradtrace", a.gradtrace,
                       "chain-vs-dag first-layer gradient magnitude trace");
    add_train_overrides(diagnose, a);

    CLI::App* retrieve = app.add_subcommand("retrieve", "nearest neighbours by pooled feature");
    retrieve->add_option("--model", a.model, "model file")->required();
    retrieve->add_option("--data", a.data, "dataset prefix")->required();
    retrieve->add_option("--split", a.split, "gallery split: train | val | test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    retrieve->add_option("--layer", a.layers, "ReLU layer index (repeat or comma list)")
        ->delimiter(',');
    retrieve->add_option("--query", a.query, "query row within the gallery split");
    retrieve->add_option("--count", a.count, "neighbours to return");
    retrieve->add_option("--jobs", a.jobs, "worker threads");
    retrieve->add_option("--out", a.out, "output prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    std::vector<std::string> raw_argv(argv + 1, argv + argc);
    try {
        if (app.got_subcommand(gen)) return run_gen_synth(gen, a, raw_argv);
        if (app.got_subcommand(train)) return run_train(train, a, raw_argv);
        if (app.got_subcommand(eval)) return run_eval(a, raw_argv);
        if (app.got_subcommand(select)) return run_select(select, a, raw_argv);
        if (app.got_subcommand(diagnose)) return run_diagnose(diagnose, a, raw_argv);
        if (app.got_subcommand(retrieve)) return run_retrieve(a, raw_argv);
    } catch (const ExitError& e) {
        return e.code;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
