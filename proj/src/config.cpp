#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace dagnet {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> tokens_of(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

long long parse_ll(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(value, &used);
        require(used == value.size(), ErrorCode::Argument, "");
        return v;
    } catch (...) {
        fail(ErrorCode::Argument, "config key '" + key + "' is not an integer: " + value);
    }
}

double parse_dbl(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        require(used == value.size(), ErrorCode::Argument, "");
        return v;
    } catch (...) {
        fail(ErrorCode::Argument, "config key '" + key + "' is not a number: " + value);
    }
}

// "AxB" or "AxBxC"
std::vector<int> parse_dims(const std::string& key, const std::string& value) {
    std::vector<int> dims;
    std::string part;
    std::istringstream is(value);
    while (std::getline(is, part, 'x')) {
        dims.push_back(static_cast<int>(parse_ll(key, trim(part))));
    }
    require(dims.size() == 2 || dims.size() == 3, ErrorCode::Argument,
            "config key '" + key + "' must look like HxW or HxWxC: " + value);
    return dims;
}

BackboneLayer parse_layer(const std::string& line) {
    std::vector<std::string> toks = tokens_of(line);
    require(toks.size() >= 2, ErrorCode::Argument, "layer line has no kind: " + line);
    BackboneLayer layer;
    std::size_t next = 2;
    if (toks[1] == "conv") {
        require(toks.size() >= 4, ErrorCode::Argument,
                "conv layer needs a kernel and channel count: " + line);
        std::vector<int> k = parse_dims("layer conv", toks[2]);
        require(k.size() == 2, ErrorCode::Argument, "conv kernel must look like KhxKw: " + line);
        layer.kind = LayerKind::Conv;
        layer.hyper.kh = k[0];
        layer.hyper.kw = k[1];
        layer.hyper.out_channels = static_cast<int>(parse_ll("layer conv", toks[3]));
        next = 4;
    } else if (toks[1] == "relu") {
        layer.kind = LayerKind::ReLU;
    } else if (toks[1] == "maxpool") {
        require(toks.size() >= 3, ErrorCode::Argument, "maxpool layer needs a window: " + line);
        layer.kind = LayerKind::MaxPool;
        layer.hyper.window = static_cast<int>(parse_ll("layer maxpool", toks[2]));
        layer.hyper.pool_stride = layer.hyper.window;  // default: non-overlapping
        next = 3;
    } else {
        fail(ErrorCode::Argument, "unknown layer kind: " + toks[1]);
    }
    while (next < toks.size()) {
        require(next + 1 < toks.size(), ErrorCode::Argument,
                "layer option '" + toks[next] + "' is missing its value: " + line);
        const std::string& opt = toks[next];
        int value = static_cast<int>(parse_ll("layer " + opt, toks[next + 1]));
        if (opt == "stride" && layer.kind == LayerKind::Conv) {
            layer.hyper.stride = value;
        } else if (opt == "stride" && layer.kind == LayerKind::MaxPool) {
            layer.hyper.pool_stride = value;
        } else if (opt == "pad" && layer.kind == LayerKind::Conv) {
            layer.hyper.pad = value;
        } else {
            fail(ErrorCode::Argument, "unknown layer option '" + opt + "': " + line);
        }
        next += 2;
    }
    return layer;
}

}  // namespace

bool Config::has(const std::string& key) const {
    for (const auto& e : entries) {
        if (e.first == key) return true;
    }
    return false;
}

std::string Config::get_str(const std::string& key) const {
    for (const auto& e : entries) {
        if (e.first == key) return e.second;
    }
    fail(ErrorCode::Argument, "missing config key: " + key);
}

std::string Config::get_str_or(const std::string& key, const std::string& def) const {
    return has(key) ? get_str(key) : def;
}

long long Config::get_int(const std::string& key) const {
    return parse_ll(key, get_str(key));
}

long long Config::get_int_or(const std::string& key, long long def) const {
    return has(key) ? get_int(key) : def;
}

double Config::get_double(const std::string& key) const {
    return parse_dbl(key, get_str(key));
}

double Config::get_double_or(const std::string& key, double def) const {
    return has(key) ? get_double(key) : def;
}

std::uint64_t Config::get_u64_or(const std::string& key, std::uint64_t def) const {
    if (!has(key)) return def;
    long long v = get_int(key);
    require(v >= 0, ErrorCode::Argument, "config key '" + key + "' must be >= 0");
    return static_cast<std::uint64_t>(v);
}

void Config::set(const std::string& key, const std::string& value) {
    for (auto& e : entries) {
        if (e.first == key) {
            e.second = value;
            return;
        }
    }
    entries.emplace_back(key, value);
}

std::string Config::serialize() const {
    std::ostringstream os;
    for (const auto& e : entries) os << e.first << " = " << e.second << "\n";
    for (const BackboneLayer& layer : layers) os << layer_line(layer) << "\n";
    return os.str();
}

Config parse_config_text(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        std::string line = raw;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.rfind("layer", 0) == 0 &&
            (line.size() == 5 || std::isspace(static_cast<unsigned char>(line[5])))) {
            cfg.layers.push_back(parse_layer(line));
            continue;
        }
        std::size_t eq = line.find('=');
        require(eq != std::string::npos, ErrorCode::Argument,
                "config line " + std::to_string(line_no) + " is not 'key = value': " + raw);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        require(!key.empty(), ErrorCode::Argument,
                "config line " + std::to_string(line_no) + " has an empty key");
        cfg.set(key, value);
    }
    return cfg;
}

Config parse_config_file(const std::string& path) {
    std::ifstream in(path);
    require(in.is_open(), ErrorCode::Io, "cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

std::string layer_line(const BackboneLayer& layer) {
    std::ostringstream os;
    switch (layer.kind) {
        case LayerKind::Conv:
            os << "layer conv " << layer.hyper.kh << "x" << layer.hyper.kw << " "
               << layer.hyper.out_channels << " stride " << layer.hyper.stride << " pad "
               << layer.hyper.pad;
            break;
        case LayerKind::ReLU:
            os << "layer relu";
            break;
        case LayerKind::MaxPool:
            os << "layer maxpool " << layer.hyper.window << " stride "
               << layer.hyper.pool_stride;
            break;
        default:
            fail(ErrorCode::Internal, "not a backbone layer kind");
    }
    return os.str();
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::string part;
    std::istringstream is(csv);
    while (std::getline(is, part, ',')) {
        part = trim(part);
        require(!part.empty(), ErrorCode::Argument, "empty entry in list: " + csv);
        out.push_back(static_cast<int>(parse_ll("list entry", part)));
    }
    require(!out.empty(), ErrorCode::Argument, "empty list: " + csv);
    return out;
}

BackboneSpec backbone_from_config(const Config& cfg) {
    BackboneSpec spec;
    std::vector<int> dims = parse_dims("input", cfg.get_str("input"));
    require(dims.size() == 3, ErrorCode::Argument, "config key 'input' must look like HxWxC");
    spec.in_h = dims[0];
    spec.in_w = dims[1];
    spec.in_c = dims[2];
    spec.layers = cfg.layers;
    spec.validate();
    return spec;
}

TrainConfig train_config_from_config(const Config& cfg) {
    TrainConfig tc;
    tc.learning_rate = cfg.get_double_or("lr", tc.learning_rate);
    tc.momentum = cfg.get_double_or("momentum", tc.momentum);
    tc.batch_size = static_cast<int>(cfg.get_int_or("batch", tc.batch_size));
    tc.epochs = static_cast<int>(cfg.get_int_or("epochs", tc.epochs));
    tc.weight_decay = cfg.get_double_or("weight_decay", tc.weight_decay);
    tc.validate();
    return tc;
}

SynthTaskConfig synth_from_config(const Config& cfg) {
    SynthTaskConfig sc;
    sc.size = static_cast<int>(cfg.get_int_or("size", sc.size));
    sc.k_coarse = static_cast<int>(cfg.get_int_or("k_coarse", sc.k_coarse));
    sc.k_fine = static_cast<int>(cfg.get_int_or("k_fine", sc.k_fine));
    sc.per_class = static_cast<int>(cfg.get_int_or("per_class", sc.per_class));
    sc.noise = cfg.get_double_or("noise", sc.noise);
    sc.train_frac = cfg.get_double_or("train_frac", sc.train_frac);
    sc.val_frac = cfg.get_double_or("val_frac", sc.val_frac);
    sc.validate();
    return sc;
}

ProbeConfig probe_from_config(const Config& cfg) {
    ProbeConfig pc;
    pc.iterations = static_cast<int>(cfg.get_int_or("probe_iters", pc.iterations));
    pc.learning_rate = cfg.get_double_or("probe_lr", pc.learning_rate);
    return pc;
}

int classes_from_config(const Config& cfg) {
    int k = static_cast<int>(cfg.get_int("classes"));
    require(k >= 2, ErrorCode::Argument, "config key 'classes' must be >= 2");
    return k;
}

double l2n_epsilon_from_config(const Config& cfg) {
    // the branch recipe is fixed; reject configs asking for variants
    std::string pooling = cfg.get_str_or("pooling", "avg");
    require(pooling == "avg", ErrorCode::Argument,
            "only average pooling is supported (pooling = avg)");
    std::string normalize = cfg.get_str_or("normalize", "l2");
    require(normalize == "l2", ErrorCode::Argument,
            "only L2 normalization is supported (normalize = l2)");
    double eps = cfg.get_double_or("l2n_epsilon", 1e-12);
    require(eps > 0.0, ErrorCode::Argument, "config key 'l2n_epsilon' must be > 0");
    return eps;
}

Dataset apply_preprocess(const Dataset& ds, const Config& cfg) {
    bool has_target = cfg.has("target");
    bool has_mean = cfg.has("mean");
    if (!has_target && !has_mean) return ds;

    int channels = ds.images.empty() ? 1 : ds.images[0].shape[2];
    int target_h = ds.images.empty() ? 0 : ds.images[0].shape[0];
    int target_w = ds.images.empty() ? 0 : ds.images[0].shape[1];
    if (has_target) {
        std::vector<int> dims = parse_dims("target", cfg.get_str("target"));
        require(dims.size() == 2, ErrorCode::Argument, "config key 'target' must look like HxW");
        target_h = dims[0];
        target_w = dims[1];
    }
    std::vector<double> mean(static_cast<std::size_t>(channels), 0.0);
    if (has_mean) {
        std::string text = cfg.get_str("mean");
        std::vector<double> values;
        std::string part;
        std::istringstream is(text);
        while (std::getline(is, part, ',')) values.push_back(parse_dbl("mean", trim(part)));
        if (values.size() == 1) {
            std::fill(mean.begin(), mean.end(), values[0]);
        } else {
            require(static_cast<int>(values.size()) == channels, ErrorCode::Argument,
                    "config key 'mean' must list one value or one per channel");
            mean = values;
        }
    }

    Dataset out = ds;
    for (Tensor& img : out.images) img = preprocess(img, target_h, target_w, mean);
    out.target_h = target_h;
    out.target_w = target_w;
    out.channel_mean = mean;
    return out;
}

}  // namespace dagnet
