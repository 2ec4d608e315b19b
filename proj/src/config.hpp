#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "multiscale.hpp"
#include "select.hpp"
#include "train.hpp"

namespace dagnet {

// Structured text config: `key = value` lines plus an ordered `layer ...`
// list; `#` starts a comment. Flag overrides are applied with set(), and
// serialize() echoes the fully resolved form for the run manifest.
//
//   input = 32x32x1
//   classes = 16
//   layer conv 3x3 8 stride 1 pad 1
//   layer relu
//   layer maxpool 2 stride 2
struct Config {
    std::vector<std::pair<std::string, std::string>> entries;  // first occurrence order
    std::vector<BackboneLayer> layers;

    bool has(const std::string& key) const;
    // missing key or unparsable value is an error; _or variants default
    std::string get_str(const std::string& key) const;
    std::string get_str_or(const std::string& key, const std::string& def) const;
    long long get_int(const std::string& key) const;
    long long get_int_or(const std::string& key, long long def) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double def) const;
    std::uint64_t get_u64_or(const std::string& key, std::uint64_t def) const;

    void set(const std::string& key, const std::string& value);  // replaces in place
    std::string serialize() const;
};

Config parse_config_text(const std::string& text);
Config parse_config_file(const std::string& path);

std::string layer_line(const BackboneLayer& layer);
std::vector<int> parse_int_list(const std::string& csv);  // "1,4,7"

// ---- typed views ----

// requires `input = HxWxC` and a non-empty layer list
BackboneSpec backbone_from_config(const Config& cfg);
// keys: lr, momentum, batch, epochs, weight_decay (mode/seed/jobs come from flags)
TrainConfig train_config_from_config(const Config& cfg);
// keys: size, k_coarse, k_fine, per_class, noise, train_frac, val_frac
SynthTaskConfig synth_from_config(const Config& cfg);
// keys: probe_iters, probe_lr
ProbeConfig probe_from_config(const Config& cfg);
int classes_from_config(const Config& cfg);
double l2n_epsilon_from_config(const Config& cfg);

// `target = HxW` + `mean = m1,m2,...` (both optional); returns a preprocessed
// copy when either is present, otherwise the dataset unchanged
Dataset apply_preprocess(const Dataset& ds, const Config& cfg);

}  // namespace dagnet
