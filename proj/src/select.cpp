#include "select.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bytes.hpp"
#include "error.hpp"
#include "parallel.hpp"

namespace dagnet {

void LayerFeatureBank::validate() const {
    require(!layer_ids.empty(), ErrorCode::Argument, "bank has no layers");
    require(std::is_sorted(layer_ids.begin(), layer_ids.end()), ErrorCode::Argument,
            "bank layer ids must be ascending");
    require(pooled.size() == layer_ids.size(), ErrorCode::Argument,
            "bank pooled matrices do not match layer count");
    require(full.empty() || full.size() == layer_ids.size(), ErrorCode::Argument,
            "bank full matrices do not match layer count");
    require(num_classes >= 1, ErrorCode::Argument, "bank needs at least one class");
    for (std::size_t n = 0; n < pooled.size(); ++n) {
        require(pooled[n].size() == labels.size(), ErrorCode::Argument,
                "bank row counts differ across layers");
        if (!full.empty()) {
            require(full[n].size() == labels.size(), ErrorCode::Argument,
                    "bank row counts differ across layers");
        }
    }
    for (int l : labels) {
        require(l >= 0 && l < num_classes, ErrorCode::Argument, "bank label out of range");
    }
    for (const std::vector<int>* rows : {&train_rows, &val_rows, &test_rows}) {
        for (int r : *rows) {
            require(r >= 0 && r < static_cast<int>(labels.size()), ErrorCode::Argument,
                    "bank split row out of range");
        }
    }
}

LayerFeatureBank build_feature_bank(const Graph& g, const TapSet& taps, const Dataset& ds,
                                    bool include_full, double epsilon, int jobs) {
    ds.validate();
    require(!ds.images.empty(), ErrorCode::Argument, "dataset is empty");
    require(epsilon > 0.0, ErrorCode::Argument, "normalization epsilon must be > 0");

    LayerFeatureBank bank;
    bank.layer_ids = taps.indices;
    bank.labels = ds.labels;
    bank.num_classes = ds.num_classes;
    bank.train_rows = ds.train_idx;
    bank.val_rows = ds.val_idx;
    bank.test_rows = ds.test_idx;

    std::size_t layers = taps.indices.size();
    std::size_t rows = ds.images.size();
    bank.pooled.assign(layers, std::vector<std::vector<double>>(rows));
    if (include_full) bank.full.assign(layers, std::vector<std::vector<double>>(rows));

    std::vector<std::uint32_t> relu_ids(layers);
    for (std::size_t n = 0; n < layers; ++n) {
        std::uint32_t id = backbone_node_id(taps.indices[n]);
        require(id < g.num_nodes() && g.node(id).kind == LayerKind::ReLU, ErrorCode::Argument,
                "tap index " + std::to_string(taps.indices[n]) + " is not a ReLU node");
        relu_ids[n] = id;
    }

    parallel_for(rows, jobs, [&](std::size_t r) {
        ExecContext ctx;
        forward(g, ctx, ds.images[r]);
        for (std::size_t n = 0; n < layers; ++n) {
            const Tensor& act = ctx.acts[relu_ids[n]];
            bank.pooled[n][r] = l2_normalize(global_avg_pool(act).data, epsilon);
            if (include_full) {
                bank.full[n][r] = l2_normalize(act.data, epsilon);
            }
        }
    });
    bank.validate();
    return bank;
}

// ---------------------------------------------------------------------------
// Bank serialization

namespace {
constexpr char kBankMagic[8] = {'D', 'A', 'G', 'B', 'A', 'N', 'K', '1'};
constexpr std::uint32_t kBankVersion = 1;
}  // namespace

void save_bank(const LayerFeatureBank& bank, const std::string& path) {
    bank.validate();
    std::ofstream out(path, std::ios::binary);
    require(out.is_open(), ErrorCode::Io, "cannot open bank file for writing: " + path);

    out.write(kBankMagic, sizeof(kBankMagic));
    write_u32_le(out, kBankVersion);
    write_u32_le(out, static_cast<std::uint32_t>(bank.layer_ids.size()));
    write_u64_le(out, bank.num_rows());
    write_u32_le(out, static_cast<std::uint32_t>(bank.num_classes));
    write_u8(out, bank.has_full() ? 1 : 0);

    for (std::size_t n = 0; n < bank.layer_ids.size(); ++n) {
        write_u32_le(out, static_cast<std::uint32_t>(bank.layer_ids[n]));
        std::uint32_t pooled_width =
            bank.num_rows() ? static_cast<std::uint32_t>(bank.pooled[n][0].size()) : 0;
        std::uint32_t full_width =
            bank.has_full() && bank.num_rows() ? static_cast<std::uint32_t>(bank.full[n][0].size())
                                               : 0;
        write_u32_le(out, pooled_width);
        write_u32_le(out, full_width);
    }
    for (int l : bank.labels) write_u32_le(out, static_cast<std::uint32_t>(l));

    std::vector<std::uint8_t> split(bank.num_rows(), 3);  // 3 = unassigned
    for (int r : bank.train_rows) split[static_cast<std::size_t>(r)] = 0;
    for (int r : bank.val_rows) split[static_cast<std::size_t>(r)] = 1;
    for (int r : bank.test_rows) split[static_cast<std::size_t>(r)] = 2;
    for (std::uint8_t s : split) write_u8(out, s);

    for (const auto& matrix : bank.pooled) {
        for (const auto& row : matrix) {
            for (double v : row) write_f64_le(out, v);
        }
    }
    for (const auto& matrix : bank.full) {
        for (const auto& row : matrix) {
            for (double v : row) write_f64_le(out, v);
        }
    }
    require(out.good(), ErrorCode::Io, "failed writing bank file: " + path);
}

LayerFeatureBank load_bank(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.is_open(), ErrorCode::Io, "cannot open bank file: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    require(in.gcount() == sizeof(magic) && std::memcmp(magic, kBankMagic, sizeof(magic)) == 0,
            ErrorCode::Format, "bad magic in bank file: " + path);
    std::uint32_t version = read_u32_le(in, "bank version");
    require(version == kBankVersion, ErrorCode::Format, "unsupported bank format version");
    std::uint32_t layer_count = read_u32_le(in, "bank layer count");
    require(layer_count >= 1 && layer_count <= 4096, ErrorCode::Format,
            "bank layer count out of range");
    std::uint64_t row_count = read_u64_le(in, "bank row count");
    std::uint32_t num_classes = read_u32_le(in, "bank class count");
    bool has_full = read_u8(in, "bank full flag") != 0;

    LayerFeatureBank bank;
    bank.num_classes = static_cast<int>(num_classes);
    std::vector<std::uint32_t> pooled_width(layer_count), full_width(layer_count);
    for (std::uint32_t n = 0; n < layer_count; ++n) {
        bank.layer_ids.push_back(static_cast<int>(read_u32_le(in, "bank layer id")));
        pooled_width[n] = read_u32_le(in, "bank pooled width");
        full_width[n] = read_u32_le(in, "bank full width");
    }
    bank.labels.resize(row_count);
    for (auto& l : bank.labels) l = static_cast<int>(read_u32_le(in, "bank label"));
    for (std::uint64_t r = 0; r < row_count; ++r) {
        switch (read_u8(in, "bank split marker")) {
            case 0: bank.train_rows.push_back(static_cast<int>(r)); break;
            case 1: bank.val_rows.push_back(static_cast<int>(r)); break;
            case 2: bank.test_rows.push_back(static_cast<int>(r)); break;
            case 3: break;
            default: fail(ErrorCode::Format, "unknown split marker in bank file");
        }
    }
    auto read_matrix = [&](std::uint32_t width) {
        std::vector<std::vector<double>> matrix(row_count);
        for (auto& row : matrix) {
            row.resize(width);
            for (double& v : row) v = read_f64_le(in, "bank feature value");
        }
        return matrix;
    };
    for (std::uint32_t n = 0; n < layer_count; ++n) bank.pooled.push_back(read_matrix(pooled_width[n]));
    if (has_full) {
        for (std::uint32_t n = 0; n < layer_count; ++n) bank.full.push_back(read_matrix(full_width[n]));
    }
    in.peek();
    require(in.eof(), ErrorCode::Format, "trailing bytes after bank payload in " + path);
    bank.validate();
    return bank;
}

// ---------------------------------------------------------------------------
// Linear probes

LinearProbe train_linear_probe(const std::vector<const std::vector<double>*>& rows,
                               const std::vector<int>& labels, int num_classes,
                               const ProbeConfig& config) {
    require(!rows.empty(), ErrorCode::Argument, "no rows to train on");
    require(rows.size() == labels.size(), ErrorCode::Argument, "row and label counts differ");
    require(num_classes >= 2, ErrorCode::Argument, "need at least two classes");
    require(config.iterations >= 1, ErrorCode::Argument, "probe iterations must be >= 1");
    require(config.learning_rate > 0.0, ErrorCode::Argument, "probe learning rate must be > 0");
    int distinct = 0;
    std::vector<char> seen(static_cast<std::size_t>(num_classes), 0);
    for (int l : labels) {
        require(l >= 0 && l < num_classes, ErrorCode::Argument, "probe label out of range");
        if (!seen[static_cast<std::size_t>(l)]) {
            seen[static_cast<std::size_t>(l)] = 1;
            ++distinct;
        }
    }
    require(distinct >= 2, ErrorCode::Argument, "probe training split has a single class");

    std::size_t dim = rows[0]->size();
    LinearProbe probe;
    probe.weights = Tensor::zeros(Shape{{static_cast<int>(dim), num_classes}});
    probe.bias.assign(static_cast<std::size_t>(num_classes), 0.0);

    double inv_n = 1.0 / static_cast<double>(rows.size());
    Tensor grad_w = Tensor::zeros(probe.weights.shape);
    std::vector<double> grad_b(probe.bias.size());
    for (int it = 0; it < config.iterations; ++it) {
        std::fill(grad_w.data.begin(), grad_w.data.end(), 0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::vector<double>& x = *rows[r];
            require(x.size() == dim, ErrorCode::Argument, "probe rows have unequal widths");
            std::vector<double> scores = fully_connected(x, probe.weights, probe.bias);
            SoftmaxLossResult sm = softmax_cross_entropy(scores, labels[r]);
            for (std::size_t i = 0; i < dim; ++i) {
                double xi = x[i];
                if (xi == 0.0) continue;
                double* wrow = &grad_w.data[i * static_cast<std::size_t>(num_classes)];
                for (int k = 0; k < num_classes; ++k) {
                    wrow[k] += xi * sm.grad_logits[static_cast<std::size_t>(k)];
                }
            }
            for (int k = 0; k < num_classes; ++k) {
                grad_b[static_cast<std::size_t>(k)] += sm.grad_logits[static_cast<std::size_t>(k)];
            }
        }
        for (std::size_t i = 0; i < grad_w.data.size(); ++i) {
            probe.weights.data[i] -= config.learning_rate * inv_n * grad_w.data[i];
        }
        for (std::size_t k = 0; k < grad_b.size(); ++k) {
            probe.bias[k] -= config.learning_rate * inv_n * grad_b[k];
        }
    }
    return probe;
}

int probe_predict(const LinearProbe& probe, const std::vector<double>& row) {
    std::vector<double> scores = fully_connected(row, probe.weights, probe.bias);
    int best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k) {
        if (scores[k] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    }
    return best;
}

double probe_accuracy(const LinearProbe& probe,
                      const std::vector<const std::vector<double>*>& rows,
                      const std::vector<int>& labels) {
    require(!rows.empty(), ErrorCode::Argument, "no rows to evaluate");
    require(rows.size() == labels.size(), ErrorCode::Argument, "row and label counts differ");
    std::size_t correct = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (probe_predict(probe, *rows[r]) == labels[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Per-layer analyses

namespace {

struct SplitRows {
    std::vector<const std::vector<double>*> rows;
    std::vector<int> labels;
};

SplitRows gather(const std::vector<std::vector<double>>& matrix, const std::vector<int>& labels,
                 const std::vector<int>& row_ids) {
    SplitRows out;
    out.rows.reserve(row_ids.size());
    out.labels.reserve(row_ids.size());
    for (int r : row_ids) {
        out.rows.push_back(&matrix[static_cast<std::size_t>(r)]);
        out.labels.push_back(labels[static_cast<std::size_t>(r)]);
    }
    return out;
}

void require_train_val(const LayerFeatureBank& bank) {
    require(!bank.train_rows.empty(), ErrorCode::Argument, "bank has no train rows");
    require(!bank.val_rows.empty(), ErrorCode::Argument, "bank has no validation rows");
}

}  // namespace

std::vector<double> per_layer_accuracy(const LayerFeatureBank& bank, const ProbeConfig& config) {
    bank.validate();
    require_train_val(bank);
    std::vector<double> out;
    for (std::size_t n = 0; n < bank.layer_ids.size(); ++n) {
        SplitRows train = gather(bank.pooled[n], bank.labels, bank.train_rows);
        SplitRows val = gather(bank.pooled[n], bank.labels, bank.val_rows);
        LinearProbe probe = train_linear_probe(train.rows, train.labels, bank.num_classes, config);
        out.push_back(probe_accuracy(probe, val.rows, val.labels));
    }
    return out;
}

PerClassBestLayer per_class_best_layer(const LayerFeatureBank& bank, const ProbeConfig& config) {
    bank.validate();
    require_train_val(bank);
    require(bank.num_classes >= 2, ErrorCode::Argument, "need at least two classes");

    PerClassBestLayer result;
    result.counts.assign(static_cast<std::size_t>(bank.num_classes),
                         std::vector<int>(bank.layer_ids.size(), 0));
    for (std::size_t n = 0; n < bank.layer_ids.size(); ++n) {
        SplitRows train = gather(bank.pooled[n], bank.labels, bank.train_rows);
        SplitRows val = gather(bank.pooled[n], bank.labels, bank.val_rows);
        LinearProbe probe = train_linear_probe(train.rows, train.labels, bank.num_classes, config);
        for (std::size_t r = 0; r < val.rows.size(); ++r) {
            if (probe_predict(probe, *val.rows[r]) == val.labels[r]) {
                ++result.counts[static_cast<std::size_t>(val.labels[r])][n];
            }
        }
    }
    for (int k = 0; k < bank.num_classes; ++k) {
        const std::vector<int>& row = result.counts[static_cast<std::size_t>(k)];
        std::size_t best = 0;
        for (std::size_t n = 1; n < row.size(); ++n) {
            if (row[n] > row[best]) best = n;  // ties keep the lower layer id
        }
        result.best_layer.push_back(bank.layer_ids[best]);
    }
    return result;
}

std::vector<PooledVsFullRow> pooled_vs_full(const LayerFeatureBank& bank,
                                            const ProbeConfig& config) {
    bank.validate();
    require_train_val(bank);
    require(bank.has_full(), ErrorCode::Argument, "bank was built without full features");

    std::vector<PooledVsFullRow> out;
    for (std::size_t n = 0; n < bank.layer_ids.size(); ++n) {
        PooledVsFullRow row;
        row.layer = bank.layer_ids[n];
        for (int variant = 0; variant < 2; ++variant) {
            const auto& matrix = variant == 0 ? bank.pooled[n] : bank.full[n];
            SplitRows train = gather(matrix, bank.labels, bank.train_rows);
            SplitRows val = gather(matrix, bank.labels, bank.val_rows);
            LinearProbe probe =
                train_linear_probe(train.rows, train.labels, bank.num_classes, config);
            double train_acc = probe_accuracy(probe, train.rows, train.labels);
            double val_acc = probe_accuracy(probe, val.rows, val.labels);
            if (variant == 0) {
                row.pooled_train = train_acc;
                row.pooled_val = val_acc;
            } else {
                row.full_train = train_acc;
                row.full_val = val_acc;
            }
        }
        out.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Greedy forward selection

namespace {

std::string subset_str(const std::vector<int>& subset) {
    std::ostringstream os;
    os << "{";
    for (std::size_t i = 0; i < subset.size(); ++i) os << (i ? "," : "") << subset[i];
    os << "}";
    return os.str();
}

// scores every subset of one round; results align with the input order
using RoundScorer =
    std::function<std::vector<double>(const std::vector<std::vector<int>>&)>;

SelectionTrace forward_select_rounds(std::vector<int> candidates, const RoundScorer& score_round) {
    require(!candidates.empty(), ErrorCode::Argument, "no selection candidates");
    std::sort(candidates.begin(), candidates.end());
    require(std::adjacent_find(candidates.begin(), candidates.end()) == candidates.end(),
            ErrorCode::Argument, "duplicate selection candidate");

    SelectionTrace trace;
    std::vector<int> current;
    double current_score = 0.0;  // empty-set convention
    std::vector<char> taken(candidates.size(), 0);

    for (;;) {
        std::vector<std::vector<int>> options;
        std::vector<std::size_t> option_slot;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            if (taken[c]) continue;
            std::vector<int> subset = current;
            subset.push_back(candidates[c]);
            std::sort(subset.begin(), subset.end());
            options.push_back(std::move(subset));
            option_slot.push_back(c);
        }
        if (options.empty()) {
            trace.stop_reason = "exhausted";
            break;
        }
        std::vector<double> scores = score_round(options);
        std::size_t best = 0;
        for (std::size_t i = 1; i < scores.size(); ++i) {
            if (scores[i] > scores[best]) best = i;  // ties keep the lower candidate id
        }
        if (!(scores[best] > current_score)) {
            trace.stop_reason = "no_improvement";
            break;
        }
        taken[option_slot[best]] = 1;
        current = options[best];
        current_score = scores[best];
        trace.steps.push_back({candidates[option_slot[best]], current_score});
    }
    trace.selected = current;
    return trace;
}

double score_with_context(const std::function<double(const std::vector<int>&)>& scorer,
                          const std::vector<int>& subset) {
    try {
        return scorer(subset);
    } catch (const Error& e) {
        fail(e.code(), std::string(e.what()) + " while scoring subset " + subset_str(subset));
    } catch (const std::exception& e) {
        fail(ErrorCode::Internal,
             std::string(e.what()) + " while scoring subset " + subset_str(subset));
    }
}

}  // namespace

SelectionTrace forward_select(const std::vector<int>& candidates,
                              const std::function<double(const std::vector<int>&)>& scorer) {
    return forward_select_rounds(candidates, [&](const std::vector<std::vector<int>>& options) {
        std::vector<double> scores;
        scores.reserve(options.size());
        for (const auto& subset : options) scores.push_back(score_with_context(scorer, subset));
        return scores;
    });
}

std::function<double(const std::vector<int>&)> make_subset_scorer(const LayerFeatureBank& bank,
                                                                  const ProbeConfig& config) {
    bank.validate();
    require_train_val(bank);
    return [&bank, config](const std::vector<int>& subset) {
        require(!subset.empty(), ErrorCode::Argument, "cannot score an empty subset");
        std::vector<std::size_t> layer_slots;
        for (int layer : subset) {
            auto it = std::find(bank.layer_ids.begin(), bank.layer_ids.end(), layer);
            require(it != bank.layer_ids.end(), ErrorCode::Argument,
                    "subset names a layer the bank does not hold");
            layer_slots.push_back(static_cast<std::size_t>(it - bank.layer_ids.begin()));
        }
        auto concat_rows = [&](const std::vector<int>& row_ids) {
            std::vector<std::vector<double>> rows;
            rows.reserve(row_ids.size());
            for (int r : row_ids) {
                std::vector<double> row;
                for (std::size_t slot : layer_slots) {
                    const std::vector<double>& seg = bank.pooled[slot][static_cast<std::size_t>(r)];
                    row.insert(row.end(), seg.begin(), seg.end());
                }
                rows.push_back(std::move(row));
            }
            return rows;
        };
        std::vector<std::vector<double>> train_rows = concat_rows(bank.train_rows);
        std::vector<std::vector<double>> val_rows = concat_rows(bank.val_rows);
        auto as_ptrs = [](const std::vector<std::vector<double>>& rows) {
            std::vector<const std::vector<double>*> ptrs;
            ptrs.reserve(rows.size());
            for (const auto& r : rows) ptrs.push_back(&r);
            return ptrs;
        };
        std::vector<int> train_labels, val_labels;
        for (int r : bank.train_rows) train_labels.push_back(bank.labels[static_cast<std::size_t>(r)]);
        for (int r : bank.val_rows) val_labels.push_back(bank.labels[static_cast<std::size_t>(r)]);
        LinearProbe probe =
            train_linear_probe(as_ptrs(train_rows), train_labels, bank.num_classes, config);
        return probe_accuracy(probe, as_ptrs(val_rows), val_labels);
    };
}

SelectionTrace forward_select_parallel(const std::vector<int>& candidates,
                                       const LayerFeatureBank& bank, const ProbeConfig& config,
                                       int jobs) {
    auto scorer = make_subset_scorer(bank, config);
    return forward_select_rounds(candidates, [&](const std::vector<std::vector<int>>& options) {
        std::vector<double> scores(options.size());
        parallel_for(options.size(), jobs,
                     [&](std::size_t i) { scores[i] = score_with_context(scorer, options[i]); });
        return scores;
    });
}

// ---------------------------------------------------------------------------
// Retrieval

std::vector<RetrievalHit> retrieve_nearest(const std::vector<double>& query,
                                           const std::vector<std::vector<double>>& gallery,
                                           int m) {
    require(m >= 1, ErrorCode::Argument, "need at least one neighbour");
    require(static_cast<std::size_t>(m) <= gallery.size(), ErrorCode::Argument,
            "requested more neighbours than the gallery holds");
    std::vector<std::pair<double, int>> dists;  // (squared distance, index)
    dists.reserve(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        const std::vector<double>& row = gallery[i];
        require(row.size() == query.size(), ErrorCode::Argument,
                "gallery row width does not match the query");
        double d2 = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            double diff = row[j] - query[j];
            d2 += diff * diff;
        }
        dists.emplace_back(d2, static_cast<int>(i));
    }
    std::sort(dists.begin(), dists.end());  // pair ordering = distance, then lower index
    std::vector<RetrievalHit> hits;
    hits.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        hits.push_back({dists[static_cast<std::size_t>(i)].second,
                        std::sqrt(dists[static_cast<std::size_t>(i)].first)});
    }
    return hits;
}

// ---------------------------------------------------------------------------
// CSV emitters

namespace {

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path);
    require(out.is_open(), ErrorCode::Io, "cannot open csv for writing: " + path);
    out.precision(17);
    return out;
}

void finish_csv(std::ofstream& out, const std::string& path) {
    require(out.good(), ErrorCode::Io, "failed writing csv: " + path);
}

}  // namespace

void write_selection_csv(const SelectionTrace& trace, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << "step,layer,score\n";
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        out << (i + 1) << "," << trace.steps[i].layer << "," << trace.steps[i].score << "\n";
    }
    out << "# stop: " << trace.stop_reason << "\n";
    finish_csv(out, path);
}

void write_per_layer_csv(const std::vector<int>& layer_ids, const std::vector<double>& accuracy,
                         const std::string& path) {
    require(layer_ids.size() == accuracy.size(), ErrorCode::Argument,
            "layer and accuracy counts differ");
    std::ofstream out = open_csv(path);
    out << "layer,val_accuracy\n";
    for (std::size_t n = 0; n < layer_ids.size(); ++n) {
        out << layer_ids[n] << "," << accuracy[n] << "\n";
    }
    finish_csv(out, path);
}

void write_per_class_csv(const std::vector<int>& layer_ids, const PerClassBestLayer& result,
                         const std::string& path) {
    std::ofstream out = open_csv(path);
    out << "class,best_layer";
    for (int id : layer_ids) out << ",correct_layer_" << id;
    out << "\n";
    for (std::size_t k = 0; k < result.counts.size(); ++k) {
        out << k << "," << result.best_layer[k];
        for (int c : result.counts[k]) out << "," << c;
        out << "\n";
    }
    finish_csv(out, path);
}

void write_pooled_vs_full_csv(const std::vector<PooledVsFullRow>& rows, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << "layer,pooled_train,pooled_val,full_train,full_val\n";
    for (const PooledVsFullRow& r : rows) {
        out << r.layer << "," << r.pooled_train << "," << r.pooled_val << "," << r.full_train
            << "," << r.full_val << "\n";
    }
    finish_csv(out, path);
}

}  // namespace dagnet
