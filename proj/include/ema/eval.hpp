#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ema/synth.hpp"
#include "ema/training.hpp"

namespace ema {

// ---- cross-subject folds ----

struct FoldPlan {
    int k = 5;
    std::uint64_t seed = 0;
    std::map<std::string, int> assignment;  // participant -> fold

    std::vector<std::string> fold_members(int fold) const {
        std::vector<std::string> out;
        for (const auto& [id, f] : assignment)
            if (f == fold) out.push_back(id);
        return out;
    }
};

inline FoldPlan cross_subject_folds(std::vector<std::string> ids, int k, std::uint64_t seed) {
    if (static_cast<int>(ids.size()) < k)
        throw std::invalid_argument("cross_subject_folds: " + std::to_string(ids.size()) +
                                    " participants for k=" + std::to_string(k));
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, 0xf01d));
    rng.shuffle(ids);
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    for (std::size_t i = 0; i < ids.size(); ++i)
        plan.assignment[ids[i]] = static_cast<int>(i % k);
    return plan;
}

// ---- AUC (Mann-Whitney with midranks) ----

inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_auc: scores/labels length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (int y : labels) (y ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("roc_auc: AUC undefined with a single class");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t q = i; q < j; ++q)
            if (labels[order[q]]) rank_sum_pos += midrank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// ---- experiment runner ----

struct ExperimentCell {
    std::string model;       // logreg | logreg_raw | lstm | attention_lstm | transformer
    int n = 1;               // window length
    std::string encoding;    // transformer only; "-" otherwise
    bool pretrained = false; // transformer only
};

struct CellResult {
    std::vector<double> fold_aucs;
    double mean = 0.0;
    double stddev = 0.0;
    bool failed = false;
    std::string error;
};

struct MetricsTable {
    std::vector<std::pair<ExperimentCell, CellResult>> rows;

    std::string to_csv() const {
        std::ostringstream out;
        out << "model,N,encoding,pretrain,fold,auc\n";
        char buf[32];
        for (const auto& [cell, res] : rows) {
            for (std::size_t f = 0; f < res.fold_aucs.size(); ++f) {
                std::snprintf(buf, sizeof(buf), "%.6f", res.fold_aucs[f]);
                out << cell.model << ',' << cell.n << ',' << cell.encoding << ','
                    << (cell.pretrained ? 1 : 0) << ',' << f << ',' << buf << "\n";
            }
        }
        return out.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [cell, res] : rows) {
            arr.push_back({{"model", cell.model},
                           {"N", cell.n},
                           {"encoding", cell.encoding},
                           {"pretrain", cell.pretrained},
                           {"fold_aucs", res.fold_aucs},
                           {"mean_auc", res.mean},
                           {"std_auc", res.stddev},
                           {"failed", res.failed},
                           {"error", res.error}});
        }
        return arr;
    }

    const CellResult& find(const std::string& model, int n, const std::string& encoding = "",
                           bool pretrained = false) const {
        for (const auto& [cell, res] : rows)
            if (cell.model == model && cell.n == n && cell.pretrained == pretrained &&
                (encoding.empty() || cell.encoding == encoding))
                return res;
        throw std::runtime_error("metrics table: no cell for model " + model + " N=" +
                                 std::to_string(n));
    }
};

struct ExperimentSpec {
    int k = 5;
    std::uint64_t seed = 7;
    std::vector<std::string> models = {"logreg", "transformer"};
    std::vector<int> n_values = {10};
    std::vector<std::string> encodings = {"time_concat"};
    std::vector<bool> pretrain_options = {false};
    TransformerConfig transformer_cfg;
    TrainConfig train_cfg;
    MaskingConfig mask_cfg;
    int jobs = 1;
};

namespace detail {

struct FoldSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> valid_ids;  // 10% of training subjects, >= 1
    std::vector<std::string> test_ids;
};

inline FoldSplit make_fold_split(const FoldPlan& plan, int fold, std::uint64_t seed) {
    FoldSplit split;
    for (const auto& [id, f] : plan.assignment)
        (f == fold ? split.test_ids : split.train_ids).push_back(id);
    std::sort(split.train_ids.begin(), split.train_ids.end());
    Rng rng(derive_seed(seed, 0x5a11, static_cast<std::uint64_t>(fold)));
    rng.shuffle(split.train_ids);
    std::size_t n_valid = std::max<std::size_t>(1, split.train_ids.size() / 10);
    split.valid_ids.assign(split.train_ids.end() - n_valid, split.train_ids.end());
    split.train_ids.resize(split.train_ids.size() - n_valid);
    std::sort(split.train_ids.begin(), split.train_ids.end());
    std::sort(split.valid_ids.begin(), split.valid_ids.end());
    std::sort(split.test_ids.begin(), split.test_ids.end());
    return split;
}

inline std::vector<WindowSample> windows_for(const Dataset& ds,
                                             const std::vector<std::string>& ids, std::size_t n) {
    std::vector<WindowSample> out;
    for (const auto& id : ids) {
        const auto& recs = ds.participants.at(id);
        auto feats = build_participant_features(recs);
        auto ws = sliding_windows(id, feats, recs, n);
        out.insert(out.end(), std::make_move_iterator(ws.begin()), std::make_move_iterator(ws.end()));
    }
    return out;
}

inline void cap_windows(std::vector<WindowSample>& ws, std::size_t cap, std::uint64_t seed) {
    if (cap == 0 || ws.size() <= cap) return;
    Rng rng(derive_seed(seed, 0xca9));
    rng.shuffle(ws);
    ws.resize(cap);
    // restore a deterministic order independent of the shuffle
    std::stable_sort(ws.begin(), ws.end(), [](const WindowSample& a, const WindowSample& b) {
        if (a.participant_id != b.participant_id) return a.participant_id < b.participant_id;
        return a.timestamps[0] < b.timestamps[0];
    });
}

// Trains the cell's model on one fold and returns the test AUC.
inline double run_fold_cell(const Dataset& ds, const ExperimentSpec& spec, const FoldPlan& plan,
                            const ExperimentCell& cell, int fold) {
    const FoldSplit split = make_fold_split(plan, fold, spec.seed);
    const std::size_t n = static_cast<std::size_t>(cell.n);
    std::vector<WindowSample> train = windows_for(ds, split.train_ids, n);
    std::vector<WindowSample> valid = windows_for(ds, split.valid_ids, n);
    std::vector<WindowSample> test = windows_for(ds, split.test_ids, n);
    TrainConfig tc = spec.train_cfg;
    tc.seed = derive_seed(spec.seed, std::hash<std::string>{}(cell.model + cell.encoding),
                          static_cast<std::uint64_t>(fold * 131 + cell.n));
    cap_windows(train, tc.max_train_windows, tc.seed);

    std::function<double(const WindowSample&)> score;
    if (cell.model == "logreg" || cell.model == "logreg_raw") {
        BaselineOptions opts;
        opts.use_summary = cell.model == "logreg";
        TrainConfig lc = tc;
        lc.l2 = 1e-4;
        auto model = train_logreg(train, valid, lc, opts);
        score = [model](const WindowSample& w) { return model.predict(w); };
    } else if (cell.model == "lstm") {
        auto model = train_vanilla_lstm(train, valid, tc);
        score = [model](const WindowSample& w) { return model.predict(w); };
    } else if (cell.model == "attention_lstm") {
        auto model = train_attention_lstm(train, valid, tc);
        score = [model](const WindowSample& w) { return model.predict(w); };
    } else if (cell.model == "transformer") {
        TransformerConfig cfg = spec.transformer_cfg;
        cfg.encoding = EncodingStrategy::parse(cell.encoding);
        cfg.encoding.d_pe = spec.transformer_cfg.encoding.d_pe;
        cfg.encoding.base = spec.transformer_cfg.encoding.base;
        cfg.encoding.time_scale_min = spec.transformer_cfg.encoding.time_scale_min;
        FinetuneResult ft;
        if (cell.pretrained) {
            auto pt = pretrain(cfg, train, valid, spec.mask_cfg, tc);
            ft = finetune(cfg, &pt.checkpoint, train, valid, tc);
        } else {
            ft = finetune(cfg, nullptr, train, valid, tc);
        }
        auto model = std::make_shared<TransformerModel>(TransformerModel::from_checkpoint(ft.checkpoint));
        score = [model](const WindowSample& w) { return transformer_score(*model, w); };
    } else {
        throw std::invalid_argument("unknown model \"" + cell.model + "\"");
    }

    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(test.size());
    labels.reserve(test.size());
    for (const auto& w : test) {
        scores.push_back(score(w));
        labels.push_back(w.label);
    }
    return roc_auc(scores, labels);
}

}  // namespace detail

inline MetricsTable run_experiment(const ExperimentSpec& spec, const Dataset& ds) {
    FoldPlan plan = cross_subject_folds(ds.participant_ids(), spec.k, spec.seed);

    std::vector<ExperimentCell> cells;
    for (const auto& model : spec.models) {
        if (model == "logreg" || model == "logreg_raw") {
            cells.push_back({model, 1, "-", false});
        } else if (model == "transformer") {
            for (int n : spec.n_values)
                for (const auto& enc : spec.encodings)
                    for (bool pt : spec.pretrain_options) cells.push_back({model, n, enc, pt});
        } else {
            for (int n : spec.n_values) cells.push_back({model, n, "-", false});
        }
    }

    MetricsTable table;
    for (const auto& cell : cells) {
        CellResult res;
        std::vector<std::future<double>> futures(spec.k);
        const int jobs = std::max(1, spec.jobs);
        try {
            for (int start = 0; start < spec.k; start += jobs) {
                const int end = std::min(spec.k, start + jobs);
                for (int f = start; f < end; ++f)
                    futures[f] = std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                            [&, f]() { return detail::run_fold_cell(ds, spec, plan, cell, f); });
                for (int f = start; f < end; ++f) res.fold_aucs.push_back(futures[f].get());
            }
            double mean = 0.0;
            for (double a : res.fold_aucs) mean += a;
            mean /= static_cast<double>(res.fold_aucs.size());
            double var = 0.0;
            for (double a : res.fold_aucs) var += (a - mean) * (a - mean);
            res.mean = mean;
            res.stddev = res.fold_aucs.size() > 1
                             ? std::sqrt(var / static_cast<double>(res.fold_aucs.size() - 1))
                             : 0.0;
        } catch (const std::exception& e) {
            res.failed = true;
            res.error = e.what();
            res.fold_aucs.clear();
        }
        table.rows.emplace_back(cell, res);
    }
    return table;
}

// ---- attention interpretation ----

struct AttentionSummary {
    // per_lag[layer][lag-1]: average column mass of A, lag 1 = most recent
    std::vector<std::vector<double>> per_lag;
    // per input feature: mean |row| of input_proj composed with layer-0 W^V,
    // normalized to sum 1
    std::vector<std::pair<std::string, double>> per_feature;

    nlohmann::json to_json() const {
        nlohmann::json feats = nlohmann::json::object();
        for (const auto& [name, w] : per_feature) feats[name] = w;
        return {{"per_lag", per_lag}, {"per_feature", feats}};
    }
};

inline AttentionSummary extract_attention_summary(const TransformerModel& model,
                                                  const std::vector<WindowSample>& data) {
    if (data.empty()) throw std::invalid_argument("extract_attention_summary: no windows");
    const int n_layers = model.config().n_layers;
    const std::size_t n = data.front().length();

    AttentionSummary summary;
    summary.per_lag.assign(n_layers, std::vector<double>(n, 0.0));
    std::vector<std::size_t> counts(n_layers, 0);
    for (const auto& w : data) {
        if (w.length() != n)
            throw std::invalid_argument("extract_attention_summary: mixed window lengths");
        Tape tape;
        std::vector<AttentionRecord> records;
        model.encode(tape, w, false, nullptr, &records);
        for (const auto& rec : records) {
            auto& lag_row = summary.per_lag[rec.layer];
            for (std::size_t j = 0; j < n; ++j) {
                double col_mass = 0.0;
                for (std::size_t i = 0; i < n; ++i) col_mass += rec.a[i][j];
                col_mass /= static_cast<double>(n);
                lag_row[n - 1 - j] += col_mass;  // position n-1 is lag 1
            }
            ++counts[rec.layer];
        }
    }
    for (int l = 0; l < n_layers; ++l)
        for (auto& v : summary.per_lag[l]) v /= static_cast<double>(counts[l]);

    // feature attribution through the input projection and layer-0 value weights
    const Tensor proj = model.param("input_proj_w");  // [in, d_proj]
    const Tensor wv = model.param("layer0.wv");       // [d_model, d_model]
    const std::size_t in_dim = proj.rows(), dp = proj.cols(), dm = wv.cols();
    std::vector<double> weights(in_dim, 0.0);
    double total = 0.0;
    for (std::size_t f = 0; f < in_dim; ++f) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dm; ++j) {
            double m = 0.0;
            for (std::size_t p = 0; p < dp; ++p) m += proj.at(f, p) * wv.at(p, j);
            acc += std::fabs(m);
        }
        weights[f] = acc / static_cast<double>(dm);
        total += weights[f];
    }
    for (std::size_t f = 0; f < in_dim; ++f)
        summary.per_feature.emplace_back(kFeatureNames[f], total > 0 ? weights[f] / total : 0.0);
    return summary;
}

}  // namespace ema
