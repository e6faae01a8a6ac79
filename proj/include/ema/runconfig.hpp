#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ema/eval.hpp"
#include "ema/log.hpp"

namespace ema {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::string& where,
                                const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("config: \"" + where + "\" must be an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key \"" + key + "\" in \"" + where + "\"");
}

template <typename T>
void maybe(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace detail

// Top-level schema for the `run` subcommand. Unknown keys anywhere are an
// error so typos fail loudly instead of silently using defaults.
struct RunConfig {
    std::uint64_t seed = 7;
    std::string data_path;  // CSV to load; empty -> generate synthetic data
    SynthConfig synth;
    ExperimentSpec experiment;
    std::string output_dir = "out";
    nlohmann::json raw;  // parsed input, echoed into the manifest

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
        }
        return from_json(j);
    }
};

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
    using detail::maybe;
    using detail::reject_unknown_keys;
    RunConfig cfg;
    cfg.raw = j;
    reject_unknown_keys(j, "<root>",
                        {"seed", "data", "experiment", "transformer", "training", "masking",
                         "output_dir"});
    maybe(j, "seed", cfg.seed);
    maybe(j, "output_dir", cfg.output_dir);

    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown_keys(d, "data", {"path", "synthetic"});
        if (d.contains("path") && d.contains("synthetic"))
            throw ConfigError("config: \"data\" must give either \"path\" or \"synthetic\", not both");
        maybe(d, "path", cfg.data_path);
        if (d.contains("synthetic")) {
            const auto& s = d.at("synthetic");
            reject_unknown_keys(s, "data.synthetic",
                                {"n_participants", "days", "prompts_per_day", "inter_prompt_hours",
                                 "jitter_minutes",
                                 "target_compliance", "baseline_sigma", "ar_rho", "w_bored",
                                 "w_angry", "w_streak", "w_tod", "w_lag1_bored", "seed"});
            maybe(s, "n_participants", cfg.synth.n_participants);
            maybe(s, "days", cfg.synth.days);
            maybe(s, "prompts_per_day", cfg.synth.prompts_per_day);
            maybe(s, "inter_prompt_hours", cfg.synth.inter_prompt_hours);
            maybe(s, "jitter_minutes", cfg.synth.jitter_minutes);
            maybe(s, "target_compliance", cfg.synth.target_compliance);
            maybe(s, "baseline_sigma", cfg.synth.baseline_sigma);
            maybe(s, "ar_rho", cfg.synth.ar_rho);
            maybe(s, "w_bored", cfg.synth.w_bored);
            maybe(s, "w_angry", cfg.synth.w_angry);
            maybe(s, "w_streak", cfg.synth.w_streak);
            maybe(s, "w_tod", cfg.synth.w_tod);
            maybe(s, "w_lag1_bored", cfg.synth.w_lag1_bored);
            maybe(s, "seed", cfg.synth.seed);
        }
    }
    if (!j.contains("data") || !j.at("data").contains("seed"))
        cfg.synth.seed = derive_seed(cfg.seed, 0xda7a);

    cfg.experiment.seed = cfg.seed;
    if (j.contains("experiment")) {
        const auto& e = j.at("experiment");
        reject_unknown_keys(e, "experiment",
                            {"k_folds", "models", "window_lengths", "encodings", "pretrain",
                             "jobs"});
        maybe(e, "k_folds", cfg.experiment.k);
        maybe(e, "models", cfg.experiment.models);
        maybe(e, "window_lengths", cfg.experiment.n_values);
        maybe(e, "encodings", cfg.experiment.encodings);
        maybe(e, "pretrain", cfg.experiment.pretrain_options);
        maybe(e, "jobs", cfg.experiment.jobs);
    }
    for (const auto& m : cfg.experiment.models)
        if (m != "logreg" && m != "logreg_raw" && m != "lstm" && m != "attention_lstm" &&
            m != "transformer")
            throw ConfigError("config: unknown model \"" + m + "\"");
    for (const auto& enc : cfg.experiment.encodings) EncodingStrategy::parse(enc);  // validates

    if (j.contains("transformer")) {
        const auto& t = j.at("transformer");
        reject_unknown_keys(t, "transformer",
                            {"n_layers", "n_heads", "d_model", "d_ff", "dropout", "mean_pool",
                             "d_pe", "pe_base", "time_scale_min", "pe_pre_projection"});
        auto& tc = cfg.experiment.transformer_cfg;
        maybe(t, "n_layers", tc.n_layers);
        maybe(t, "n_heads", tc.n_heads);
        maybe(t, "d_model", tc.d_model);
        maybe(t, "d_ff", tc.d_ff);
        maybe(t, "dropout", tc.dropout);
        maybe(t, "mean_pool", tc.mean_pool);
        maybe(t, "d_pe", tc.encoding.d_pe);
        maybe(t, "pe_base", tc.encoding.base);
        maybe(t, "time_scale_min", tc.encoding.time_scale_min);
        maybe(t, "pe_pre_projection", tc.encoding.pre_projection);
    }

    if (j.contains("training")) {
        const auto& t = j.at("training");
        reject_unknown_keys(t, "training",
                            {"lr", "epochs", "batch_size", "patience", "l2", "max_train_windows"});
        auto& trc = cfg.experiment.train_cfg;
        maybe(t, "lr", trc.lr);
        maybe(t, "epochs", trc.epochs);
        maybe(t, "batch_size", trc.batch_size);
        maybe(t, "patience", trc.patience);
        maybe(t, "l2", trc.l2);
        maybe(t, "max_train_windows", trc.max_train_windows);
    }

    if (j.contains("masking")) {
        const auto& m = j.at("masking");
        reject_unknown_keys(m, "masking",
                            {"fraction", "task", "items", "resample_each_epoch"});
        auto& mc = cfg.experiment.mask_cfg;
        maybe(m, "fraction", mc.mask_fraction);
        if (m.contains("task")) {
            const std::string task = m.at("task").get<std::string>();
            if (task == "one_item")
                mc.task = MaskTask::OneItem;
            else if (task == "five_items")
                mc.task = MaskTask::FiveItems;
            else if (task == "all_items")
                mc.task = MaskTask::AllItems;
            else
                throw ConfigError("config: masking.task must be one_item|five_items|all_items");
        }
        maybe(m, "items", mc.items);
        maybe(m, "resample_each_epoch", mc.resample_each_epoch);
    }

    try {
        cfg.synth.validate();
        cfg.experiment.transformer_cfg.validate();
        cfg.experiment.train_cfg.validate();
        cfg.experiment.mask_cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

struct RunOutputs {
    Dataset dataset;
    MetricsTable metrics;
    std::string metrics_csv_path;
};

inline RunOutputs execute_run(const RunConfig& cfg) {
    RunOutputs out;
    if (!cfg.data_path.empty()) {
        log_info("loading dataset from %s", cfg.data_path.c_str());
        out.dataset = load_csv(cfg.data_path);
    } else {
        log_info("generating synthetic dataset (%d participants, %d days, seed %llu)",
                 cfg.synth.n_participants, cfg.synth.days,
                 static_cast<unsigned long long>(cfg.synth.seed));
        out.dataset = generate_synthetic(cfg.synth);
    }

    out.metrics = run_experiment(cfg.experiment, out.dataset);

    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    out.metrics_csv_path = (fs::path(cfg.output_dir) / "metrics.csv").string();
    {
        std::ofstream f(out.metrics_csv_path, std::ios::binary);
        f << out.metrics.to_csv();
    }
    {
        std::ofstream f(fs::path(cfg.output_dir) / "metrics.json");
        f << out.metrics.to_json().dump(2) << "\n";
    }
    {
        nlohmann::json manifest = {
            {"seed", cfg.seed},
            {"config", cfg.raw},
            {"dataset",
             {{"participants", out.dataset.n_participants()},
              {"prompts", out.dataset.n_prompts()},
              {"provenance", out.dataset.provenance}}},
        };
        std::ofstream f(fs::path(cfg.output_dir) / "manifest.json");
        f << manifest.dump(2) << "\n";
    }
    log_info("wrote metrics to %s", out.metrics_csv_path.c_str());
    return out;
}

}  // namespace ema
