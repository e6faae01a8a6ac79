// Command-line front end: synthetic data generation, experiment runs,
// gradient self-checks, feature export, and attention export.
//
// Exit codes: 0 success, 1 bad usage/config, 2 runtime or numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "ema/eval.hpp"
#include "ema/grad_check.hpp"
#include "ema/log.hpp"
#include "ema/runconfig.hpp"

namespace {

int cmd_gen_data(const std::string& out_path, ema::SynthConfig cfg) {
    cfg.validate();
    ema::Dataset ds = ema::generate_synthetic(cfg);
    ema::write_csv(ds, out_path);
    const auto report = ema::validate(ds);
    std::cout << report.summary() << "\n";
    std::cout << "wrote " << ds.n_prompts() << " prompts for " << ds.n_participants()
              << " participants to " << out_path << "\n";
    return 0;
}

int cmd_run(const std::string& config_path, std::uint64_t seed_override, bool has_seed,
            const std::string& out_override, int jobs_override) {
    ema::RunConfig cfg = ema::RunConfig::from_file(config_path);
    if (has_seed) {
        cfg.seed = seed_override;
        cfg.experiment.seed = seed_override;
        if (cfg.data_path.empty() && (!cfg.raw.contains("data") || !cfg.raw["data"].contains("synthetic") ||
                                      !cfg.raw["data"]["synthetic"].contains("seed")))
            cfg.synth.seed = ema::derive_seed(seed_override, 0xda7a);
    }
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (jobs_override > 0) cfg.experiment.jobs = jobs_override;

    auto outputs = ema::execute_run(cfg);
    bool any_failed = false;
    for (const auto& [cell, res] : outputs.metrics.rows) {
        if (res.failed) {
            any_failed = true;
            std::cout << cell.model << " N=" << cell.n << " " << cell.encoding
                      << ": FAILED (" << res.error << ")\n";
        } else {
            std::printf("%-15s N=%-3d %-12s pretrain=%d  mean AUC %.4f (sd %.4f)\n",
                        cell.model.c_str(), cell.n, cell.encoding.c_str(),
                        cell.pretrained ? 1 : 0, res.mean, res.stddev);
        }
    }
    std::cout << "metrics written to " << outputs.metrics_csv_path << "\n";
    return any_failed ? 2 : 0;
}

int cmd_grad_check(std::uint64_t seed, int n_seeds, double tol, bool corrupt) {
    auto cases = ema::grad_check_suite();
    bool ok = true;
    for (auto& c : cases) {
        double worst = 0.0;
        for (int s = 0; s < n_seeds; ++s)
            worst = std::max(worst, c.run(ema::derive_seed(seed, 0x6c, static_cast<std::uint64_t>(s)),
                                          corrupt));
        const bool pass = worst < tol;
        ok = ok && pass;
        std::printf("%-28s max rel err %.3e  %s\n", c.name.c_str(), worst,
                    pass ? "ok" : "FAIL");
    }
    if (!ok) {
        std::cerr << "gradient check failed (tolerance " << tol << ")\n";
        return 2;
    }
    return 0;
}

int cmd_featurize(const std::string& data_path, const std::string& out_path) {
    ema::Dataset ds = ema::load_csv(data_path);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) {
        std::cerr << "cannot write " << out_path << "\n";
        return 1;
    }
    out << ema::features_to_csv(ds);
    std::cout << "wrote features for " << ds.n_participants() << " participants to " << out_path
              << "\n";
    return 0;
}

int cmd_export_attention(const std::string& ckpt_path, const std::string& data_path,
                         const std::string& out_path, int window_len) {
    ema::Checkpoint ckpt = ema::load_checkpoint(ckpt_path);
    ema::TransformerModel model = ema::TransformerModel::from_checkpoint(ckpt);
    ema::Dataset ds = ema::load_csv(data_path);
    auto windows = ema::make_windows(ds, static_cast<std::size_t>(window_len));
    if (windows.empty()) {
        std::cerr << "no windows of length " << window_len << " in " << data_path << "\n";
        return 1;
    }
    auto summary = ema::extract_attention_summary(model, windows);
    std::ofstream out(out_path);
    out << summary.to_json().dump(2) << "\n";
    std::cout << "wrote attention summary over " << windows.size() << " windows to " << out_path
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EMA non-response prediction toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a calibrated synthetic EMA dataset");
    ema::SynthConfig synth_cfg;
    std::string gen_out = "data.csv";
    gen->add_option("--out", gen_out, "output CSV path");
    gen->add_option("--participants", synth_cfg.n_participants, "number of participants");
    gen->add_option("--days", synth_cfg.days, "study length in days");
    gen->add_option("--prompts-per-day", synth_cfg.prompts_per_day, "prompts per day");
    gen->add_option("--target-compliance", synth_cfg.target_compliance, "mean completion rate");
    gen->add_option("--w-lag1-bored", synth_cfg.w_lag1_bored,
                    "make non-response depend only on previous boredom");
    gen->add_option("--seed", synth_cfg.seed, "generator seed");

    // run
    auto* run = app.add_subcommand("run", "Run a cross-validated experiment from a JSON config");
    std::string run_config;
    std::string run_out;
    std::uint64_t run_seed = 0;
    int run_jobs = 0;
    run->add_option("--config", run_config, "JSON run configuration")->required();
    auto* seed_opt = run->add_option("--seed", run_seed, "override the config seed");
    run->add_option("--out", run_out, "override the output directory");
    run->add_option("--jobs", run_jobs, "parallel folds (default: hardware threads)");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "Finite-difference verification of all gradients");
    std::uint64_t gc_seed = 1;
    int gc_n_seeds = 10;
    double gc_tol = 1e-4;
    bool gc_corrupt = false;
    gc->add_option("--seed", gc_seed, "base seed");
    gc->add_option("--seeds", gc_n_seeds, "number of random seeds per op");
    gc->add_option("--tol", gc_tol, "max relative error tolerance");
    gc->add_flag("--corrupt-gradients", gc_corrupt, "inject a gradient error (self-test)")
        ->group("");  // hidden

    // featurize
    auto* feat = app.add_subcommand("featurize", "Export per-prompt feature vectors as CSV");
    std::string feat_data, feat_out = "features.csv";
    feat->add_option("--data", feat_data, "input dataset CSV")->required();
    feat->add_option("--out", feat_out, "output CSV path");

    // export-attention
    auto* att = app.add_subcommand("export-attention",
                                   "Summarize attention of a trained model over a dataset");
    std::string att_ckpt, att_data, att_out = "attention.json";
    int att_n = 10;
    att->add_option("--checkpoint", att_ckpt, "model checkpoint")->required();
    att->add_option("--data", att_data, "dataset CSV")->required();
    att->add_option("--out", att_out, "output JSON path");
    att->add_option("--window", att_n, "window length");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, synth_cfg);
        if (run->parsed()) {
            int jobs = run_jobs;
            if (run->count("--jobs") == 0) jobs = 0;
            return cmd_run(run_config, run_seed, seed_opt->count() > 0, run_out, jobs);
        }
        if (gc->parsed()) return cmd_grad_check(gc_seed, gc_n_seeds, gc_tol, gc_corrupt);
        if (feat->parsed()) return cmd_featurize(feat_data, feat_out);
        if (att->parsed()) return cmd_export_attention(att_ckpt, att_data, att_out, att_n);
    } catch (const ema::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ema::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
