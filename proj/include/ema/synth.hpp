#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ema/data.hpp"
#include "ema/rng.hpp"

namespace ema {

// Calibrated synthetic EMA study. Per participant: a baseline compliance
// logit drawn from Normal(mu, sigma) where mu is calibrated by bisection so
// the overall compliance hits the target; latent per-item emotions follow an
// AR(1) that keeps evolving through missed prompts; non-response depends on
// current boredom/anger, the recent completion streak, and time of day.
struct SynthConfig {
    int n_participants = 200;
    int days = 14;
    int prompts_per_day = 4;
    double inter_prompt_hours = 4.0;
    double jitter_minutes = 45.0;
    double target_compliance = 0.628;
    double baseline_sigma = 0.5;
    double ar_rho = 0.7;
    double w_bored = 0.6;
    double w_angry = 0.4;
    double w_streak = 0.8;
    double w_tod = 0.3;
    // When > 0, non-response depends only on the previous prompt's boredom
    // (used to probe whether attention locks onto lag 1).
    double w_lag1_bored = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_participants <= 0 || days <= 0 || prompts_per_day <= 0)
            throw std::invalid_argument("synth config: counts must be positive");
        if (target_compliance <= 0.0 || target_compliance >= 1.0)
            throw std::invalid_argument("synth config: target_compliance must be in (0,1)");
        if (inter_prompt_hours <= 0.0 || jitter_minutes < 0.0)
            throw std::invalid_argument("synth config: bad timing parameters");
    }
};

namespace detail {

inline double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// latent -> Likert 1..5 by fixed thresholds on the (unit-variance) AR state
inline int quantize_likert(double e) {
    if (e < -1.2) return 1;
    if (e < -0.4) return 2;
    if (e < 0.4) return 3;
    if (e < 1.2) return 4;
    return 5;
}

inline double normalized_item(int likert) { return (likert - 1) / 4.0; }

constexpr double kDayStartMin = 540.0;       // first prompt window ~9:00
constexpr double kLateEveningMin = 1200.0;   // >= 20:00 counts as late evening

struct ParticipantSim {
    std::vector<PromptRecord> records;
    std::size_t completed = 0;
};

inline ParticipantSim simulate_participant(const SynthConfig& cfg, double mu, Rng rng) {
    ParticipantSim sim;
    const double b = rng.normal(mu, cfg.baseline_sigma);
    std::vector<double> latent(kNumItems);
    for (int k = 0; k < kNumItems; ++k) latent[k] = rng.normal();  // stationary start
    const double noise_sd = std::sqrt(1.0 - cfg.ar_rho * cfg.ar_rho);
    const double gap = cfg.inter_prompt_hours * 60.0;

    std::vector<int> history;  // completion flags, oldest first
    double prev_bored_norm = 0.5;
    int index = 0;
    for (int d = 0; d < cfg.days; ++d) {
        for (int p = 0; p < cfg.prompts_per_day; ++p) {
            ++index;
            const double jitter =
                cfg.jitter_minutes > 0.0 ? rng.uniform(-cfg.jitter_minutes, cfg.jitter_minutes) : 0.0;
            const double t = d * 1440.0 + kDayStartMin + p * gap + jitter;
            if (index > 1) {
                for (int k = 0; k < kNumItems; ++k)
                    latent[k] = cfg.ar_rho * latent[k] + noise_sd * rng.normal();
            }
            std::array<int, kNumItems> likert{};
            for (int k = 0; k < kNumItems; ++k) likert[k] = quantize_likert(latent[k]);

            double p_nonresp;
            if (cfg.w_lag1_bored > 0.0) {
                p_nonresp = sigmoid_d(-b + cfg.w_lag1_bored * prev_bored_norm);
            } else {
                double streak = 0.5;
                if (!history.empty()) {
                    const std::size_t n = std::min<std::size_t>(3, history.size());
                    double s = 0.0;
                    for (std::size_t q = history.size() - n; q < history.size(); ++q) s += history[q];
                    streak = s / static_cast<double>(n);
                }
                const double tod = std::fmod(t, 1440.0);
                const double late = tod >= kLateEveningMin ? 1.0 : 0.0;
                p_nonresp = sigmoid_d(-b + cfg.w_bored * normalized_item(likert[3]) +
                                      cfg.w_angry * normalized_item(likert[5]) -
                                      cfg.w_streak * streak + cfg.w_tod * late);
            }
            const bool completed = rng.uniform() >= p_nonresp;
            prev_bored_norm = normalized_item(likert[3]);

            PromptRecord rec;
            rec.prompt_index = index;
            rec.timestamp_min = t;
            rec.completed = completed;
            if (completed) {
                rec.items = likert;
                ++sim.completed;
            }
            sim.records.push_back(rec);
            history.push_back(completed ? 1 : 0);
        }
    }
    return sim;
}

inline double simulate_compliance(const SynthConfig& cfg, double mu, std::uint64_t seed,
                                  int n_participants) {
    std::size_t completed = 0, total = 0;
    for (int i = 0; i < n_participants; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        auto sim = simulate_participant(cfg, mu, rng);
        completed += sim.completed;
        total += sim.records.size();
    }
    return total ? static_cast<double>(completed) / total : 0.0;
}

}  // namespace detail

// Bisection on the baseline-logit mean against a ~1e4-prompt Monte Carlo,
// tolerance 0.005 on compliance.
inline double calibrate_baseline_mu(const SynthConfig& cfg) {
    cfg.validate();
    const int prompts_each = cfg.days * cfg.prompts_per_day;
    const int mc_participants = std::max(1, (10000 + prompts_each - 1) / prompts_each);
    const std::uint64_t mc_seed = derive_seed(cfg.seed, 0xca11b8a7eULL);
    double lo = -6.0, hi = 6.0;
    double mid = 0.0;
    for (int iter = 0; iter < 60; ++iter) {
        mid = 0.5 * (lo + hi);
        const double rate = detail::simulate_compliance(cfg, mid, mc_seed, mc_participants);
        if (std::fabs(rate - cfg.target_compliance) < 0.005) return mid;
        if (rate < cfg.target_compliance)
            lo = mid;
        else
            hi = mid;
    }
    return mid;
}

inline Dataset generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    const double mu = calibrate_baseline_mu(cfg);
    Dataset ds;
    ds.provenance = "synthetic(seed=" + std::to_string(cfg.seed) + ")";
    const int width = std::max(3, static_cast<int>(std::to_string(cfg.n_participants).size()));
    for (int i = 0; i < cfg.n_participants; ++i) {
        std::string id = std::to_string(i + 1);
        id = "P" + std::string(width - std::min<int>(width, id.size()), '0') + id;
        Rng rng(derive_seed(cfg.seed, 0x9e7a57ULL, static_cast<std::uint64_t>(i)));
        ds.participants[id] = detail::simulate_participant(cfg, mu, rng).records;
    }
    return ds;
}

}  // namespace ema
