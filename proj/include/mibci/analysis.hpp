#pragma once

// Offline analytics: Welch ERD/ERS maps, AUC, margin shifts, exact
// Wilcoxon signed-rank test, outcome and latency statistics.

#include <mibci/session.hpp>
#include <mibci/spd.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mibci::analysis {

using spd::Matrix;

// ---------------------------------------------------------------- spectrogram

struct SpectrogramConfig {
    double fs = 512.0;
    double window = 0.5;
    double hop = 0.0625;
    /// Hann sub-segments per window at 50% overlap.
    int sub_segments = 3;
    double f_min = 1.0;
    double f_max = 40.0;
    double f_step = 1.0;

    void validate() const;
    int window_samples() const;
    int hop_samples() const;
    int segment_samples() const;
    std::vector<double> freqs() const;
};

/// Welch power per (frequency, window). Times are window centres in
/// seconds from the start of the segment.
struct PowerGrid {
    std::vector<double> freqs;
    std::vector<double> times;
    Matrix power; ///< freqs x times
};

PowerGrid welch_power(std::span<const double> x, const SpectrogramConfig& cfg);

struct SpectrogramResult {
    std::vector<double> freqs;
    std::vector<double> times;
    std::vector<double> baseline; ///< B(f)
    Matrix values;                ///< log10(A(f,t) / B(f)), 0 where undefined
    std::vector<std::vector<bool>> defined; ///< [f][t]; false where B(f) = 0
};

/// Baseline B(f) averages the windows lying wholly inside
/// [baseline_begin, baseline_end) seconds.
SpectrogramResult welch_spectrogram(std::span<const double> x, const SpectrogramConfig& cfg, double baseline_begin,
                                    double baseline_end);

/// Trial-averaged map: power is averaged over trials before the log ratio.
SpectrogramResult average_spectrogram(std::span<const PowerGrid> trials, double baseline_begin, double baseline_end);

// ---------------------------------------------------------------- AUC

struct Scored {
    double score = 0.0;
    bool positive = false;
};

/// Mann-Whitney AUC with ties counted 0.5.
double run_auc(std::span<const Scored> samples);

// ---------------------------------------------------------------- bias

struct ClassMargins {
    std::vector<double> positive;
    std::vector<double> negative;
};

struct BiasReport {
    std::string reference_a;
    std::string reference_b;
    double median_pos_a = 0.0;
    double median_neg_a = 0.0;
    double median_pos_b = 0.0;
    double median_neg_b = 0.0;
    double delta_pos = 0.0; ///< median_pos_a - median_pos_b
    double delta_neg = 0.0;
    double delta_sep = 0.0; ///< delta_pos - delta_neg
};

double median(std::vector<double> v);

/// Shift of per-class median margins from reference b to reference a.
BiasReport margin_shift(const ClassMargins& a, const ClassMargins& b, std::string name_a = "a",
                        std::string name_b = "b");

// ---------------------------------------------------------------- Wilcoxon

struct WilcoxonResult {
    int n = 0; ///< nonzero differences
    double w_plus = 0.0;
    double w_minus = 0.0;
    double statistic = 0.0; ///< min(W+, W-)
    double p_value = 1.0;   ///< exact two-sided
};

/// Midranks of |d| for the nonzero differences, in input order.
std::vector<double> signed_rank_magnitudes(std::span<const double> diffs);

/// Exact null distribution of W+ over all 2^n sign assignments, indexed by
/// 2 * W+ (midranks are multiples of 0.5). Entries sum to 1.
std::vector<double> wilcoxon_null_distribution(std::span<const double> ranks);

inline constexpr int kWilcoxonMaxN = 20;

/// Exact paired signed-rank test; zero differences are dropped.
WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> diffs);

// ---------------------------------------------------------------- outcomes

struct Proportions {
    double hit = 0.0;
    double miss = 0.0;
    double timeout = 0.0;
};

struct LatencyStats {
    int n = 0;
    double mean = 0.0;
    double sd = 0.0; ///< sample SD, 0 for fewer than two values
};

struct RunMetrics {
    std::string run_id;
    std::optional<double> auc_onset;
    std::optional<double> auc_offset;
    int n_trials = 0;
    int n_attempted = 0; ///< onset hits
    Proportions onset;
    Proportions offset; ///< over onset hits only
    LatencyStats onset_latency;
    LatencyStats offset_latency;
};

LatencyStats latency_stats(std::span<const double> values);

RunMetrics outcome_latency_stats(std::span<const session::TrialRecord> records, std::string run_id = "");

// ---------------------------------------------------------------- bootstrap

struct ConfidenceInterval {
    double mean = 0.0;
    double low = 0.0;
    double high = 0.0;
};

/// Percentile bootstrap CI of the mean.
ConfidenceInterval bootstrap_mean_ci(std::span<const double> values, int resamples = 2000, std::uint64_t seed = 1,
                                     double level = 0.95);

} // namespace mibci::analysis
