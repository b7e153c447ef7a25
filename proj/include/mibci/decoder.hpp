#pragma once

// Minimum-distance-to-mean decoding with softmax posteriors, EMA smoothing
// and ROC threshold selection.

#include <mibci/spd.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mibci::decoder {

using spd::SpdMatrix;

enum class DecoderId { Onset, Offset };

std::string to_string(DecoderId id);
DecoderId decoder_id_from_string(const std::string& s);

/// Class means of one binary decoder.
///
/// `positive`/`negative` are whitened by `s_train`; the raw means are kept so
/// the prototypes can be re-whitened by another reference and so training
/// geometry can be scored directly.
struct ClassPrototypes {
    SpdMatrix positive = SpdMatrix::identity(1);
    SpdMatrix negative = SpdMatrix::identity(1);
    SpdMatrix raw_positive = SpdMatrix::identity(1);
    SpdMatrix raw_negative = SpdMatrix::identity(1);
    SpdMatrix s_train = SpdMatrix::identity(1);
    DecoderId decoder_id = DecoderId::Onset;

    spd::Index dim() const { return positive.dim(); }
    /// AIRM distance between the two (whitened) prototypes.
    double separation() const;
};

struct DecoderConfig {
    double temperature = 1.0;
    double ema_beta = 0.2;
    double threshold = 0.5;
    double hold_time = 0.25;
    double refractory = 1.0;
    double decision_window = 5.0;

    void validate() const;
};

struct PosteriorFrame {
    double t = 0.0;
    double d_pos = 0.0;
    double d_neg = 0.0;
    double p_pos = 0.5;
    double p_hat = 0.5;
    double margin = 0.0;
};

struct LabeledCov {
    SpdMatrix cov;
    bool positive = false;
};

struct FitDiagnostics {
    int n_positive = 0;
    int n_negative = 0;
    int iterations_positive = 0;
    int iterations_negative = 0;
    int iterations_pooled = 0;

    double mean_iterations() const { return (iterations_positive + iterations_negative + iterations_pooled) / 3.0; }
};

/// Per-class Frechet means, pooled mean S_train and whitened prototypes.
ClassPrototypes fit_prototypes(std::span<const LabeledCov> train, DecoderId id, const spd::FrechetConfig& cfg = {},
                               FitDiagnostics* diagnostics = nullptr);

struct Posterior {
    double d_pos = 0.0;
    double d_neg = 0.0;
    double p_pos = 0.5;
};

/// Softmax over negative distances to two class means.
Posterior mdm_posteriors(const SpdMatrix& sample, const SpdMatrix& positive, const SpdMatrix& negative,
                         double temperature);
/// Scores an already recentered sample against the whitened prototypes.
Posterior mdm_posteriors(const SpdMatrix& sample_hat, const ClassPrototypes& prototypes, const DecoderConfig& cfg);

/// exp(-a d_pos) / (exp(-a d_pos) + exp(-a d_neg)), evaluated stably.
double softmax_positive(double d_pos, double d_neg, double temperature);

double ema_update(double p_hat_prev, double p, double beta);

inline double margin(double d_neg, double d_pos)
{
    return d_neg - d_pos;
}

/// ln 9 / d(P, N): a sample at the positive prototype maps to p_pos = 0.9.
double default_temperature(const ClassPrototypes& prototypes);

/// A smoothed posterior trace of one offline trial; `times` are seconds from
/// the start of the decision window.
struct LabeledTrace {
    std::vector<double> times;
    std::vector<double> p_hat;
    bool positive = false;
};

struct ThresholdResult {
    double theta = 0.5;
    double tpr = 0.0;
    double fpr = 0.0;
    double youden = 0.0;
    /// Median time to first p_hat >= theta over crossing positive trials.
    std::optional<double> median_latency;
    /// No threshold separates the traces (J = 0 everywhere).
    bool degenerate = false;
};

/// Raised when no candidate threshold meets the latency cap; carries the
/// best unconstrained threshold.
class ConstraintInfeasible : public Error {
public:
    ConstraintInfeasible(const std::string& what, ThresholdResult fallback)
        : Error(ErrorKind::ConstraintInfeasible, what), fallback_(fallback)
    {
    }
    const ThresholdResult& fallback() const { return fallback_; }

private:
    ThresholdResult fallback_;
};

inline constexpr double kDefaultLatencyCap = 3.0;

/// Youden-optimal threshold over the ROC of per-trace maxima, restricted to
/// thresholds whose median positive latency is within `latency_cap`.
/// Candidates are midpoints between consecutive distinct maxima; ties go to
/// the lower false-positive rate, then the higher threshold.
ThresholdResult select_threshold(std::span<const LabeledTrace> traces, double latency_cap = kDefaultLatencyCap);

/// Operating point of `theta` on the given traces.
ThresholdResult evaluate_threshold(std::span<const LabeledTrace> traces, double theta);

} // namespace mibci::decoder
