#pragma once

// End-to-end experiment plumbing: labelled windows, calibration with
// cross-validated thresholds, pseudo-online replay and report assembly.

#include <mibci/analysis.hpp>
#include <mibci/decoder.hpp>
#include <mibci/preprocess.hpp>
#include <mibci/recenter.hpp>
#include <mibci/session.hpp>
#include <mibci/synth.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mibci::pipeline {

using spd::SpdMatrix;

/// Version of the JSON artifacts (model bundle, session log, reports).
inline constexpr int kFormatVersion = 1;

struct PipelineConfig {
    /// fs and channels are taken from the data.
    preprocess::StreamConfig stream;
    spd::FrechetConfig frechet;
    recenter::FixationConfig fixation;
    session::SessionConfig session;
    /// Running-mean length of the task reference in windows; 0 is unbounded.
    int task_window = 16;
    /// Every k-th labelled window is used to fit prototypes.
    int train_stride = 4;
    int cv_folds = 5;
    double latency_cap = decoder::kDefaultLatencyCap;
    /// Softmax temperatures; 0 selects ln 9 / prototype separation.
    double temperature_onset = 0.0;
    double temperature_offset = 0.0;

    void validate() const;
};

/// Protocol phases that form the two classes of a decoder.
struct ClassMap {
    synth::Phase positive;
    synth::Phase negative;
};

ClassMap class_map(decoder::DecoderId id);

/// One covariance window with its ground-truth context.
struct LabeledWindow {
    std::int64_t start = 0; ///< first sample
    std::int64_t end = 0;   ///< one past the last sample
    double t = 0.0;         ///< end / fs
    int trial = -1;         ///< trial holding the last sample, -1 outside trials
    /// Phase when the window lies wholly inside one phase, else kNoPhase.
    std::int8_t phase = synth::kNoPhase;
    SpdMatrix cov = SpdMatrix::identity(1);
};

/// Runs the causal front end over a stream and labels every window.
std::vector<LabeledWindow> extract_windows(const synth::EegStream& stream, const synth::GroundTruth& truth,
                                           const preprocess::StreamConfig& cfg);

struct Montage {
    double fs = 0.0;
    int channels = 0;
    std::vector<std::string> channel_names;
};

Montage montage_of(const synth::EegStream& stream);

// ---------------------------------------------------------------- calibration

struct DecoderModel {
    decoder::ClassPrototypes prototypes;
    double temperature = 1.0;
    double threshold = 0.5;
    double ema_beta = 0.2;
    decoder::ThresholdResult roc;
    /// The latency cap could not be met; `threshold` is the unconstrained fallback.
    bool threshold_fallback = false;
    double cv_auc = 0.5;
    decoder::FitDiagnostics diagnostics;
};

struct ModelBundle {
    int version = kFormatVersion;
    std::string config_hash;
    Montage montage;
    double band_low = 8.0;
    double band_high = 30.0;
    double window_len = 1.0;
    double hop = 0.0625;
    DecoderModel onset;
    DecoderModel offset;
    /// Fixation reference of the calibration session; fixation-mode replay
    /// re-whitens the prototypes by it.
    std::optional<recenter::RecenterReference> fixation_reference;

    const DecoderModel& model(decoder::DecoderId id) const
    {
        return id == decoder::DecoderId::Onset ? onset : offset;
    }
};

/// Offline smoothed posterior traces of one decoder. Positive traces start
/// at the class event (cue for onset, intended stop for offset) and span the
/// decision window; negative traces cover the negative-class windows.
std::vector<decoder::LabeledTrace> offline_traces(std::span<const LabeledWindow> windows,
                                                  const synth::GroundTruth& truth, const decoder::ClassPrototypes& protos,
                                                  decoder::DecoderId id, double temperature, double ema_beta,
                                                  double decision_window, const std::vector<int>& trials);

ModelBundle calibrate_windows(std::span<const LabeledWindow> windows, const synth::GroundTruth& truth,
                              const Montage& montage, const PipelineConfig& cfg, const std::string& config_hash = "");

ModelBundle calibrate(const synth::EegStream& stream, const synth::GroundTruth& truth, const PipelineConfig& cfg,
                      const std::string& config_hash = "");

// ---------------------------------------------------------------- replay

/// Per-window scores. Margins under the replay mode and under the training
/// geometry (identity reference) are both kept for bias analysis.
struct WindowScore {
    double t = 0.0;
    int trial = -1;
    std::int8_t phase = synth::kNoPhase;
    /// Scored before the mode had a reference of its own.
    bool bootstrap = false;
    double p_onset = 0.5;
    double p_offset = 0.5;
    double margin_onset = 0.0;
    double margin_offset = 0.0;
    double identity_margin_onset = 0.0;
    double identity_margin_offset = 0.0;
};

struct RunLog {
    std::string run_id;
    std::string source; ///< data file the run was replayed from, if any
    std::vector<session::TrialRecord> trials;
    std::vector<WindowScore> windows;
    recenter::RecenterReference final_reference;
    int bootstrap_windows = 0;
};

struct SessionLog {
    int version = kFormatVersion;
    std::string config_hash;
    recenter::ReferenceKind mode = recenter::ReferenceKind::Identity;
    Montage montage;
    double theta_onset = 0.5;
    double theta_offset = 0.5;
    std::vector<RunLog> runs;
};

/// One run of the online session as precomputed windows plus its timeline.
struct RunInput {
    std::string run_id;
    std::string source;
    const synth::GroundTruth* truth = nullptr;
    std::span<const LabeledWindow> windows;
};

/// Replays runs in order. The task running mean is fed every window. The
/// reference state carries across runs: the task running mean continues and
/// each fixation fit blends with the previous run's final fixation reference.
SessionLog replay_windows(const ModelBundle& bundle, std::span<const RunInput> runs, recenter::ReferenceKind mode,
                          const PipelineConfig& cfg, const std::string& config_hash = "");

struct StreamRun {
    std::string run_id;
    std::string source;
    const synth::EegStream* stream = nullptr;
    const synth::GroundTruth* truth = nullptr;
};

SessionLog replay(const ModelBundle& bundle, std::span<const StreamRun> runs, recenter::ReferenceKind mode,
                  const PipelineConfig& cfg, const std::string& config_hash = "");

// ---------------------------------------------------------------- reports

/// Margins of one decoder's positive and negative windows in a run.
analysis::ClassMargins run_margins(const RunLog& run, decoder::DecoderId id, bool identity_geometry = false);

/// Per-run AUC of one decoder's mode margins; empty if a class is absent.
std::optional<double> run_auc(const RunLog& run, decoder::DecoderId id);

/// Mean of the onset and offset AUCs (whichever are defined).
std::optional<double> combined_auc(const RunLog& run);

analysis::RunMetrics run_metrics(const RunLog& run);

/// Mode margins against identity-geometry margins, pooled over all runs.
analysis::BiasReport bias_report(const SessionLog& log, decoder::DecoderId id);

struct PairedTest {
    std::string label;
    decoder::DecoderId decoder = decoder::DecoderId::Onset;
    std::vector<double> differences;
    std::optional<analysis::WilcoxonResult> result;
    std::string error;
};

/// Paired per-run AUC test of log b against log a.
PairedTest paired_auc_test(const SessionLog& a, const SessionLog& b, decoder::DecoderId id);

} // namespace mibci::pipeline
