#pragma once

// Experiment configuration as a flat "key = value" text file with dotted
// section keys, plus its content hash.

#include <mibci/analysis.hpp>
#include <mibci/pipeline.hpp>
#include <mibci/synth.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mibci::config {

/// Parameters of one rhythm source of the default synthetic montage.
struct SourceParams {
    double freq = 0.0;
    double bandwidth = 0.0;
    double power = 0.0;
    synth::PhaseGains gains{};
};

/// Defaults come from synth::default_spec.
struct SynthParams {
    double fs = 0.0;
    int channels = 16;
    int calibration_trials = 0;
    std::array<double, synth::kPhaseCount> durations{};
    double noise_floor = 0.0;
    double movement_broadband = 0.0;
    std::uint64_t subject_seed = 1;
    SourceParams mu;
    SourceParams beta;
    /// Online runs, split into sessions of runs_per_session runs each.
    int online_runs = 4;
    int online_trials = 10;
    int runs_per_session = 2;
    /// Congruence drift strength of each session after the first online one.
    double session_drift = 0.5;
    std::uint64_t drift_seed = 1000;

    SynthParams();
};

struct AnalysisParams {
    analysis::SpectrogramConfig spectrogram;
    /// Spectrogram baseline in seconds from trial start.
    double baseline_begin = 0.0;
    double baseline_end = 3.0;
    int channel = 0;
    int bootstrap_resamples = 2000;
};

struct ExperimentConfig {
    std::string mode = "fixation";
    std::uint64_t seed = 1;
    std::string data_dir = "data";
    std::string model_dir = "models";
    std::string report_dir = "reports";
    pipeline::PipelineConfig pipeline;
    SynthParams synth;
    AnalysisParams analysis;

    void validate() const;
    recenter::ReferenceKind reference_kind() const;
    /// Default montage with the configured sources, timeline and noise.
    synth::SyntheticSessionSpec synth_spec(int n_trials, std::uint64_t session_seed) const;
};

/// All keys in sorted order.
std::vector<std::string> keys();

/// Canonical text: one "key = value" line per key, sorted, doubles in
/// shortest round-trip form.
std::string to_text(const ExperimentConfig& cfg);

/// Applies "key = value" lines over `base`. Blank lines and lines starting
/// with '#' are skipped. Unknown keys and malformed values are argument errors.
ExperimentConfig parse(const std::string& text, ExperimentConfig base = {});

ExperimentConfig load(const std::filesystem::path& path, ExperimentConfig base = {});

void set(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get(const ExperimentConfig& cfg, const std::string& key);

/// Lowercase hex SHA-256 of to_text(cfg).
std::string hash(const ExperimentConfig& cfg);

std::string sha256_hex(std::string_view bytes);

/// Independent seed for stream `index` under a master seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

} // namespace mibci::config
