#pragma once

// Synthetic EEG with phase-locked sensorimotor rhythm modulation, spatial
// mixing, movement noise and congruence drift.

#include <mibci/spd.hpp>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mibci::synth {

using spd::Matrix;
using spd::Vector;

/// Trial phases of the synthetic protocol, in order.
enum class Phase : std::int8_t { Rest = 0, Fixation = 1, StartMI = 2, Maintain = 3, StopMI = 4, ReturnHome = 5 };
inline constexpr int kPhaseCount = 6;
/// Label for frames outside any trial.
inline constexpr std::int8_t kNoPhase = -1;

std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

using PhaseGains = std::array<double, kPhaseCount>;

/// Narrowband oscillatory source. Gains scale power (variance) per phase.
struct Source {
    double freq = 10.0;
    double bandwidth = 2.0;
    double power = 1.0;
    Vector pattern;
    PhaseGains gains{1, 1, 1, 1, 1, 1};
};

struct SyntheticSessionSpec {
    double fs = 512.0;
    int channels = 16;
    int n_trials = 20;
    std::array<double, kPhaseCount> durations{3.0, 3.0, 3.0, 2.0, 3.0, 3.0};
    std::vector<Source> sources;
    /// Power of the spatially mixed broadband background.
    double noise_floor = 0.5;
    /// Power of broadband movement noise during Maintain and ReturnHome.
    double movement_broadband = 0.03;
    /// Applied to every frame as x -> W x.
    Matrix drift;
    /// Seeds the subject's background mixing matrix.
    std::uint64_t subject_seed = 1;
    /// Seeds the noise realisations of this session.
    std::uint64_t seed = 1;

    void validate() const;
    double trial_duration() const;
};

/// The default two-source montage: mu ERD with Start/Maintain, beta
/// rebound with Stop.
SyntheticSessionSpec default_spec(int channels = 16);

struct TrialTruth {
    int trial_id = 0;
    int target_id = 1;
    std::int64_t start_sample = 0;
    std::int64_t cue_sample = 0;
    double intended_start = 0.0; ///< seconds
    double intended_stop = 0.0;  ///< seconds
};

struct GroundTruth {
    std::vector<std::int8_t> phase; ///< per frame
    std::vector<TrialTruth> trials;
    Matrix drift;
    std::array<double, kPhaseCount> durations{};
    double fs = 0.0;
};

/// Frame-major float32 samples.
struct EegStream {
    double fs = 0.0;
    int channels = 0;
    std::vector<std::string> channel_names;
    std::vector<float> samples;

    std::int64_t frames() const { return channels > 0 ? static_cast<std::int64_t>(samples.size()) / channels : 0; }
    const float* frame(std::int64_t i) const { return samples.data() + i * channels; }
};

struct SyntheticSession {
    EegStream stream;
    GroundTruth truth;
};

/// Platform-independent standard normal draws: mt19937_64 bits turned into
/// uniforms with 53-bit resolution, then Box-Muller.
class NormalRng {
public:
    explicit NormalRng(std::uint64_t seed) : engine_(seed) {}

    double uniform(); ///< in (0, 1)
    double normal();
    std::uint64_t bits() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

SyntheticSession generate_session(const SyntheticSessionSpec& spec);

/// spd_exp(strength * D) for a random symmetric D with unit Frobenius norm.
Matrix make_drift(double strength, std::uint64_t seed, int channels);

/// The subject-specific background mixing matrix.
Matrix background_mixing(std::uint64_t subject_seed, int channels);

std::vector<std::string> default_channel_names(int channels);

} // namespace mibci::synth
