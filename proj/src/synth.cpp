#include <mibci/synth.hpp>

#include <mibci/preprocess.hpp>

#include <cmath>
#include <cstdio>
#include <numbers>

namespace mibci::synth {

namespace {

constexpr const char* kPhaseNames[kPhaseCount] = {"rest", "fixation", "start_mi", "maintain", "stop_mi", "return_home"};

constexpr double kWarmupSeconds = 2.0;
constexpr double kImpulseSeconds = 30.0;

bool is_movement(int phase)
{
    return phase == static_cast<int>(Phase::Maintain) || phase == static_cast<int>(Phase::ReturnHome);
}

// Narrowband noise generator with unit output variance.
class BandNoise {
public:
    BandNoise(const Source& src, double fs)
        : filter_(preprocess::design_butterworth_bandpass(src.freq - src.bandwidth / 2.0, src.freq + src.bandwidth / 2.0,
                                                          fs, 2),
                  1)
    {
        // Output variance for unit white input is the impulse-response energy.
        preprocess::FilterState probe(filter_.coefficients(), 1);
        double energy = 0.0;
        const auto n = static_cast<long>(kImpulseSeconds * fs);
        for (long i = 0; i < n; ++i) {
            double x = i == 0 ? 1.0 : 0.0;
            probe.step_inplace(std::span<double>(&x, 1));
            energy += x * x;
        }
        scale_ = 1.0 / std::sqrt(energy);
    }

    double next(double white)
    {
        filter_.step_inplace(std::span<double>(&white, 1));
        return white * scale_;
    }

private:
    preprocess::FilterState filter_;
    double scale_ = 1.0;
};

Vector unit_pattern(int channels, std::initializer_list<std::pair<int, double>> weights)
{
    Vector p = Vector::Zero(channels);
    for (const auto& [ch, w] : weights) {
        p(ch) = w;
    }
    return p / p.norm();
}

} // namespace

std::string to_string(Phase p)
{
    return kPhaseNames[static_cast<int>(p)];
}

Phase phase_from_string(const std::string& s)
{
    for (int i = 0; i < kPhaseCount; ++i) {
        if (s == kPhaseNames[i]) {
            return static_cast<Phase>(i);
        }
    }
    throw Error(ErrorKind::Format, "unknown synthetic phase '" + s + "'");
}

double NormalRng::uniform()
{
    // 53 random bits, offset by half a step so 0 is never returned.
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double NormalRng::normal()
{
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

void SyntheticSessionSpec::validate() const
{
    if (!(fs > 0.0) || channels < 1) {
        throw Error(ErrorKind::Argument, "synth: fs must be positive and channels >= 1");
    }
    if (n_trials < 1) {
        throw Error(ErrorKind::EmptySession, "synth: n_trials must be >= 1 (got " + std::to_string(n_trials) + ")");
    }
    for (double d : durations) {
        if (!(d >= 0.0) || !std::isfinite(d)) {
            throw Error(ErrorKind::Argument, "synth: phase durations must be finite and non-negative");
        }
    }
    if (!(trial_duration() > 0.0)) {
        throw Error(ErrorKind::Argument, "synth: trial duration must be positive");
    }
    if (!(noise_floor >= 0.0) || !(movement_broadband >= 0.0)) {
        throw Error(ErrorKind::Argument, "synth: noise powers must be non-negative");
    }
    for (const auto& s : sources) {
        if (s.pattern.size() != channels) {
            throw Error(ErrorKind::Argument, "synth: source pattern length differs from channel count");
        }
        if (std::abs(s.pattern.norm() - 1.0) > 1e-9) {
            throw Error(ErrorKind::Argument, "synth: source patterns must have unit norm");
        }
        if (!(s.bandwidth > 0.0) || !(s.freq - s.bandwidth / 2.0 > 0.0) || !(s.freq + s.bandwidth / 2.0 < fs / 2.0)) {
            throw Error(ErrorKind::Argument, "synth: source band must lie inside (0, fs/2)");
        }
        if (!(s.power >= 0.0)) {
            throw Error(ErrorKind::Argument, "synth: source power must be non-negative");
        }
        for (double g : s.gains) {
            if (!(g >= 0.0) || !std::isfinite(g)) {
                throw Error(ErrorKind::Argument, "synth: phase gains must be finite and non-negative");
            }
        }
    }
    if (drift.size() != 0 && (drift.rows() != channels || drift.cols() != channels || !drift.allFinite())) {
        throw Error(ErrorKind::Argument, "synth: drift must be a finite channels x channels matrix");
    }
}

double SyntheticSessionSpec::trial_duration() const
{
    double t = 0.0;
    for (double d : durations) {
        t += d;
    }
    return t;
}

SyntheticSessionSpec default_spec(int channels)
{
    if (channels < 5) {
        throw Error(ErrorKind::Argument, "default_spec: the default montage needs at least 5 channels");
    }
    SyntheticSessionSpec spec;
    spec.channels = channels;
    Source mu;
    mu.freq = 10.0;
    mu.bandwidth = 2.0;
    mu.power = 1.0;
    mu.pattern = unit_pattern(channels, {{0, 1.0}, {1, 0.6}, {2, 0.4}});
    mu.gains = {1.0, 1.0, 0.5, 0.5, 0.6, 1.0};
    Source beta;
    beta.freq = 20.0;
    beta.bandwidth = 4.0;
    beta.power = 0.49;
    beta.pattern = unit_pattern(channels, {{1, 1.0}, {3, 0.7}, {4, 0.5}});
    beta.gains = {1.0, 1.0, 1.0, 1.0, 1.5, 1.0};
    spec.sources = {mu, beta};
    return spec;
}

std::vector<std::string> default_channel_names(int channels)
{
    std::vector<std::string> names;
    for (int c = 0; c < channels; ++c) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "Ch%02d", c + 1);
        names.emplace_back(buf);
    }
    return names;
}

Matrix background_mixing(std::uint64_t subject_seed, int channels)
{
    NormalRng rng(subject_seed);
    Matrix mix(channels, channels);
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
    for (int i = 0; i < channels; ++i) {
        for (int j = 0; j < channels; ++j) {
            mix(i, j) = rng.normal() * scale;
        }
    }
    mix += 0.5 * Matrix::Identity(channels, channels);
    return mix;
}

Matrix make_drift(double strength, std::uint64_t seed, int channels)
{
    if (!std::isfinite(strength)) {
        throw Error(ErrorKind::Argument, "make_drift: strength must be finite");
    }
    if (channels < 1) {
        throw Error(ErrorKind::Argument, "make_drift: channels must be >= 1");
    }
    if (strength == 0.0) {
        return Matrix::Identity(channels, channels);
    }
    NormalRng rng(seed);
    Matrix d(channels, channels);
    for (int i = 0; i < channels; ++i) {
        for (int j = 0; j < channels; ++j) {
            d(i, j) = rng.normal();
        }
    }
    d = (0.5 * (d + d.transpose())).eval();
    d /= d.norm();
    return spd::spd_exp(spd::SymMatrix(strength * d)).matrix();
}

SyntheticSession generate_session(const SyntheticSessionSpec& spec)
{
    spec.validate();
    const int c = spec.channels;
    const Matrix mix = background_mixing(spec.subject_seed, c);
    const Matrix drift = spec.drift.size() == 0 ? Matrix::Identity(c, c) : spec.drift;

    std::array<std::int64_t, kPhaseCount> phase_samples{};
    std::int64_t trial_samples = 0;
    for (int p = 0; p < kPhaseCount; ++p) {
        phase_samples[static_cast<std::size_t>(p)] = std::llround(spec.durations[static_cast<std::size_t>(p)] * spec.fs);
        trial_samples += phase_samples[static_cast<std::size_t>(p)];
    }
    const std::int64_t total = trial_samples * spec.n_trials;

    NormalRng rng(spec.seed);
    SyntheticSession out;
    out.truth.fs = spec.fs;
    out.truth.drift = drift;
    out.truth.durations = spec.durations;
    out.truth.phase.resize(static_cast<std::size_t>(total));
    for (int k = 0; k < spec.n_trials; ++k) {
        TrialTruth tt;
        tt.trial_id = k;
        tt.target_id = 1 + static_cast<int>(rng.bits() % 3);
        tt.start_sample = k * trial_samples;
        tt.cue_sample = tt.start_sample + phase_samples[0] + phase_samples[1];
        tt.intended_start = static_cast<double>(tt.cue_sample) / spec.fs;
        tt.intended_stop = static_cast<double>(tt.cue_sample + phase_samples[2] + phase_samples[3]) / spec.fs;
        out.truth.trials.push_back(tt);
        std::int64_t pos = tt.start_sample;
        for (int p = 0; p < kPhaseCount; ++p) {
            for (std::int64_t i = 0; i < phase_samples[static_cast<std::size_t>(p)]; ++i) {
                out.truth.phase[static_cast<std::size_t>(pos++)] = static_cast<std::int8_t>(p);
            }
        }
    }

    std::vector<BandNoise> oscillators;
    for (const auto& s : spec.sources) {
        oscillators.emplace_back(s, spec.fs);
    }
    const auto warmup = static_cast<long>(kWarmupSeconds * spec.fs);
    for (auto& osc : oscillators) {
        for (long i = 0; i < warmup; ++i) {
            osc.next(rng.normal());
        }
    }

    out.stream.fs = spec.fs;
    out.stream.channels = c;
    out.stream.channel_names = default_channel_names(c);
    out.stream.samples.resize(static_cast<std::size_t>(total * c));
    const double noise_amp = std::sqrt(spec.noise_floor);
    const double move_amp = std::sqrt(spec.movement_broadband);
    Vector z(c);
    Vector x(c);
    for (std::int64_t n = 0; n < total; ++n) {
        const int phase = out.truth.phase[static_cast<std::size_t>(n)];
        for (int i = 0; i < c; ++i) {
            z(i) = rng.normal();
        }
        x.noalias() = noise_amp * (mix * z);
        for (std::size_t s = 0; s < oscillators.size(); ++s) {
            const Source& src = spec.sources[s];
            const double amp = std::sqrt(src.power * src.gains[static_cast<std::size_t>(phase)]);
            x += (amp * oscillators[s].next(rng.normal())) * src.pattern;
        }
        // Movement noise: a common-mode component plus independent channel
        // noise, unit variance per channel before scaling.
        const double common = rng.normal();
        for (int i = 0; i < c; ++i) {
            const double m = 0.5 * common + std::sqrt(0.75) * rng.normal();
            if (is_movement(phase)) {
                x(i) += move_amp * m;
            }
        }
        const Vector y = drift * x;
        float* dst = out.stream.samples.data() + n * c;
        for (int i = 0; i < c; ++i) {
            dst[i] = static_cast<float>(y(i));
        }
    }
    return out;
}

} // namespace mibci::synth
