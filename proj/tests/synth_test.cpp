#include <mibci/synth.hpp>

#include "oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

using namespace mibci;
using namespace mibci::synth;

namespace {

SyntheticSessionSpec small_spec(int trials = 2)
{
    auto spec = default_spec(6);
    spec.n_trials = trials;
    return spec;
}

/// One channel carrying one source and nothing else.
SyntheticSessionSpec pure_source_spec(int trials)
{
    SyntheticSessionSpec spec;
    spec.channels = 1;
    spec.n_trials = trials;
    spec.noise_floor = 0.0;
    spec.movement_broadband = 0.0;
    Source mu;
    mu.freq = 10.0;
    mu.bandwidth = 2.0;
    mu.power = 1.0;
    mu.pattern = Vector::Ones(1);
    mu.gains = {1.0, 1.0, 0.5, 0.5, 0.6, 1.0};
    spec.sources = {mu};
    return spec;
}

} // namespace

TEST(NormalRng, DeterministicAndStandard)
{
    NormalRng a(42);
    NormalRng b(42);
    double sum = 0.0;
    double sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = a.normal();
        EXPECT_EQ(x, b.normal());
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(NormalRng, UniformOpenInterval)
{
    NormalRng r(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        EXPECT_GT(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}

TEST(GenerateSession, ByteIdenticalUnderSeed)
{
    auto spec = small_spec();
    spec.seed = 7;
    const auto a = generate_session(spec);
    const auto b = generate_session(spec);
    ASSERT_EQ(a.stream.samples.size(), b.stream.samples.size());
    EXPECT_EQ(std::memcmp(a.stream.samples.data(), b.stream.samples.data(), a.stream.samples.size() * sizeof(float)),
              0);
    EXPECT_EQ(a.truth.phase, b.truth.phase);
    spec.seed = 8;
    const auto c = generate_session(spec);
    EXPECT_NE(std::memcmp(a.stream.samples.data(), c.stream.samples.data(), a.stream.samples.size() * sizeof(float)),
              0);
}

TEST(GenerateSession, TimelineMatchesSpec)
{
    const auto spec = small_spec(3);
    const auto s = generate_session(spec);
    const std::int64_t per_trial = std::llround(spec.trial_duration() * spec.fs);
    EXPECT_EQ(s.stream.frames(), per_trial * 3);
    EXPECT_EQ(static_cast<std::int64_t>(s.truth.phase.size()), s.stream.frames());
    EXPECT_EQ(s.stream.channel_names.size(), 6U);
    EXPECT_EQ(s.stream.channel_names.front(), "Ch01");
    ASSERT_EQ(s.truth.trials.size(), 3U);
    for (const auto& t : s.truth.trials) {
        EXPECT_EQ(t.start_sample, t.trial_id * per_trial);
        EXPECT_DOUBLE_EQ(t.intended_start, static_cast<double>(t.start_sample) / spec.fs + 6.0);
        EXPECT_DOUBLE_EQ(t.intended_stop - t.intended_start, spec.durations[2] + spec.durations[3]);
        EXPECT_GE(t.target_id, 1);
        EXPECT_LE(t.target_id, 3);
        EXPECT_EQ(s.truth.phase[static_cast<std::size_t>(t.cue_sample)], static_cast<std::int8_t>(Phase::StartMI));
        EXPECT_EQ(s.truth.phase[static_cast<std::size_t>(t.cue_sample - 1)], static_cast<std::int8_t>(Phase::Fixation));
    }
}

TEST(GenerateSession, PowerBookkeepingPerPhase)
{
    // 1000 trials give 2000 s or more of aggregate time per phase, so the
    // sampling error of a 2 Hz band variance stays near 1%.
    const auto spec = pure_source_spec(1000);
    const auto s = generate_session(spec);
    std::array<double, kPhaseCount> power{};
    std::array<double, kPhaseCount> count{};
    for (std::int64_t n = 0; n < s.stream.frames(); ++n) {
        const auto p = static_cast<std::size_t>(s.truth.phase[static_cast<std::size_t>(n)]);
        const double x = s.stream.frame(n)[0];
        power[p] += x * x;
        count[p] += 1.0;
    }
    for (std::size_t p = 0; p < kPhaseCount; ++p) {
        EXPECT_GE(count[p] / spec.fs, 30.0);
        EXPECT_NEAR(power[p] / count[p] / spec.sources[0].gains[p], 1.0, 0.05) << to_string(static_cast<Phase>(p));
    }
}

TEST(GenerateSession, NoiseOnlyCovarianceMatchesMixing)
{
    auto spec = small_spec(4);
    spec.sources.clear();
    spec.movement_broadband = 0.0;
    const auto s = generate_session(spec);
    const int c = spec.channels;
    Matrix cov = Matrix::Zero(c, c);
    for (std::int64_t n = 0; n < s.stream.frames(); ++n) {
        Vector x(c);
        for (int i = 0; i < c; ++i) {
            x(i) = s.stream.frame(n)[i];
        }
        cov += x * x.transpose();
    }
    cov /= static_cast<double>(s.stream.frames());
    const Matrix mix = background_mixing(spec.subject_seed, c);
    const Matrix expected = spec.noise_floor * mix * mix.transpose();
    EXPECT_LT((cov - expected).norm() / expected.norm(), 0.03);
}

TEST(GenerateSession, DriftIsAppliedAsCongruence)
{
    auto spec = small_spec(1);
    const auto plain = generate_session(spec);
    spec.drift = make_drift(0.5, 3, spec.channels);
    const auto drifted = generate_session(spec);
    for (std::int64_t n = 0; n < plain.stream.frames(); n += 997) {
        Vector x(spec.channels);
        Vector y(spec.channels);
        for (int i = 0; i < spec.channels; ++i) {
            x(i) = plain.stream.frame(n)[i];
            y(i) = drifted.stream.frame(n)[i];
        }
        EXPECT_LT((spec.drift * x - y).norm(), 1e-5 * (1.0 + x.norm()));
    }
}

TEST(GenerateSession, InvalidSpecs)
{
    auto spec = small_spec();
    spec.n_trials = 0;
    try {
        generate_session(spec);
        FAIL() << "expected EmptySession";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptySession);
    }
    spec = small_spec();
    spec.sources[0].pattern *= 2.0;
    EXPECT_THROW(generate_session(spec), Error);
    spec = small_spec();
    spec.drift = Matrix::Identity(3, 3);
    EXPECT_THROW(generate_session(spec), Error);
    spec = small_spec();
    spec.durations[0] = -1.0;
    EXPECT_THROW(generate_session(spec), Error);
    EXPECT_THROW(default_spec(4), Error);
}

TEST(MakeDrift, ZeroStrengthIsIdentity)
{
    EXPECT_EQ(make_drift(0.0, 5, 8), Matrix::Identity(8, 8));
}

TEST(MakeDrift, DistanceFromIdentityEqualsStrength)
{
    for (double strength : {0.25, 0.5, 1.0}) {
        const Matrix w = make_drift(strength, 11, 8);
        EXPECT_NEAR(oracle::airm(Matrix::Identity(8, 8), w), strength, 1e-9);
        EXPECT_LT((w - w.transpose()).norm(), 1e-12);
    }
    EXPECT_THROW(make_drift(std::nan(""), 1, 4), Error);
}

TEST(MakeDrift, PreservesPairwiseDistances)
{
    std::mt19937_64 rng(2);
    const Matrix w = make_drift(0.5, 4, 6);
    for (int k = 0; k < 10; ++k) {
        std::normal_distribution<double> g;
        Matrix a(6, 6);
        Matrix b(6, 6);
        for (int i = 0; i < 36; ++i) {
            a(i) = g(rng);
            b(i) = g(rng);
        }
        const Matrix pa = a * a.transpose() + 0.5 * Matrix::Identity(6, 6);
        const Matrix pb = b * b.transpose() + 0.5 * Matrix::Identity(6, 6);
        const double d0 = oracle::airm(pa, pb);
        const double d1 = oracle::airm(w * pa * w.transpose(), w * pb * w.transpose());
        EXPECT_NEAR(d0, d1, 1e-8);
    }
}
