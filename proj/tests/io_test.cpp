#include <mibci/io.hpp>

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

using namespace mibci;
using namespace mibci::io;

namespace {

fs::path temp_dir()
{
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    const fs::path dir = fs::temp_directory_path() / "mibci_io_test" / info->name();
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ErrorKind kind_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::Argument;
}

synth::SyntheticSession small_session(int trials = 2)
{
    auto spec = synth::default_spec(8);
    spec.n_trials = trials;
    return synth::generate_session(spec);
}

} // namespace

TEST(Eeg, RoundTripIsBitExact)
{
    const auto s = small_session();
    const auto path = temp_dir() / "a.eegs";
    write_eeg(path, s.stream);
    const auto back = read_eeg(path);
    EXPECT_EQ(back.fs, s.stream.fs);
    EXPECT_EQ(back.channels, s.stream.channels);
    EXPECT_EQ(back.channel_names, s.stream.channel_names);
    ASSERT_EQ(back.samples.size(), s.stream.samples.size());
    EXPECT_EQ(std::memcmp(back.samples.data(), s.stream.samples.data(), s.stream.samples.size() * sizeof(float)), 0);
}

TEST(Eeg, FileLengthIsHeaderPlusFrames)
{
    auto spec = synth::default_spec(16);
    spec.n_trials = 20;
    const auto s = synth::generate_session(spec);
    const auto path = temp_dir() / "b.eegs";
    write_eeg(path, s.stream);
    // 17 s per trial at 512 Hz; names "Ch01".."Ch16" take 2 + 4 bytes each.
    const std::uintmax_t frames = 20ULL * 17 * 512;
    const std::uintmax_t header = 4 + 2 + 4 + 2 + 16 * 6;
    EXPECT_EQ(eeg_header_size(s.stream.channel_names), header);
    EXPECT_EQ(fs::file_size(path), header + frames * 16 * 4);
}

TEST(Eeg, HeaderLayoutIsLittleEndian)
{
    synth::EegStream s;
    s.fs = 512.0;
    s.channels = 2;
    s.channel_names = {"C3", "Cz4"};
    s.samples = {1.0F, -2.0F};
    const auto path = temp_dir() / "c.eegs";
    write_eeg(path, s);
    const std::string b = slurp(path);
    const std::string expected_header = std::string("EEGS") + std::string("\x01\x00", 2) +
                                        std::string("\x00\x02\x00\x00", 4) + std::string("\x02\x00", 2) +
                                        std::string("\x02\x00", 2) + "C3" + std::string("\x03\x00", 2) + "Cz4";
    ASSERT_EQ(b.size(), expected_header.size() + 8);
    EXPECT_EQ(b.substr(0, expected_header.size()), expected_header);
    // 1.0f = 0x3F800000, -2.0f = 0xC0000000.
    EXPECT_EQ(b.substr(expected_header.size()), std::string("\x00\x00\x80\x3F\x00\x00\x00\xC0", 8));
}

TEST(Eeg, RejectsMalformedFiles)
{
    const auto dir = temp_dir();
    const auto s = small_session(1);
    write_eeg(dir / "ok.eegs", s.stream);
    const std::string good = slurp(dir / "ok.eegs");

    spit(dir / "magic.eegs", "EEGX" + good.substr(4));
    EXPECT_EQ(kind_of([&] { read_eeg(dir / "magic.eegs"); }), ErrorKind::Format);

    std::string v2 = good;
    v2[4] = 2;
    spit(dir / "v2.eegs", v2);
    EXPECT_EQ(kind_of([&] { read_eeg(dir / "v2.eegs"); }), ErrorKind::Version);

    spit(dir / "partial.eegs", good.substr(0, good.size() - 3));
    EXPECT_EQ(kind_of([&] { read_eeg(dir / "partial.eegs"); }), ErrorKind::Format);

    spit(dir / "names.eegs", good.substr(0, 20));
    EXPECT_EQ(kind_of([&] { read_eeg(dir / "names.eegs"); }), ErrorKind::Format);

    try {
        read_eeg(dir / "missing.eegs");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Io);
        EXPECT_NE(std::string(e.what()).find("missing.eegs"), std::string::npos);
    }
    EXPECT_EQ(kind_of([&] { write_eeg(dir / "no_such_dir" / "x.eegs", s.stream); }), ErrorKind::Io);

    auto bad = s.stream;
    bad.fs = 512.5;
    EXPECT_EQ(kind_of([&] { write_eeg(dir / "frac.eegs", bad); }), ErrorKind::Argument);
}

TEST(Base64, KnownEncoding)
{
    // 1.0 is 00 00 00 00 00 00 F0 3F little-endian.
    const std::vector<double> one{1.0};
    EXPECT_EQ(encode_doubles(one), "AAAAAAAA8D8=");
    EXPECT_EQ(decode_doubles("AAAAAAAA8D8="), one);
    EXPECT_EQ(encode_doubles({}), "");
    EXPECT_TRUE(decode_doubles("").empty());
}

TEST(Base64, SpecialValuesRoundTripBitwise)
{
    const std::vector<double> v{0.0,
                                -0.0,
                                std::numeric_limits<double>::denorm_min(),
                                std::numeric_limits<double>::max(),
                                std::numeric_limits<double>::infinity(),
                                std::numeric_limits<double>::quiet_NaN(),
                                0.1,
                                -1.0 / 3.0};
    for (std::size_t n = 0; n <= v.size(); ++n) {
        const std::span<const double> head(v.data(), n);
        const auto back = decode_doubles(encode_doubles(head));
        ASSERT_EQ(back.size(), n);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i]), std::bit_cast<std::uint64_t>(v[i]));
        }
    }
}

TEST(Base64, RejectsGarbage)
{
    EXPECT_EQ(kind_of([] { decode_doubles("abc"); }), ErrorKind::Format);
    EXPECT_EQ(kind_of([] { decode_doubles("!!!!"); }), ErrorKind::Format);
    // Six bytes are not a float64.
    EXPECT_EQ(kind_of([] { decode_doubles("AAAAAAAA"); }), ErrorKind::Format);
}

TEST(MatrixJson, RowMajorLayout)
{
    spd::Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    const json j = matrix_to_json(m);
    EXPECT_EQ(j.at("rows"), 2);
    EXPECT_EQ(j.at("cols"), 3);
    EXPECT_EQ(decode_doubles(j.at("data").get<std::string>()), (std::vector<double>{1, 2, 3, 4, 5, 6}));
    EXPECT_EQ(matrix_from_json(j), m);
    json bad = j;
    bad["cols"] = 2;
    EXPECT_EQ(kind_of([&] { matrix_from_json(bad); }), ErrorKind::Format);
}

TEST(MatrixJson, SpdRestoresDecompositionVerbatim)
{
    std::mt19937_64 rng(4);
    for (int k = 0; k < 5; ++k) {
        const auto s = mibci::testing::random_spd(rng, 6);
        const auto back = spd_from_json(spd_to_json(s));
        EXPECT_EQ(back.matrix(), s.matrix());
        EXPECT_EQ(back.eigenvalues(), s.eigenvalues());
        EXPECT_EQ(back.eigenvectors(), s.eigenvectors());
        EXPECT_EQ(back.floored(), s.floored());
    }
    json bad = spd_to_json(spd::SpdMatrix::identity(3));
    bad["eigenvalues"] = matrix_to_json(spd::Vector::Constant(3, 2.0));
    EXPECT_EQ(kind_of([&] { spd_from_json(bad); }), ErrorKind::Format);
}

TEST(Truth, SidecarRoundTrip)
{
    auto spec = synth::default_spec(8);
    spec.n_trials = 3;
    spec.drift = synth::make_drift(0.5, 2, 8);
    const auto s = synth::generate_session(spec);
    const auto path = temp_dir() / "t.json";
    save_truth(path, s.truth, "abc");
    const auto back = load_truth(path);
    EXPECT_EQ(back.config_hash, "abc");
    EXPECT_EQ(back.version, pipeline::kFormatVersion);
    EXPECT_EQ(back.truth.phase, s.truth.phase);
    EXPECT_EQ(back.truth.fs, s.truth.fs);
    EXPECT_EQ(back.truth.durations, s.truth.durations);
    EXPECT_EQ(back.truth.drift, s.truth.drift);
    ASSERT_EQ(back.truth.trials.size(), 3U);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(back.truth.trials[k].cue_sample, s.truth.trials[k].cue_sample);
        EXPECT_EQ(back.truth.trials[k].intended_stop, s.truth.trials[k].intended_stop);
        EXPECT_EQ(back.truth.trials[k].target_id, s.truth.trials[k].target_id);
    }
    EXPECT_EQ(dump(truth_to_json(back.truth, back.config_hash)), slurp(path));
}

class BundleIo : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        session_ = new synth::SyntheticSession(small_session(8));
        bundle_ = new pipeline::ModelBundle(pipeline::calibrate(session_->stream, session_->truth, {}, "cafe"));
    }

    static void TearDownTestSuite()
    {
        delete bundle_;
        delete session_;
    }

    static synth::SyntheticSession* session_;
    static pipeline::ModelBundle* bundle_;
};

synth::SyntheticSession* BundleIo::session_ = nullptr;
pipeline::ModelBundle* BundleIo::bundle_ = nullptr;

TEST_F(BundleIo, RoundTripsBitIdentically)
{
    const auto path = temp_dir() / "model.json";
    save_bundle(path, *bundle_);
    const auto back = load_bundle(path);
    EXPECT_EQ(dump(bundle_to_json(back)), slurp(path));
    EXPECT_EQ(back.onset.threshold, bundle_->onset.threshold);
    EXPECT_EQ(back.offset.temperature, bundle_->offset.temperature);
    EXPECT_EQ(back.onset.prototypes.positive.matrix(), bundle_->onset.prototypes.positive.matrix());
    EXPECT_EQ(back.montage.channel_names, bundle_->montage.channel_names);
    ASSERT_TRUE(back.fixation_reference.has_value());
    EXPECT_EQ(back.fixation_reference->s_ref.matrix(), bundle_->fixation_reference->s_ref.matrix());
    EXPECT_EQ(back.onset.diagnostics.n_positive, bundle_->onset.diagnostics.n_positive);
    const auto j = read_json(path);
    EXPECT_EQ(j.at("config_hash"), "cafe");
    EXPECT_EQ(j.at("version"), pipeline::kFormatVersion);
    EXPECT_TRUE(j.at("onset").at("diagnostics").contains("mean_iterations"));
}

TEST_F(BundleIo, LoadedBundleReplaysIdentically)
{
    const auto dir = temp_dir();
    save_bundle(dir / "model.json", *bundle_);
    const auto back = load_bundle(dir / "model.json");
    const auto online = small_session(2);
    const std::vector<pipeline::StreamRun> runs{{"r0", "x.eegs", &online.stream, &online.truth}};
    for (auto mode : {recenter::ReferenceKind::Task, recenter::ReferenceKind::Fixation}) {
        const auto a = pipeline::replay(*bundle_, runs, mode, {}, "cafe");
        const auto b = pipeline::replay(back, runs, mode, {}, "cafe");
        EXPECT_EQ(dump(session_log_to_json(a)), dump(session_log_to_json(b)));
    }
}

TEST_F(BundleIo, SessionLogRoundTrip)
{
    const auto online = small_session(2);
    const std::vector<pipeline::StreamRun> runs{{"r0", "x.eegs", &online.stream, &online.truth}};
    const auto log = pipeline::replay(*bundle_, runs, recenter::ReferenceKind::Fixation, {}, "cafe");
    const auto path = temp_dir() / "log.json";
    save_session_log(path, log);
    const auto back = load_session_log(path);
    EXPECT_EQ(dump(session_log_to_json(back)), slurp(path));
    ASSERT_EQ(back.runs.size(), 1U);
    EXPECT_EQ(back.runs[0].source, "x.eegs");
    EXPECT_EQ(back.mode, recenter::ReferenceKind::Fixation);
    ASSERT_EQ(back.runs[0].trials.size(), log.runs[0].trials.size());
    EXPECT_EQ(back.runs[0].trials[0].onset_trace.size(), log.runs[0].trials[0].onset_trace.size());
    EXPECT_EQ(back.runs[0].trials[0].onset_latency, log.runs[0].trials[0].onset_latency);
    EXPECT_EQ(back.runs[0].windows.size(), log.runs[0].windows.size());
    EXPECT_EQ(back.runs[0].bootstrap_windows, log.runs[0].bootstrap_windows);
}

TEST_F(BundleIo, VersionAndKindAreChecked)
{
    json j = bundle_to_json(*bundle_);
    j["version"] = pipeline::kFormatVersion + 1;
    EXPECT_EQ(kind_of([&] { bundle_from_json(j); }), ErrorKind::Version);
    j.erase("version");
    EXPECT_EQ(kind_of([&] { bundle_from_json(j); }), ErrorKind::Format);
    json k = bundle_to_json(*bundle_);
    EXPECT_EQ(kind_of([&] { session_log_from_json(k); }), ErrorKind::Format);
    k.erase("onset");
    EXPECT_EQ(kind_of([&] { bundle_from_json(k); }), ErrorKind::Format);

    const auto path = temp_dir() / "bad.json";
    spit(path, "{not json");
    try {
        load_bundle(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Format);
        EXPECT_NE(std::string(e.what()).find("bad.json"), std::string::npos);
    }
}
