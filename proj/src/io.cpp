#include <mibci/io.hpp>

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mibci::io {

using pipeline::kFormatVersion;

namespace {

constexpr char kMagic[4] = {'E', 'E', 'G', 'S'};

template <typename T>
void put_le(std::string& out, T v)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFFU));
    }
}

template <typename T>
T get_le(const unsigned char* p)
{
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return static_cast<T>(v);
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) {
        throw Error(ErrorKind::Io, "read failed on '" + path.string() + "'");
    }
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) {
        throw Error(ErrorKind::Io, "write failed on '" + path.string() + "'");
    }
}

[[noreturn]] void format_error(const std::string& what)
{
    throw Error(ErrorKind::Format, what);
}

template <typename F>
auto parsing(const std::string& what, F&& f)
{
    try {
        return f();
    } catch (const json::exception& e) {
        format_error(what + ": " + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Version || e.kind() == ErrorKind::Format) {
            throw;
        }
        format_error(what + ": " + e.what());
    }
}

json opt(const std::optional<double>& v)
{
    return v ? json(*v) : json(nullptr);
}

std::optional<double> opt_from(const json& j)
{
    return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

json frame_to_json(const decoder::PosteriorFrame& f)
{
    return json::array({f.t, f.d_pos, f.d_neg, f.p_pos, f.p_hat, f.margin});
}

decoder::PosteriorFrame frame_from_json(const json& j)
{
    if (!j.is_array() || j.size() != 6) {
        format_error("posterior frame must be a 6-element array");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
            j[3].get<double>(), j[4].get<double>(), j[5].get<double>()};
}

json trace_to_json(const std::vector<session::TracePoint>& trace)
{
    json out = json::array();
    for (const auto& tp : trace) {
        json row = frame_to_json(tp.frame);
        row.push_back(session::to_string(tp.phase));
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<session::TracePoint> trace_from_json(const json& j)
{
    std::vector<session::TracePoint> out;
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != 7) {
            format_error("trace point must be a 7-element array");
        }
        json frame = row;
        frame.erase(6);
        out.push_back({frame_from_json(frame), session::trial_phase_from_string(row[6].get<std::string>())});
    }
    return out;
}

json trial_to_json(const session::TrialRecord& r)
{
    json phases = json::array();
    for (const auto& [p, t] : r.phase_times) {
        phases.push_back(json::array({session::to_string(p), t}));
    }
    json decisions = json::array();
    for (const auto& d : r.decisions) {
        decisions.push_back(json::array({session::to_string(d.kind), d.t}));
    }
    json gates = json::array();
    for (const auto& [t, g] : r.gate_changes) {
        gates.push_back(json::array({t, g}));
    }
    return {{"trial_id", r.trial_id},
            {"target_id", r.target_id},
            {"t_start", r.t_start},
            {"t_cue", r.t_cue},
            {"phase_times", phases},
            {"decisions", decisions},
            {"gate_changes", gates},
            {"outcome_onset", session::to_string(r.outcome_onset)},
            {"outcome_offset", session::to_string(r.outcome_offset)},
            {"t_move", opt(r.t_move)},
            {"onset_latency", opt(r.onset_latency)},
            {"offset_latency", opt(r.offset_latency)},
            {"stop_progress", r.stop_progress},
            {"complete", r.complete},
            {"onset_trace", trace_to_json(r.onset_trace)},
            {"offset_trace", trace_to_json(r.offset_trace)}};
}

session::TrialRecord trial_from_json(const json& j)
{
    session::TrialRecord r;
    r.trial_id = j.at("trial_id").get<int>();
    r.target_id = j.at("target_id").get<int>();
    r.t_start = j.at("t_start").get<double>();
    r.t_cue = j.at("t_cue").get<double>();
    for (const auto& p : j.at("phase_times")) {
        r.phase_times.emplace_back(session::trial_phase_from_string(p.at(0).get<std::string>()), p.at(1).get<double>());
    }
    for (const auto& d : j.at("decisions")) {
        r.decisions.push_back({session::decision_kind_from_string(d.at(0).get<std::string>()), d.at(1).get<double>()});
    }
    for (const auto& g : j.at("gate_changes")) {
        r.gate_changes.emplace_back(g.at(0).get<double>(), g.at(1).get<int>());
    }
    r.outcome_onset = session::outcome_from_string(j.at("outcome_onset").get<std::string>());
    r.outcome_offset = session::outcome_from_string(j.at("outcome_offset").get<std::string>());
    r.t_move = opt_from(j.at("t_move"));
    r.onset_latency = opt_from(j.at("onset_latency"));
    r.offset_latency = opt_from(j.at("offset_latency"));
    r.stop_progress = j.at("stop_progress").get<double>();
    r.complete = j.at("complete").get<bool>();
    r.onset_trace = trace_from_json(j.at("onset_trace"));
    r.offset_trace = trace_from_json(j.at("offset_trace"));
    return r;
}

json montage_to_json(const pipeline::Montage& m)
{
    return {{"fs", m.fs}, {"channels", m.channels}, {"channel_names", m.channel_names}};
}

pipeline::Montage montage_from_json(const json& j)
{
    pipeline::Montage m;
    m.fs = j.at("fs").get<double>();
    m.channels = j.at("channels").get<int>();
    m.channel_names = j.at("channel_names").get<std::vector<std::string>>();
    return m;
}

json reference_to_json(const recenter::RecenterReference& r)
{
    return {{"kind", recenter::to_string(r.kind)},
            {"s_ref", spd_to_json(r.s_ref)},
            {"n_samples", r.n_samples},
            {"run_index", r.run_index}};
}

recenter::RecenterReference reference_from_json(const json& j)
{
    recenter::RecenterReference r;
    r.kind = recenter::reference_kind_from_string(j.at("kind").get<std::string>());
    r.s_ref = spd_from_json(j.at("s_ref"));
    r.n_samples = j.at("n_samples").get<int>();
    r.run_index = j.at("run_index").get<int>();
    return r;
}

json model_to_json(const pipeline::DecoderModel& m)
{
    const auto& p = m.prototypes;
    return {{"decoder", decoder::to_string(p.decoder_id)},
            {"prototypes",
             {{"positive", spd_to_json(p.positive)},
              {"negative", spd_to_json(p.negative)},
              {"raw_positive", spd_to_json(p.raw_positive)},
              {"raw_negative", spd_to_json(p.raw_negative)},
              {"s_train", spd_to_json(p.s_train)}}},
            {"temperature", m.temperature},
            {"threshold", m.threshold},
            {"ema_beta", m.ema_beta},
            {"roc",
             {{"theta", m.roc.theta},
              {"tpr", m.roc.tpr},
              {"fpr", m.roc.fpr},
              {"youden", m.roc.youden},
              {"median_latency", opt(m.roc.median_latency)},
              {"degenerate", m.roc.degenerate}}},
            {"threshold_fallback", m.threshold_fallback},
            {"cv_auc", m.cv_auc},
            {"diagnostics",
             {{"n_positive", m.diagnostics.n_positive},
              {"n_negative", m.diagnostics.n_negative},
              {"iterations_positive", m.diagnostics.iterations_positive},
              {"iterations_negative", m.diagnostics.iterations_negative},
              {"iterations_pooled", m.diagnostics.iterations_pooled},
              {"mean_iterations", m.diagnostics.mean_iterations()}}}};
}

pipeline::DecoderModel model_from_json(const json& j)
{
    pipeline::DecoderModel m;
    auto& p = m.prototypes;
    const auto& jp = j.at("prototypes");
    p.decoder_id = decoder::decoder_id_from_string(j.at("decoder").get<std::string>());
    p.positive = spd_from_json(jp.at("positive"));
    p.negative = spd_from_json(jp.at("negative"));
    p.raw_positive = spd_from_json(jp.at("raw_positive"));
    p.raw_negative = spd_from_json(jp.at("raw_negative"));
    p.s_train = spd_from_json(jp.at("s_train"));
    m.temperature = j.at("temperature").get<double>();
    m.threshold = j.at("threshold").get<double>();
    m.ema_beta = j.at("ema_beta").get<double>();
    const auto& roc = j.at("roc");
    m.roc.theta = roc.at("theta").get<double>();
    m.roc.tpr = roc.at("tpr").get<double>();
    m.roc.fpr = roc.at("fpr").get<double>();
    m.roc.youden = roc.at("youden").get<double>();
    m.roc.median_latency = opt_from(roc.at("median_latency"));
    m.roc.degenerate = roc.at("degenerate").get<bool>();
    m.threshold_fallback = j.at("threshold_fallback").get<bool>();
    m.cv_auc = j.at("cv_auc").get<double>();
    const auto& d = j.at("diagnostics");
    m.diagnostics.n_positive = d.at("n_positive").get<int>();
    m.diagnostics.n_negative = d.at("n_negative").get<int>();
    m.diagnostics.iterations_positive = d.at("iterations_positive").get<int>();
    m.diagnostics.iterations_negative = d.at("iterations_negative").get<int>();
    m.diagnostics.iterations_pooled = d.at("iterations_pooled").get<int>();
    return m;
}

json window_to_json(const pipeline::WindowScore& w)
{
    return json::array({w.t, w.trial, w.phase, w.bootstrap, w.p_onset, w.p_offset, w.margin_onset, w.margin_offset,
                        w.identity_margin_onset, w.identity_margin_offset});
}

pipeline::WindowScore window_from_json(const json& j)
{
    if (!j.is_array() || j.size() != 10) {
        format_error("window score must be a 10-element array");
    }
    pipeline::WindowScore w;
    w.t = j[0].get<double>();
    w.trial = j[1].get<int>();
    w.phase = j[2].get<std::int8_t>();
    w.bootstrap = j[3].get<bool>();
    w.p_onset = j[4].get<double>();
    w.p_offset = j[5].get<double>();
    w.margin_onset = j[6].get<double>();
    w.margin_offset = j[7].get<double>();
    w.identity_margin_onset = j[8].get<double>();
    w.identity_margin_offset = j[9].get<double>();
    return w;
}

void require_kind(const json& j, const std::string& kind)
{
    if (!j.is_object() || !j.contains("kind") || j.at("kind") != kind) {
        format_error("expected a '" + kind + "' document");
    }
}

} // namespace

// ---------------------------------------------------------------- EEGS

std::size_t eeg_header_size(const std::vector<std::string>& channel_names)
{
    std::size_t n = 4 + 2 + 4 + 2;
    for (const auto& name : channel_names) {
        n += 2 + name.size();
    }
    return n;
}

void write_eeg(const fs::path& path, const synth::EegStream& stream)
{
    if (stream.channels <= 0 || stream.channels > 0xFFFF ||
        static_cast<int>(stream.channel_names.size()) != stream.channels) {
        throw Error(ErrorKind::Shape, "write_eeg: channel count and name table disagree");
    }
    if (!(stream.fs > 0.0) || stream.fs != std::floor(stream.fs) || stream.fs > 4294967295.0) {
        throw Error(ErrorKind::Argument, "write_eeg: fs must be a positive whole number of Hz");
    }
    if (stream.samples.size() % static_cast<std::size_t>(stream.channels) != 0) {
        throw Error(ErrorKind::Shape, "write_eeg: sample count is not a whole number of frames");
    }
    std::string out;
    out.reserve(eeg_header_size(stream.channel_names) + stream.samples.size() * 4);
    out.append(kMagic, 4);
    put_le<std::uint16_t>(out, kEegVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stream.fs));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.channels));
    for (const auto& name : stream.channel_names) {
        if (name.size() > 0xFFFF) {
            throw Error(ErrorKind::Argument, "write_eeg: channel name too long");
        }
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.append(name);
    }
    for (float x : stream.samples) {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(x));
    }
    write_file(path, out);
}

synth::EegStream read_eeg(const fs::path& path)
{
    const std::string bytes = read_file(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    const std::string where = "'" + path.string() + "'";
    if (n < 12 || std::memcmp(p, kMagic, 4) != 0) {
        format_error(where + " is not an EEGS file");
    }
    const auto version = get_le<std::uint16_t>(p + 4);
    if (version != kEegVersion) {
        throw Error(ErrorKind::Version,
                    where + " has EEGS version " + std::to_string(version) + ", expected " + std::to_string(kEegVersion));
    }
    synth::EegStream s;
    s.fs = static_cast<double>(get_le<std::uint32_t>(p + 6));
    s.channels = get_le<std::uint16_t>(p + 10);
    if (s.channels == 0 || s.fs <= 0.0) {
        format_error(where + " declares no channels or a zero sampling rate");
    }
    std::size_t pos = 12;
    for (int c = 0; c < s.channels; ++c) {
        if (pos + 2 > n) {
            format_error(where + " has a truncated channel table");
        }
        const auto len = get_le<std::uint16_t>(p + pos);
        pos += 2;
        if (pos + len > n) {
            format_error(where + " has a truncated channel table");
        }
        s.channel_names.emplace_back(bytes.data() + pos, len);
        pos += len;
    }
    const std::size_t frame_bytes = 4U * static_cast<std::size_t>(s.channels);
    if ((n - pos) % frame_bytes != 0) {
        format_error(where + " ends with a partial frame");
    }
    s.samples.resize((n - pos) / 4);
    for (std::size_t i = 0; i < s.samples.size(); ++i, pos += 4) {
        s.samples[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + pos));
    }
    return s;
}

// ---------------------------------------------------------------- base64 and matrices

std::string encode_doubles(std::span<const double> values)
{
    std::string raw;
    raw.reserve(values.size() * 8);
    for (double v : values) {
        put_le<std::uint64_t>(raw, std::bit_cast<std::uint64_t>(v));
    }
    std::string out(4 * ((raw.size() + 2) / 3) + 1, '\0');
    const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                    reinterpret_cast<const unsigned char*>(raw.data()), static_cast<int>(raw.size()));
    out.resize(static_cast<std::size_t>(len));
    return out;
}

std::vector<double> decode_doubles(const std::string& text)
{
    if (text.size() % 4 != 0) {
        format_error("base64 length is not a multiple of 4");
    }
    std::string raw(3 * text.size() / 4, '\0');
    const int len = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(raw.data()),
                                    reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (len < 0) {
        format_error("invalid base64 data");
    }
    // EVP_DecodeBlock keeps the zero bytes that stand for '=' padding.
    std::size_t pad = 0;
    for (auto it = text.rbegin(); it != text.rend() && *it == '=' && pad < 2; ++it) {
        ++pad;
    }
    const std::size_t size = static_cast<std::size_t>(len) - pad;
    if (size % 8 != 0) {
        format_error("base64 payload is not a whole number of float64 values");
    }
    std::vector<double> out(size / 8);
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i));
    }
    return out;
}

json matrix_to_json(const spd::Matrix& m)
{
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            v.push_back(m(i, k));
        }
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", encode_doubles(v)}};
}

spd::Matrix matrix_from_json(const json& j)
{
    return parsing("matrix", [&] {
        const auto rows = j.at("rows").get<Eigen::Index>();
        const auto cols = j.at("cols").get<Eigen::Index>();
        const auto v = decode_doubles(j.at("data").get<std::string>());
        if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != v.size()) {
            format_error("matrix data does not match its shape");
        }
        spd::Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index k = 0; k < cols; ++k) {
                m(i, k) = v[static_cast<std::size_t>(i * cols + k)];
            }
        }
        return m;
    });
}

json spd_to_json(const spd::SpdMatrix& s)
{
    return {{"values", matrix_to_json(s.matrix())},
            {"eigenvectors", matrix_to_json(s.eigenvectors())},
            {"eigenvalues", matrix_to_json(s.eigenvalues())},
            {"floored", s.floored()}};
}

spd::SpdMatrix spd_from_json(const json& j)
{
    return parsing("SPD matrix", [&] {
        const spd::Matrix ev = matrix_from_json(j.at("eigenvalues"));
        if (ev.cols() != 1) {
            format_error("eigenvalues must be a column vector");
        }
        return spd::SpdMatrix::restore(matrix_from_json(j.at("values")), matrix_from_json(j.at("eigenvectors")),
                                       ev.col(0), j.at("floored").get<bool>());
    });
}

// ---------------------------------------------------------------- documents

void check_version(const json& j, const std::string& what)
{
    if (!j.is_object() || !j.contains("version") || !j.at("version").is_number_integer()) {
        format_error(what + " has no version field");
    }
    const int v = j.at("version").get<int>();
    if (v != kFormatVersion) {
        throw Error(ErrorKind::Version, what + " has format version " + std::to_string(v) + ", expected " +
                                            std::to_string(kFormatVersion));
    }
}

json truth_to_json(const synth::GroundTruth& truth, const std::string& config_hash)
{
    json segments = json::array();
    std::size_t i = 0;
    while (i < truth.phase.size()) {
        std::size_t k = i;
        while (k < truth.phase.size() && truth.phase[k] == truth.phase[i]) {
            ++k;
        }
        const auto p = truth.phase[i];
        segments.push_back(json::array(
            {p == synth::kNoPhase ? std::string("none") : synth::to_string(static_cast<synth::Phase>(p)), i, k}));
        i = k;
    }
    json trials = json::array();
    for (const auto& t : truth.trials) {
        trials.push_back({{"trial_id", t.trial_id},
                          {"target_id", t.target_id},
                          {"start_sample", t.start_sample},
                          {"cue_sample", t.cue_sample},
                          {"intended_start", t.intended_start},
                          {"intended_stop", t.intended_stop}});
    }
    json durations = json::object();
    for (int p = 0; p < synth::kPhaseCount; ++p) {
        durations[synth::to_string(static_cast<synth::Phase>(p))] = truth.durations[static_cast<std::size_t>(p)];
    }
    json j = {{"kind", "ground_truth"},
              {"version", kFormatVersion},
              {"config_hash", config_hash},
              {"fs", truth.fs},
              {"frames", truth.phase.size()},
              {"durations", durations},
              {"trials", trials},
              {"phase_segments", segments}};
    j["drift"] = truth.drift.size() > 0 ? matrix_to_json(truth.drift) : json(nullptr);
    return j;
}

TruthFile truth_from_json(const json& j)
{
    require_kind(j, "ground_truth");
    check_version(j, "ground truth");
    return parsing("ground truth", [&] {
        TruthFile f;
        f.version = j.at("version").get<int>();
        f.config_hash = j.at("config_hash").get<std::string>();
        auto& t = f.truth;
        t.fs = j.at("fs").get<double>();
        const auto frames = j.at("frames").get<std::size_t>();
        t.phase.assign(frames, synth::kNoPhase);
        for (const auto& seg : j.at("phase_segments")) {
            const auto name = seg.at(0).get<std::string>();
            const auto a = seg.at(1).get<std::size_t>();
            const auto b = seg.at(2).get<std::size_t>();
            if (a > b || b > frames) {
                format_error("phase segment outside the stream");
            }
            const std::int8_t p = name == "none" ? synth::kNoPhase
                                                 : static_cast<std::int8_t>(synth::phase_from_string(name));
            std::fill(t.phase.begin() + static_cast<std::ptrdiff_t>(a), t.phase.begin() + static_cast<std::ptrdiff_t>(b),
                      p);
        }
        for (int p = 0; p < synth::kPhaseCount; ++p) {
            t.durations[static_cast<std::size_t>(p)] =
                j.at("durations").at(synth::to_string(static_cast<synth::Phase>(p))).get<double>();
        }
        for (const auto& jt : j.at("trials")) {
            synth::TrialTruth tt;
            tt.trial_id = jt.at("trial_id").get<int>();
            tt.target_id = jt.at("target_id").get<int>();
            tt.start_sample = jt.at("start_sample").get<std::int64_t>();
            tt.cue_sample = jt.at("cue_sample").get<std::int64_t>();
            tt.intended_start = jt.at("intended_start").get<double>();
            tt.intended_stop = jt.at("intended_stop").get<double>();
            t.trials.push_back(tt);
        }
        if (!j.at("drift").is_null()) {
            t.drift = matrix_from_json(j.at("drift"));
        }
        return f;
    });
}

json bundle_to_json(const pipeline::ModelBundle& b)
{
    json j = {{"kind", "model_bundle"},
              {"version", b.version},
              {"config_hash", b.config_hash},
              {"montage", montage_to_json(b.montage)},
              {"band_low", b.band_low},
              {"band_high", b.band_high},
              {"window_len", b.window_len},
              {"hop", b.hop},
              {"onset", model_to_json(b.onset)},
              {"offset", model_to_json(b.offset)}};
    j["fixation_reference"] = b.fixation_reference ? reference_to_json(*b.fixation_reference) : json(nullptr);
    return j;
}

pipeline::ModelBundle bundle_from_json(const json& j)
{
    require_kind(j, "model_bundle");
    check_version(j, "model bundle");
    return parsing("model bundle", [&] {
        pipeline::ModelBundle b;
        b.version = j.at("version").get<int>();
        b.config_hash = j.at("config_hash").get<std::string>();
        b.montage = montage_from_json(j.at("montage"));
        b.band_low = j.at("band_low").get<double>();
        b.band_high = j.at("band_high").get<double>();
        b.window_len = j.at("window_len").get<double>();
        b.hop = j.at("hop").get<double>();
        b.onset = model_from_json(j.at("onset"));
        b.offset = model_from_json(j.at("offset"));
        if (!j.at("fixation_reference").is_null()) {
            b.fixation_reference = reference_from_json(j.at("fixation_reference"));
        }
        return b;
    });
}

json session_log_to_json(const pipeline::SessionLog& log)
{
    json runs = json::array();
    for (const auto& r : log.runs) {
        json trials = json::array();
        for (const auto& t : r.trials) {
            trials.push_back(trial_to_json(t));
        }
        json windows = json::array();
        for (const auto& w : r.windows) {
            windows.push_back(window_to_json(w));
        }
        runs.push_back({{"run_id", r.run_id},
                        {"source", r.source},
                        {"bootstrap_windows", r.bootstrap_windows},
                        {"final_reference", reference_to_json(r.final_reference)},
                        {"trials", trials},
                        {"window_fields",
                         {"t", "trial", "phase", "bootstrap", "p_onset", "p_offset", "margin_onset", "margin_offset",
                          "identity_margin_onset", "identity_margin_offset"}},
                        {"windows", windows}});
    }
    return {{"kind", "session_log"},
            {"version", log.version},
            {"config_hash", log.config_hash},
            {"mode", recenter::to_string(log.mode)},
            {"montage", montage_to_json(log.montage)},
            {"theta_onset", log.theta_onset},
            {"theta_offset", log.theta_offset},
            {"runs", runs}};
}

pipeline::SessionLog session_log_from_json(const json& j)
{
    require_kind(j, "session_log");
    check_version(j, "session log");
    return parsing("session log", [&] {
        pipeline::SessionLog log;
        log.version = j.at("version").get<int>();
        log.config_hash = j.at("config_hash").get<std::string>();
        log.mode = recenter::reference_kind_from_string(j.at("mode").get<std::string>());
        log.montage = montage_from_json(j.at("montage"));
        log.theta_onset = j.at("theta_onset").get<double>();
        log.theta_offset = j.at("theta_offset").get<double>();
        for (const auto& jr : j.at("runs")) {
            pipeline::RunLog r;
            r.run_id = jr.at("run_id").get<std::string>();
            r.source = jr.at("source").get<std::string>();
            r.bootstrap_windows = jr.at("bootstrap_windows").get<int>();
            r.final_reference = reference_from_json(jr.at("final_reference"));
            for (const auto& t : jr.at("trials")) {
                r.trials.push_back(trial_from_json(t));
            }
            for (const auto& w : jr.at("windows")) {
                r.windows.push_back(window_from_json(w));
            }
            log.runs.push_back(std::move(r));
        }
        return log;
    });
}

std::string dump(const json& j)
{
    return j.dump(2) + "\n";
}

json read_json(const fs::path& path)
{
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        format_error("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_json(const fs::path& path, const json& j)
{
    write_file(path, dump(j));
}

void write_text(const fs::path& path, const std::string& text)
{
    write_file(path, text);
}

template <typename F>
auto loading(const fs::path& path, F&& f)
{
    try {
        return f(read_json(path));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Io || std::string(e.what()).find(path.string()) != std::string::npos) {
            throw;
        }
        throw Error(e.kind(), "'" + path.string() + "': " + e.what());
    }
}

void save_bundle(const fs::path& path, const pipeline::ModelBundle& b)
{
    write_json(path, bundle_to_json(b));
}

pipeline::ModelBundle load_bundle(const fs::path& path)
{
    return loading(path, [](const json& j) { return bundle_from_json(j); });
}

void save_session_log(const fs::path& path, const pipeline::SessionLog& log)
{
    write_json(path, session_log_to_json(log));
}

pipeline::SessionLog load_session_log(const fs::path& path)
{
    return loading(path, [](const json& j) { return session_log_from_json(j); });
}

void save_truth(const fs::path& path, const synth::GroundTruth& truth, const std::string& config_hash)
{
    write_json(path, truth_to_json(truth, config_hash));
}

TruthFile load_truth(const fs::path& path)
{
    return loading(path, [](const json& j) { return truth_from_json(j); });
}

} // namespace mibci::io
