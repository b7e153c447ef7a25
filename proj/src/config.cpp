#include <mibci/config.hpp>

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <variant>

namespace mibci::config {

SynthParams::SynthParams()
{
    const auto d = synth::default_spec(channels);
    fs = d.fs;
    calibration_trials = d.n_trials;
    durations = d.durations;
    noise_floor = d.noise_floor;
    movement_broadband = d.movement_broadband;
    subject_seed = d.subject_seed;
    auto take = [](const synth::Source& s) { return SourceParams{s.freq, s.bandwidth, s.power, s.gains}; };
    mu = take(d.sources.at(0));
    beta = take(d.sources.at(1));
}

namespace {

using Ref = std::variant<double*, int*, std::uint64_t*, std::string*>;
using Table = std::map<std::string, std::function<Ref(ExperimentConfig&)>>;

void add_source(Table& t, const std::string& prefix, SourceParams SynthParams::*member)
{
    t[prefix + ".freq"] = [member](ExperimentConfig& c) { return Ref(&(c.synth.*member).freq); };
    t[prefix + ".bandwidth"] = [member](ExperimentConfig& c) { return Ref(&(c.synth.*member).bandwidth); };
    t[prefix + ".power"] = [member](ExperimentConfig& c) { return Ref(&(c.synth.*member).power); };
    for (int p = 0; p < synth::kPhaseCount; ++p) {
        t[prefix + ".gain." + synth::to_string(static_cast<synth::Phase>(p))] = [member, p](ExperimentConfig& c) {
            return Ref(&(c.synth.*member).gains[static_cast<std::size_t>(p)]);
        };
    }
}

const Table& table()
{
    static const Table t = [] {
        Table t;
        auto add = [&t](const std::string& key, auto f) { t[key] = [f](ExperimentConfig& c) { return Ref(f(c)); }; };
        add("mode", [](ExperimentConfig& c) { return &c.mode; });
        add("seed", [](ExperimentConfig& c) { return &c.seed; });
        add("paths.data", [](ExperimentConfig& c) { return &c.data_dir; });
        add("paths.models", [](ExperimentConfig& c) { return &c.model_dir; });
        add("paths.reports", [](ExperimentConfig& c) { return &c.report_dir; });

        add("stream.band_low", [](ExperimentConfig& c) { return &c.pipeline.stream.band_low; });
        add("stream.band_high", [](ExperimentConfig& c) { return &c.pipeline.stream.band_high; });
        add("stream.window_len", [](ExperimentConfig& c) { return &c.pipeline.stream.window_len; });
        add("stream.hop", [](ExperimentConfig& c) { return &c.pipeline.stream.hop; });

        add("frechet.tol", [](ExperimentConfig& c) { return &c.pipeline.frechet.tol; });
        add("frechet.max_iter", [](ExperimentConfig& c) { return &c.pipeline.frechet.max_iter; });
        add("frechet.step", [](ExperimentConfig& c) { return &c.pipeline.frechet.step; });

        add("fixation.trim_frac", [](ExperimentConfig& c) { return &c.pipeline.fixation.trim_frac; });
        add("fixation.alpha_id", [](ExperimentConfig& c) { return &c.pipeline.fixation.alpha_id; });
        add("fixation.lambda_eig", [](ExperimentConfig& c) { return &c.pipeline.fixation.lambda_eig; });
        add("fixation.beta_run", [](ExperimentConfig& c) { return &c.pipeline.fixation.beta_run; });
        add("fixation.n_min", [](ExperimentConfig& c) { return &c.pipeline.fixation.n_min; });

        add("session.hold_time", [](ExperimentConfig& c) { return &c.pipeline.session.hold_time; });
        add("session.countdown", [](ExperimentConfig& c) { return &c.pipeline.session.countdown; });
        add("session.onset_window", [](ExperimentConfig& c) { return &c.pipeline.session.onset_window; });
        add("session.offset_window", [](ExperimentConfig& c) { return &c.pipeline.session.offset_window; });
        add("session.refractory", [](ExperimentConfig& c) { return &c.pipeline.session.refractory; });
        add("session.nominal_duration", [](ExperimentConfig& c) { return &c.pipeline.session.nominal_duration; });
        add("session.overtravel_duration", [](ExperimentConfig& c) { return &c.pipeline.session.overtravel_duration; });
        add("session.overtravel_cap", [](ExperimentConfig& c) { return &c.pipeline.session.overtravel_cap; });
        add("session.stop_rest", [](ExperimentConfig& c) { return &c.pipeline.session.stop_rest; });

        add("decoder.onset.ema_beta", [](ExperimentConfig& c) { return &c.pipeline.session.ema_beta_onset; });
        add("decoder.offset.ema_beta", [](ExperimentConfig& c) { return &c.pipeline.session.ema_beta_offset; });
        add("decoder.onset.temperature", [](ExperimentConfig& c) { return &c.pipeline.temperature_onset; });
        add("decoder.offset.temperature", [](ExperimentConfig& c) { return &c.pipeline.temperature_offset; });
        add("decoder.latency_cap", [](ExperimentConfig& c) { return &c.pipeline.latency_cap; });
        add("decoder.train_stride", [](ExperimentConfig& c) { return &c.pipeline.train_stride; });
        add("decoder.cv_folds", [](ExperimentConfig& c) { return &c.pipeline.cv_folds; });
        add("recenter.task_window", [](ExperimentConfig& c) { return &c.pipeline.task_window; });

        add("synth.fs", [](ExperimentConfig& c) { return &c.synth.fs; });
        add("synth.channels", [](ExperimentConfig& c) { return &c.synth.channels; });
        add("synth.calibration_trials", [](ExperimentConfig& c) { return &c.synth.calibration_trials; });
        add("synth.noise_floor", [](ExperimentConfig& c) { return &c.synth.noise_floor; });
        add("synth.movement_broadband", [](ExperimentConfig& c) { return &c.synth.movement_broadband; });
        add("synth.subject_seed", [](ExperimentConfig& c) { return &c.synth.subject_seed; });
        add("synth.online_runs", [](ExperimentConfig& c) { return &c.synth.online_runs; });
        add("synth.online_trials", [](ExperimentConfig& c) { return &c.synth.online_trials; });
        add("synth.runs_per_session", [](ExperimentConfig& c) { return &c.synth.runs_per_session; });
        add("synth.session_drift", [](ExperimentConfig& c) { return &c.synth.session_drift; });
        add("synth.drift_seed", [](ExperimentConfig& c) { return &c.synth.drift_seed; });
        for (int p = 0; p < synth::kPhaseCount; ++p) {
            t["synth.duration." + synth::to_string(static_cast<synth::Phase>(p))] = [p](ExperimentConfig& c) {
                return Ref(&c.synth.durations[static_cast<std::size_t>(p)]);
            };
        }
        add_source(t, "synth.mu", &SynthParams::mu);
        add_source(t, "synth.beta", &SynthParams::beta);

        add("analysis.spectrogram.window", [](ExperimentConfig& c) { return &c.analysis.spectrogram.window; });
        add("analysis.spectrogram.hop", [](ExperimentConfig& c) { return &c.analysis.spectrogram.hop; });
        add("analysis.spectrogram.sub_segments",
            [](ExperimentConfig& c) { return &c.analysis.spectrogram.sub_segments; });
        add("analysis.spectrogram.f_min", [](ExperimentConfig& c) { return &c.analysis.spectrogram.f_min; });
        add("analysis.spectrogram.f_max", [](ExperimentConfig& c) { return &c.analysis.spectrogram.f_max; });
        add("analysis.spectrogram.f_step", [](ExperimentConfig& c) { return &c.analysis.spectrogram.f_step; });
        add("analysis.baseline_begin", [](ExperimentConfig& c) { return &c.analysis.baseline_begin; });
        add("analysis.baseline_end", [](ExperimentConfig& c) { return &c.analysis.baseline_end; });
        add("analysis.channel", [](ExperimentConfig& c) { return &c.analysis.channel; });
        add("analysis.bootstrap_resamples", [](ExperimentConfig& c) { return &c.analysis.bootstrap_resamples; });
        return t;
    }();
    return t;
}

std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) {
        return "";
    }
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value)
{
    T out{};
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw Error(ErrorKind::Argument, "config: '" + key + "' expects a number, got '" + value + "'");
    }
    return out;
}

template <typename T>
std::string format_number(T v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

Ref lookup(ExperimentConfig& cfg, const std::string& key)
{
    const auto& t = table();
    const auto it = t.find(key);
    if (it == t.end()) {
        throw Error(ErrorKind::Argument, "config: unknown key '" + key + "'");
    }
    return it->second(cfg);
}

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

} // namespace

void ExperimentConfig::validate() const
{
    reference_kind();
    pipeline.validate();
    synth_spec(1, 1).validate();
    auto sc = analysis.spectrogram;
    sc.fs = synth.fs;
    sc.validate();
    // Zero trial counts are left to the generator, which reports an empty session.
    if (synth.online_runs < 0 || synth.runs_per_session < 1) {
        throw Error(ErrorKind::Argument, "config: synth.online_runs must be >= 0 and synth.runs_per_session >= 1");
    }
    if (!(synth.session_drift >= 0.0)) {
        throw Error(ErrorKind::Argument, "config: synth.session_drift must be >= 0");
    }
    if (!(analysis.baseline_end > analysis.baseline_begin) || analysis.baseline_begin < 0.0) {
        throw Error(ErrorKind::Argument, "config: analysis baseline must be a non-empty interval from trial start");
    }
    if (analysis.channel < 0 || analysis.channel >= synth.channels) {
        throw Error(ErrorKind::Argument, "config: analysis.channel is outside the montage");
    }
    if (analysis.bootstrap_resamples < 1) {
        throw Error(ErrorKind::Argument, "config: analysis.bootstrap_resamples must be positive");
    }
}

recenter::ReferenceKind ExperimentConfig::reference_kind() const
{
    try {
        return recenter::reference_kind_from_string(mode);
    } catch (const Error&) {
        throw Error(ErrorKind::Argument, "config: mode must be identity, task or fixation, got '" + mode + "'");
    }
}

synth::SyntheticSessionSpec ExperimentConfig::synth_spec(int n_trials, std::uint64_t session_seed) const
{
    auto spec = synth::default_spec(synth.channels);
    spec.fs = synth.fs;
    spec.n_trials = n_trials;
    spec.durations = synth.durations;
    spec.noise_floor = synth.noise_floor;
    spec.movement_broadband = synth.movement_broadband;
    spec.subject_seed = synth.subject_seed;
    spec.seed = session_seed;
    auto apply = [](synth::Source& s, const SourceParams& p) {
        s.freq = p.freq;
        s.bandwidth = p.bandwidth;
        s.power = p.power;
        s.gains = p.gains;
    };
    apply(spec.sources.at(0), synth.mu);
    apply(spec.sources.at(1), synth.beta);
    return spec;
}

std::vector<std::string> keys()
{
    std::vector<std::string> out;
    for (const auto& [k, _] : table()) {
        out.push_back(k);
    }
    return out;
}

std::string get(const ExperimentConfig& cfg, const std::string& key)
{
    auto& c = const_cast<ExperimentConfig&>(cfg);
    return std::visit(
        [](auto* p) -> std::string {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::string>) {
                return *p;
            } else {
                return format_number(*p);
            }
        },
        lookup(c, key));
}

void set(ExperimentConfig& cfg, const std::string& key, const std::string& value)
{
    std::visit(
        [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::string>) {
                *p = value;
            } else {
                *p = parse_number<T>(key, value);
            }
        },
        lookup(cfg, key));
}

std::string to_text(const ExperimentConfig& cfg)
{
    std::string out;
    for (const auto& k : keys()) {
        out += k + " = " + get(cfg, k) + "\n";
    }
    return out;
}

ExperimentConfig parse(const std::string& text, ExperimentConfig base)
{
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string s = trim(line);
        if (s.empty() || s.front() == '#') {
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::Argument, "config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        set(base, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return base;
}

ExperimentConfig load(const std::filesystem::path& path, ExperimentConfig base)
{
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open config '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse(ss.str(), std::move(base));
    } catch (const Error& e) {
        throw Error(e.kind(), "'" + path.string() + "': " + e.what());
    }
}

std::string hash(const ExperimentConfig& cfg)
{
    return sha256_hex(to_text(cfg));
}

std::string sha256_hex(std::string_view bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorKind::Io, "config: SHA-256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index)
{
    return splitmix64(splitmix64(master) ^ index);
}

} // namespace mibci::config
