// Command-line driver: synth | calibrate | replay | analyze | defaults.

#include <mibci/config.hpp>
#include <mibci/io.hpp>

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace mibci;
using io::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::optional<std::string> mode;
    std::vector<std::string> overrides;
};

config::ExperimentConfig resolve(const Globals& g)
{
    config::ExperimentConfig cfg;
    if (!g.config_path.empty()) {
        cfg = config::load(g.config_path);
    }
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::Argument, "--set expects key=value, got '" + kv + "'");
        }
        config::set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) {
        cfg.seed = *g.seed;
    }
    if (g.mode) {
        cfg.mode = *g.mode;
    }
    cfg.validate();
    return cfg;
}

fs::path dir_of(const Globals& g, const std::string& sub)
{
    return fs::path(g.out_dir) / sub;
}

void ensure_dir(const fs::path& p)
{
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) {
        throw Error(ErrorKind::Io, "cannot create directory '" + p.string() + "': " + ec.message());
    }
}

fs::path truth_path(const fs::path& eeg)
{
    fs::path p = eeg;
    p.replace_extension(".truth.json");
    return p;
}

std::string num(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string num(const std::optional<double>& v)
{
    return v ? num(*v) : "";
}

std::string csv_header(const std::string& hash)
{
    return "# config_hash=" + hash + "\n# format_version=" + std::to_string(pipeline::kFormatVersion) + "\n";
}

void print(const json& j)
{
    std::cout << j.dump(2) << "\n";
}

// ---------------------------------------------------------------- synth

struct RunFile {
    std::string path;
    int session = 0;
};

json cmd_synth(const Globals& g)
{
    const auto cfg = resolve(g);
    const std::string hash = config::hash(cfg);
    const fs::path data = dir_of(g, cfg.data_dir);
    ensure_dir(data);
    json files = json::array();
    json summary = json::array();

    auto emit = [&](const std::string& name, const synth::SyntheticSessionSpec& spec, const std::string& role,
                    int session) {
        const auto s = synth::generate_session(spec);
        const fs::path eeg = data / (name + ".eegs");
        io::write_eeg(eeg, s.stream);
        io::save_truth(truth_path(eeg), s.truth, hash);
        files.push_back({{"path", eeg.string()}, {"truth", truth_path(eeg).string()}, {"role", role},
                         {"session", session}, {"trials", spec.n_trials}});
        summary.push_back({{"path", eeg.string()},
                           {"frames", s.stream.frames()},
                           {"channels", s.stream.channels},
                           {"fs", s.stream.fs},
                           {"bytes", io::eeg_header_size(s.stream.channel_names) + s.stream.samples.size() * 4}});
    };

    emit("calibration", cfg.synth_spec(cfg.synth.calibration_trials, config::derive_seed(cfg.seed, 0)), "calibration",
         0);
    for (int r = 0; r < cfg.synth.online_runs; ++r) {
        auto spec = cfg.synth_spec(cfg.synth.online_trials, config::derive_seed(cfg.seed, static_cast<std::uint64_t>(r) + 1));
        const int session = r / cfg.synth.runs_per_session;
        if (session > 0 && cfg.synth.session_drift > 0.0) {
            spec.drift = synth::make_drift(cfg.synth.session_drift,
                                           cfg.synth.drift_seed + static_cast<std::uint64_t>(session), spec.channels);
        }
        char name[32];
        std::snprintf(name, sizeof name, "run_%02d", r + 1);
        emit(name, spec, "online", session);
    }
    const json manifest = {{"kind", "manifest"},
                           {"version", pipeline::kFormatVersion},
                           {"config_hash", hash},
                           {"files", files}};
    io::write_json(data / "manifest.json", manifest);
    return {{"command", "synth"}, {"config_hash", hash}, {"manifest", (data / "manifest.json").string()},
            {"streams", summary}};
}

// ---------------------------------------------------------------- calibrate

json cmd_calibrate(const Globals& g, const std::string& data_arg, const std::string& model_arg)
{
    const auto cfg = resolve(g);
    const std::string hash = config::hash(cfg);
    const fs::path eeg = data_arg.empty() ? dir_of(g, cfg.data_dir) / "calibration.eegs" : fs::path(data_arg);
    const auto stream = io::read_eeg(eeg);
    const auto truth = io::load_truth(truth_path(eeg));
    const auto bundle = pipeline::calibrate(stream, truth.truth, cfg.pipeline, hash);
    const fs::path out = model_arg.empty() ? dir_of(g, cfg.model_dir) / "model.json" : fs::path(model_arg);
    ensure_dir(out.parent_path().empty() ? fs::path(".") : out.parent_path());
    io::save_bundle(out, bundle);
    json decoders = json::object();
    for (auto id : {decoder::DecoderId::Onset, decoder::DecoderId::Offset}) {
        const auto& m = bundle.model(id);
        decoders[decoder::to_string(id)] = {{"threshold", m.threshold},
                                            {"threshold_fallback", m.threshold_fallback},
                                            {"cv_auc", m.cv_auc},
                                            {"n_positive", m.diagnostics.n_positive},
                                            {"n_negative", m.diagnostics.n_negative},
                                            {"mean_iterations", m.diagnostics.mean_iterations()}};
    }
    return {{"command", "calibrate"}, {"config_hash", hash}, {"model", out.string()}, {"decoders", decoders},
            {"fixation_reference", bundle.fixation_reference.has_value()}};
}

// ---------------------------------------------------------------- replay

std::map<int, std::vector<std::string>> manifest_sessions(const fs::path& data)
{
    const auto m = io::read_json(data / "manifest.json");
    io::check_version(m, "manifest");
    std::map<int, std::vector<std::string>> out;
    for (const auto& f : m.at("files")) {
        if (f.at("role") == "online") {
            out[f.at("session").get<int>()].push_back(f.at("path").get<std::string>());
        }
    }
    return out;
}

pipeline::SessionLog replay_files(const pipeline::ModelBundle& bundle, const std::vector<std::string>& files,
                                  const config::ExperimentConfig& cfg, const std::string& hash)
{
    std::vector<synth::EegStream> streams;
    std::vector<synth::GroundTruth> truths;
    streams.reserve(files.size());
    truths.reserve(files.size());
    for (const auto& f : files) {
        streams.push_back(io::read_eeg(f));
        truths.push_back(io::load_truth(truth_path(f)).truth);
    }
    std::vector<pipeline::StreamRun> runs;
    for (std::size_t i = 0; i < files.size(); ++i) {
        runs.push_back({fs::path(files[i]).stem().string(), files[i], &streams[i], &truths[i]});
    }
    return pipeline::replay(bundle, runs, cfg.reference_kind(), cfg.pipeline, hash);
}

json cmd_replay(const Globals& g, const std::string& model_arg, const std::vector<std::string>& files,
                const std::string& log_arg)
{
    const auto cfg = resolve(g);
    const std::string hash = config::hash(cfg);
    const fs::path model = model_arg.empty() ? dir_of(g, cfg.model_dir) / "model.json" : fs::path(model_arg);
    const auto bundle = io::load_bundle(model);
    const fs::path logs = dir_of(g, "logs");
    json written = json::array();
    auto write = [&](const pipeline::SessionLog& log, const fs::path& path) {
        ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
        io::save_session_log(path, log);
        json runs = json::array();
        for (const auto& r : log.runs) {
            runs.push_back({{"run_id", r.run_id},
                            {"auc_onset", pipeline::run_auc(r, decoder::DecoderId::Onset).value_or(-1.0)},
                            {"auc_offset", pipeline::run_auc(r, decoder::DecoderId::Offset).value_or(-1.0)},
                            {"bootstrap_windows", r.bootstrap_windows}});
        }
        written.push_back({{"log", path.string()}, {"runs", runs}});
    };
    if (!files.empty()) {
        const auto log = replay_files(bundle, files, cfg, hash);
        write(log, log_arg.empty() ? logs / (cfg.mode + ".json") : fs::path(log_arg));
    } else {
        if (!log_arg.empty()) {
            throw Error(ErrorKind::Argument, "--log needs explicit run files");
        }
        for (const auto& [session, session_files] : manifest_sessions(dir_of(g, cfg.data_dir))) {
            const auto log = replay_files(bundle, session_files, cfg, hash);
            write(log, logs / (cfg.mode + "_session" + std::to_string(session) + ".json"));
        }
    }
    return {{"command", "replay"}, {"config_hash", hash}, {"mode", cfg.mode}, {"logs", written}};
}

// ---------------------------------------------------------------- analyze

json bias_json(const analysis::BiasReport& r)
{
    return {{"reference_a", r.reference_a},   {"reference_b", r.reference_b},   {"median_pos_a", r.median_pos_a},
            {"median_neg_a", r.median_neg_a}, {"median_pos_b", r.median_pos_b}, {"median_neg_b", r.median_neg_b},
            {"delta_pos", r.delta_pos},       {"delta_neg", r.delta_neg},       {"delta_sep", r.delta_sep}};
}

json wilcoxon_json(const pipeline::PairedTest& t)
{
    json j = {{"label", t.label}, {"decoder", decoder::to_string(t.decoder)}, {"n_pairs", t.differences.size()},
              {"differences", t.differences}};
    if (t.result) {
        j["n_nonzero"] = t.result->n;
        j["w_plus"] = t.result->w_plus;
        j["w_minus"] = t.result->w_minus;
        j["statistic"] = t.result->statistic;
        j["p_value"] = t.result->p_value;
    } else {
        j["error"] = t.error;
    }
    return j;
}

/// Trial-averaged ERD/ERS map of one channel over the given EEG files.
std::string spectrogram_csv(const std::vector<std::string>& sources, const config::ExperimentConfig& cfg,
                            const std::string& hash)
{
    std::vector<analysis::PowerGrid> grids;
    for (const auto& src : sources) {
        const auto stream = io::read_eeg(src);
        const auto truth = io::load_truth(truth_path(src)).truth;
        if (cfg.analysis.channel >= stream.channels) {
            throw Error(ErrorKind::Argument, "analysis.channel is outside the montage of '" + src + "'");
        }
        auto sc = cfg.analysis.spectrogram;
        sc.fs = stream.fs;
        for (std::size_t k = 0; k < truth.trials.size(); ++k) {
            const auto begin = truth.trials[k].start_sample;
            const auto end = k + 1 < truth.trials.size() ? truth.trials[k + 1].start_sample : stream.frames();
            std::vector<double> x;
            x.reserve(static_cast<std::size_t>(end - begin));
            for (auto n = begin; n < end; ++n) {
                x.push_back(stream.frame(n)[cfg.analysis.channel]);
            }
            grids.push_back(analysis::welch_power(x, sc));
        }
    }
    std::string out = csv_header(hash);
    out += "# channel=" + std::to_string(cfg.analysis.channel) + " baseline=[" + num(cfg.analysis.baseline_begin) +
           "," + num(cfg.analysis.baseline_end) + ") value=log10(power/baseline_power)\n";
    out += "freq_hz,time_s,value,defined\n";
    if (grids.empty()) {
        return out;
    }
    // Trials of unequal length are cut to the shortest grid.
    std::size_t t_min = grids.front().times.size();
    for (const auto& gr : grids) {
        t_min = std::min(t_min, gr.times.size());
    }
    for (auto& gr : grids) {
        gr.times.resize(t_min);
        gr.power.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(t_min));
    }
    const auto map = analysis::average_spectrogram(grids, cfg.analysis.baseline_begin, cfg.analysis.baseline_end);
    for (std::size_t f = 0; f < map.freqs.size(); ++f) {
        for (std::size_t t = 0; t < map.times.size(); ++t) {
            out += num(map.freqs[f]) + "," + num(map.times[t]) + "," +
                   num(map.values(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t))) + "," +
                   (map.defined[f][t] ? "1" : "0") + "\n";
        }
    }
    return out;
}

json cmd_analyze(const Globals& g, const std::vector<std::string>& log_files, const std::string& out_arg)
{
    const auto cfg = resolve(g);
    const std::string hash = config::hash(cfg);
    if (log_files.empty()) {
        throw Error(ErrorKind::Argument, "analyze needs at least one session log");
    }
    std::vector<pipeline::SessionLog> logs;
    for (const auto& f : log_files) {
        logs.push_back(io::load_session_log(f));
    }
    const fs::path out = out_arg.empty() ? dir_of(g, cfg.report_dir) : fs::path(out_arg);
    ensure_dir(out);
    json inputs = json::array();
    for (std::size_t i = 0; i < logs.size(); ++i) {
        inputs.push_back({{"log", log_files[i]},
                          {"mode", recenter::to_string(logs[i].mode)},
                          {"config_hash", logs[i].config_hash},
                          {"version", logs[i].version}});
    }
    const json header = {{"config_hash", hash}, {"version", pipeline::kFormatVersion}, {"inputs", inputs}};

    std::string metrics = csv_header(hash);
    metrics += "log,mode,run_id,n_trials,n_attempted,onset_hit,onset_miss,onset_timeout,offset_hit,offset_miss,"
               "offset_timeout,onset_latency_n,onset_latency_mean,onset_latency_sd,offset_latency_n,"
               "offset_latency_mean,offset_latency_sd,auc_onset,auc_offset\n";
    std::string aucs = csv_header(hash);
    aucs += "log,mode,run_id,auc_onset,auc_offset,auc_combined\n";
    json bias = header;
    bias["kind"] = "bias_report";
    bias["reports"] = json::array();
    json ci = json::array();
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const auto& log = logs[i];
        const std::string mode = recenter::to_string(log.mode);
        std::vector<double> combined;
        for (const auto& run : log.runs) {
            const auto m = pipeline::run_metrics(run);
            metrics += log_files[i] + "," + mode + "," + run.run_id + "," + std::to_string(m.n_trials) + "," +
                       std::to_string(m.n_attempted) + "," + num(m.onset.hit) + "," + num(m.onset.miss) + "," +
                       num(m.onset.timeout) + "," + num(m.offset.hit) + "," + num(m.offset.miss) + "," +
                       num(m.offset.timeout) + "," + std::to_string(m.onset_latency.n) + "," +
                       num(m.onset_latency.mean) + "," + num(m.onset_latency.sd) + "," +
                       std::to_string(m.offset_latency.n) + "," + num(m.offset_latency.mean) + "," +
                       num(m.offset_latency.sd) + "," + num(m.auc_onset) + "," + num(m.auc_offset) + "\n";
            const auto c = pipeline::combined_auc(run);
            aucs += log_files[i] + "," + mode + "," + run.run_id + "," + num(m.auc_onset) + "," + num(m.auc_offset) +
                    "," + num(c) + "\n";
            if (c) {
                combined.push_back(*c);
            }
        }
        json per_decoder = json::object();
        for (auto id : {decoder::DecoderId::Onset, decoder::DecoderId::Offset}) {
            try {
                per_decoder[decoder::to_string(id)] = bias_json(pipeline::bias_report(log, id));
            } catch (const Error& e) {
                per_decoder[decoder::to_string(id)] = {{"error", e.what()}};
            }
        }
        bias["reports"].push_back({{"log", log_files[i]}, {"mode", mode}, {"decoders", per_decoder}});
        if (!combined.empty()) {
            const auto b = analysis::bootstrap_mean_ci(combined, cfg.analysis.bootstrap_resamples, cfg.seed);
            ci.push_back({{"log", log_files[i]}, {"mean_auc", b.mean}, {"ci95_low", b.low}, {"ci95_high", b.high}});
        }
    }

    json wilcoxon = header;
    wilcoxon["kind"] = "wilcoxon";
    wilcoxon["bootstrap_auc"] = ci;
    wilcoxon["paired_tests"] = json::array();
    for (std::size_t a = 0; a < logs.size(); ++a) {
        for (std::size_t b = a + 1; b < logs.size(); ++b) {
            for (auto id : {decoder::DecoderId::Onset, decoder::DecoderId::Offset}) {
                auto t = pipeline::paired_auc_test(logs[a], logs[b], id);
                t.label = log_files[b] + " - " + log_files[a];
                wilcoxon["paired_tests"].push_back(wilcoxon_json(t));
            }
        }
    }

    std::vector<std::string> sources;
    std::set<std::string> seen;
    for (const auto& run : logs.front().runs) {
        if (!run.source.empty() && seen.insert(run.source).second) {
            sources.push_back(run.source);
        }
    }

    io::write_text(out / "run_metrics.csv", metrics);
    io::write_text(out / "auc_per_run.csv", aucs);
    io::write_json(out / "bias_report.json", bias);
    io::write_json(out / "wilcoxon.json", wilcoxon);
    io::write_text(out / "spectrogram.csv", spectrogram_csv(sources, cfg, hash));
    json files = json::array();
    for (const char* f : {"run_metrics.csv", "auc_per_run.csv", "bias_report.json", "wilcoxon.json", "spectrogram.csv"}) {
        files.push_back((out / f).string());
    }
    return {{"command", "analyze"}, {"config_hash", hash}, {"reports", files}};
}

int fail(const std::string& kind, const std::string& message, int code)
{
    std::cerr << json({{"error", kind}, {"message", message}}).dump() << "\n";
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dual-state motor-imagery decoding on the SPD manifold"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "Key-value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--out-dir", g.out_dir, "Base directory for outputs");
    app.add_option("--mode", g.mode, "Recentering mode: identity, task or fixation");
    app.add_option("--set", g.overrides, "Config override key=value (repeatable)");

    auto* synth_cmd = app.add_subcommand("synth", "Generate calibration and online EEG with ground truth");
    std::string cal_data;
    std::string cal_model;
    auto* cal_cmd = app.add_subcommand("calibrate", "Fit decoders and thresholds on an offline session");
    cal_cmd->add_option("--data", cal_data, "Calibration EEGS file");
    cal_cmd->add_option("--model", cal_model, "Output model bundle");
    std::string rep_model;
    std::string rep_log;
    std::vector<std::string> rep_files;
    auto* rep_cmd = app.add_subcommand("replay", "Pseudo-online replay of one session's runs");
    rep_cmd->add_option("--model", rep_model, "Model bundle");
    rep_cmd->add_option("--log", rep_log, "Output session log");
    rep_cmd->add_option("runs", rep_files, "Run EEGS files in order (default: every session in the manifest)");
    std::vector<std::string> ana_logs;
    std::string ana_out;
    auto* ana_cmd = app.add_subcommand("analyze", "Metrics, bias, AUC, spectrogram and Wilcoxon reports");
    ana_cmd->add_option("logs", ana_logs, "Session logs")->required();
    ana_cmd->add_option("--output", ana_out, "Report directory");
    auto* def_cmd = app.add_subcommand("defaults", "Print the resolved configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 64);
    }

    try {
        if (*synth_cmd) {
            print(cmd_synth(g));
        } else if (*cal_cmd) {
            print(cmd_calibrate(g, cal_data, cal_model));
        } else if (*rep_cmd) {
            print(cmd_replay(g, rep_model, rep_files, rep_log));
        } else if (*ana_cmd) {
            print(cmd_analyze(g, ana_logs, ana_out));
        } else if (*def_cmd) {
            const auto cfg = resolve(g);
            std::cout << "# config_hash = " << config::hash(cfg) << "\n" << config::to_text(cfg);
        }
    } catch (const Error& e) {
        return fail(std::string(to_string(e.kind())), e.what(), 2);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 3);
    }
    return 0;
}
