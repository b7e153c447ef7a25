#include <mibci/pipeline.hpp>

#include <algorithm>
#include <cmath>

namespace mibci::pipeline {

using decoder::DecoderId;
using recenter::ReferenceKind;

void PipelineConfig::validate() const
{
    frechet.validate();
    fixation.validate();
    session.validate();
    if (task_window < 0) {
        throw Error(ErrorKind::Argument, "pipeline: task_window must be >= 0");
    }
    if (train_stride < 1) {
        throw Error(ErrorKind::Argument, "pipeline: train_stride must be >= 1");
    }
    if (cv_folds < 2) {
        throw Error(ErrorKind::Argument, "pipeline: cv_folds must be >= 2");
    }
    if (!(latency_cap > 0.0)) {
        throw Error(ErrorKind::Argument, "pipeline: latency_cap must be positive");
    }
    if (!(temperature_onset >= 0.0) || !(temperature_offset >= 0.0)) {
        throw Error(ErrorKind::Argument, "pipeline: temperatures must be >= 0 (0 selects the default)");
    }
}

ClassMap class_map(DecoderId id)
{
    if (id == DecoderId::Onset) {
        return {synth::Phase::StartMI, synth::Phase::Rest};
    }
    return {synth::Phase::StopMI, synth::Phase::Maintain};
}

namespace {

int trial_of(const synth::GroundTruth& truth, std::int64_t sample)
{
    const auto it = std::upper_bound(truth.trials.begin(), truth.trials.end(), sample,
                                     [](std::int64_t s, const synth::TrialTruth& t) { return s < t.start_sample; });
    return it == truth.trials.begin() ? -1 : static_cast<int>(it - truth.trials.begin()) - 1;
}

bool is_class(const LabeledWindow& w, synth::Phase p)
{
    return w.phase == static_cast<std::int8_t>(p);
}

double event_time(const synth::TrialTruth& t, DecoderId id)
{
    return id == DecoderId::Onset ? t.intended_start : t.intended_stop;
}

/// Distances of raw samples to the raw class means: the training geometry.
class RawScorer {
public:
    explicit RawScorer(const decoder::ClassPrototypes& p) : pos_(p.raw_positive), neg_(p.raw_negative) {}

    decoder::Posterior operator()(const SpdMatrix& s, double temperature) const
    {
        decoder::Posterior r;
        r.d_pos = pos_(s);
        r.d_neg = neg_(s);
        r.p_pos = decoder::softmax_positive(r.d_pos, r.d_neg, temperature);
        return r;
    }

private:
    spd::DistanceFrom pos_;
    spd::DistanceFrom neg_;
};

/// Distances to the whitened class means of samples whitened by W, scored
/// as W S W without forming the whitened sample.
class WhitenedScorer {
public:
    explicit WhitenedScorer(const decoder::ClassPrototypes& p) : pos_(p.positive), neg_(p.negative) {}

    WhitenedScorer bound(const spd::Matrix& w) const { return WhitenedScorer(pos_.after(w), neg_.after(w)); }

    decoder::Posterior operator()(const SpdMatrix& s, double temperature) const
    {
        decoder::Posterior r;
        r.d_pos = pos_(s);
        r.d_neg = neg_(s);
        r.p_pos = decoder::softmax_positive(r.d_pos, r.d_neg, temperature);
        return r;
    }

private:
    WhitenedScorer(spd::DistanceFrom pos, spd::DistanceFrom neg) : pos_(std::move(pos)), neg_(std::move(neg)) {}

    spd::DistanceFrom pos_;
    spd::DistanceFrom neg_;
};

double resolve_temperature(double configured, const decoder::ClassPrototypes& p)
{
    return configured > 0.0 ? configured : decoder::default_temperature(p);
}

std::vector<decoder::LabeledCov> training_set(std::span<const LabeledWindow> windows, const ClassMap& cm,
                                              const std::vector<char>& use_trial, int stride)
{
    std::vector<decoder::LabeledCov> out;
    int seen_pos = 0;
    int seen_neg = 0;
    for (const auto& w : windows) {
        if (w.trial < 0 || !use_trial[static_cast<std::size_t>(w.trial)]) {
            continue;
        }
        if (is_class(w, cm.positive)) {
            if (seen_pos++ % stride == 0) {
                out.push_back({w.cov, true});
            }
        } else if (is_class(w, cm.negative)) {
            if (seen_neg++ % stride == 0) {
                out.push_back({w.cov, false});
            }
        }
    }
    return out;
}

std::pair<int, int> class_counts(std::span<const decoder::LabeledCov> set)
{
    int pos = 0;
    for (const auto& s : set) {
        pos += s.positive ? 1 : 0;
    }
    return {pos, static_cast<int>(set.size()) - pos};
}

DecoderModel calibrate_decoder(std::span<const LabeledWindow> windows, const synth::GroundTruth& truth,
                               const PipelineConfig& cfg, DecoderId id)
{
    const ClassMap cm = class_map(id);
    const auto n_trials = truth.trials.size();
    const std::vector<char> all_trials(n_trials, 1);

    int total_pos = 0;
    int total_neg = 0;
    for (const auto& w : windows) {
        total_pos += w.trial >= 0 && is_class(w, cm.positive) ? 1 : 0;
        total_neg += w.trial >= 0 && is_class(w, cm.negative) ? 1 : 0;
    }
    if (total_pos < 2 || total_neg < 2) {
        throw Error(ErrorKind::ClassStarvation,
                    "calibrate: " + decoder::to_string(id) + " decoder needs at least two windows per class (got " +
                        std::to_string(total_pos) + " " + synth::to_string(cm.positive) + ", " +
                        std::to_string(total_neg) + " " + synth::to_string(cm.negative) + ")");
    }
    const int stride = std::max(1, std::min(cfg.train_stride, std::min(total_pos, total_neg) / 2));
    const double beta = id == DecoderId::Onset ? cfg.session.ema_beta_onset : cfg.session.ema_beta_offset;
    const double configured_temp = id == DecoderId::Onset ? cfg.temperature_onset : cfg.temperature_offset;
    const double window = id == DecoderId::Onset ? cfg.session.onset_window : cfg.session.offset_window;

    // Cross-validation by trial.
    const int folds = std::min<int>(cfg.cv_folds, static_cast<int>(n_trials));
    std::vector<decoder::LabeledTrace> traces;
    std::vector<analysis::Scored> scored;
    for (int f = 0; f < folds && folds >= 2; ++f) {
        std::vector<char> train(n_trials, 0);
        std::vector<int> held;
        for (std::size_t k = 0; k < n_trials; ++k) {
            if (static_cast<int>(k) % folds == f) {
                held.push_back(static_cast<int>(k));
            } else {
                train[k] = 1;
            }
        }
        const auto set = training_set(windows, cm, train, stride);
        const auto [np, nn] = class_counts(set);
        if (np < 2 || nn < 2) {
            continue;
        }
        const auto protos = decoder::fit_prototypes(set, id, cfg.frechet);
        const double temp = resolve_temperature(configured_temp, protos);
        const RawScorer score(protos);
        for (const auto& w : windows) {
            if (w.trial < 0 || train[static_cast<std::size_t>(w.trial)]) {
                continue;
            }
            const bool pos = is_class(w, cm.positive);
            if (pos || is_class(w, cm.negative)) {
                const auto p = score(w.cov, temp);
                scored.push_back({decoder::margin(p.d_neg, p.d_pos), pos});
            }
        }
        auto fold_traces = offline_traces(windows, truth, protos, id, temp, beta, window, held);
        traces.insert(traces.end(), fold_traces.begin(), fold_traces.end());
    }

    DecoderModel m;
    const auto set = training_set(windows, cm, all_trials, stride);
    m.prototypes = decoder::fit_prototypes(set, id, cfg.frechet, &m.diagnostics);
    m.temperature = resolve_temperature(configured_temp, m.prototypes);
    m.ema_beta = beta;
    bool has_pos = false;
    bool has_neg = false;
    for (const auto& s : scored) {
        (s.positive ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
        throw Error(ErrorKind::ClassStarvation,
                    "calibrate: cross-validation of the " + decoder::to_string(id) + " decoder left a class empty");
    }
    m.cv_auc = analysis::run_auc(scored);
    try {
        m.roc = decoder::select_threshold(traces, cfg.latency_cap);
    } catch (const decoder::ConstraintInfeasible& e) {
        m.roc = e.fallback();
        m.threshold_fallback = true;
    }
    m.threshold = m.roc.theta;
    return m;
}

} // namespace

std::vector<LabeledWindow> extract_windows(const synth::EegStream& stream, const synth::GroundTruth& truth,
                                           const preprocess::StreamConfig& cfg)
{
    if (static_cast<std::int64_t>(truth.phase.size()) != stream.frames()) {
        throw Error(ErrorKind::Shape, "extract_windows: ground truth covers " + std::to_string(truth.phase.size()) +
                                          " frames, stream has " + std::to_string(stream.frames()));
    }
    preprocess::StreamConfig sc = cfg;
    sc.fs = stream.fs;
    sc.channels = stream.channels;
    preprocess::CovarianceStream cs(sc);
    std::vector<LabeledWindow> out;
    std::vector<double> frame(static_cast<std::size_t>(stream.channels));
    for (std::int64_t n = 0; n < stream.frames(); ++n) {
        const float* src = stream.frame(n);
        std::copy(src, src + stream.channels, frame.begin());
        auto wc = cs.push(std::span<const double>(frame));
        if (!wc) {
            continue;
        }
        LabeledWindow w;
        w.start = wc->start;
        w.end = wc->end;
        w.t = static_cast<double>(wc->end) / stream.fs;
        w.trial = trial_of(truth, wc->end - 1);
        const auto first = truth.phase[static_cast<std::size_t>(wc->start)];
        const auto last = truth.phase[static_cast<std::size_t>(wc->end - 1)];
        if (first == last && w.trial >= 0 && trial_of(truth, wc->start) == w.trial) {
            w.phase = first;
        }
        w.cov = std::move(wc->cov);
        out.push_back(std::move(w));
    }
    return out;
}

Montage montage_of(const synth::EegStream& stream)
{
    return Montage{stream.fs, stream.channels, stream.channel_names};
}

std::vector<decoder::LabeledTrace> offline_traces(std::span<const LabeledWindow> windows,
                                                  const synth::GroundTruth& truth, const decoder::ClassPrototypes& protos,
                                                  DecoderId id, double temperature, double ema_beta,
                                                  double decision_window, const std::vector<int>& trials)
{
    const ClassMap cm = class_map(id);
    const RawScorer score(protos);
    std::vector<decoder::LabeledTrace> out;
    for (int k : trials) {
        const auto& tt = truth.trials.at(static_cast<std::size_t>(k));
        const double te = event_time(tt, id);
        decoder::LabeledTrace pos{{}, {}, true};
        decoder::LabeledTrace neg{{}, {}, false};
        double p_pos = 0.5;
        double p_neg = 0.5;
        double t_neg0 = 0.0;
        for (const auto& w : windows) {
            if (w.t > te + 1e-9 && w.t <= te + decision_window + 1e-9) {
                p_pos = decoder::ema_update(p_pos, score(w.cov, temperature).p_pos, ema_beta);
                pos.times.push_back(w.t - te);
                pos.p_hat.push_back(p_pos);
            }
            if (w.trial == k && is_class(w, cm.negative)) {
                if (neg.times.empty()) {
                    t_neg0 = w.t;
                }
                p_neg = decoder::ema_update(p_neg, score(w.cov, temperature).p_pos, ema_beta);
                neg.times.push_back(w.t - t_neg0);
                neg.p_hat.push_back(p_neg);
            }
        }
        if (!pos.times.empty()) {
            out.push_back(std::move(pos));
        }
        if (!neg.times.empty()) {
            out.push_back(std::move(neg));
        }
    }
    return out;
}

ModelBundle calibrate_windows(std::span<const LabeledWindow> windows, const synth::GroundTruth& truth,
                              const Montage& montage, const PipelineConfig& cfg, const std::string& config_hash)
{
    cfg.validate();
    ModelBundle b;
    b.config_hash = config_hash;
    b.montage = montage;
    b.band_low = cfg.stream.band_low;
    b.band_high = cfg.stream.band_high;
    b.window_len = cfg.stream.window_len;
    b.hop = cfg.stream.hop;
    b.onset = calibrate_decoder(windows, truth, cfg, DecoderId::Onset);
    b.offset = calibrate_decoder(windows, truth, cfg, DecoderId::Offset);
    std::vector<SpdMatrix> fixation;
    for (const auto& w : windows) {
        if (w.trial >= 0 && is_class(w, synth::Phase::Fixation)) {
            fixation.push_back(w.cov);
        }
    }
    if (static_cast<int>(fixation.size()) >= cfg.fixation.n_min) {
        b.fixation_reference = recenter::fit_fixation_reference(fixation, cfg.fixation, std::nullopt);
    }
    return b;
}

ModelBundle calibrate(const synth::EegStream& stream, const synth::GroundTruth& truth, const PipelineConfig& cfg,
                      const std::string& config_hash)
{
    const auto windows = extract_windows(stream, truth, cfg.stream);
    return calibrate_windows(windows, truth, montage_of(stream), cfg, config_hash);
}

// ---------------------------------------------------------------- replay

namespace {

struct Scored2 {
    decoder::Posterior onset;
    decoder::Posterior offset;
};

decoder::PosteriorFrame frame_of(double t, const decoder::Posterior& p)
{
    decoder::PosteriorFrame f;
    f.t = t;
    f.d_pos = p.d_pos;
    f.d_neg = p.d_neg;
    f.p_pos = p.p_pos;
    f.p_hat = p.p_pos;
    f.margin = decoder::margin(p.d_neg, p.d_pos);
    return f;
}

} // namespace

SessionLog replay_windows(const ModelBundle& bundle, std::span<const RunInput> runs, ReferenceKind mode,
                          const PipelineConfig& cfg, const std::string& config_hash)
{
    cfg.validate();
    const auto dim = bundle.onset.prototypes.dim();
    SessionLog log;
    log.config_hash = config_hash;
    log.mode = mode;
    log.montage = bundle.montage;
    log.theta_onset = bundle.onset.threshold;
    log.theta_offset = bundle.offset.threshold;

    session::SessionConfig scfg = cfg.session;
    scfg.theta_onset = bundle.onset.threshold;
    scfg.theta_offset = bundle.offset.threshold;
    scfg.ema_beta_onset = bundle.onset.ema_beta;
    scfg.ema_beta_offset = bundle.offset.ema_beta;
    scfg.hop = bundle.hop;

    const RawScorer raw_on(bundle.onset.prototypes);
    const RawScorer raw_off(bundle.offset.prototypes);
    if (mode == ReferenceKind::Fixation && !bundle.fixation_reference) {
        throw Error(ErrorKind::NoReference, "replay: the model has no calibration fixation reference");
    }
    auto frame_prototypes = [&](const decoder::ClassPrototypes& p) {
        return mode == ReferenceKind::Fixation ? recenter::recenter_prototypes(bundle.fixation_reference->s_ref, p) : p;
    };
    const WhitenedScorer hat_on(frame_prototypes(bundle.onset.prototypes));
    const WhitenedScorer hat_off(frame_prototypes(bundle.offset.prototypes));
    const double temp_on = bundle.onset.temperature;
    const double temp_off = bundle.offset.temperature;

    // Reference state shared across runs.
    std::optional<recenter::RecenterReference> reference;
    if (mode == ReferenceKind::Task) {
        reference = recenter::RecenterReference::identity(dim);
    }
    std::optional<recenter::RecenterReference> previous_run;
    std::optional<std::pair<WhitenedScorer, WhitenedScorer>> bound;

    for (const auto& run : runs) {
        if (run.truth == nullptr) {
            throw Error(ErrorKind::Argument, "replay: run '" + run.run_id + "' has no timeline");
        }
        for (const auto& w : run.windows) {
            if (w.cov.dim() != dim) {
                throw Error(ErrorKind::Shape, "replay: model is " + std::to_string(dim) + "-channel, run '" +
                                                  run.run_id + "' has " + std::to_string(w.cov.dim()) + " channels");
            }
        }
        RunLog rl;
        rl.run_id = run.run_id;
        rl.source = run.source;
        session::Session sess(scfg);
        int current_trial = -1;
        std::vector<SpdMatrix> fixation_buffer;
        bool fixation_pending = false;

        for (const auto& w : run.windows) {
            if (w.trial > current_trial) {
                current_trial = w.trial;
                const auto& tt = run.truth->trials.at(static_cast<std::size_t>(w.trial));
                sess.begin_trial({tt.trial_id, tt.target_id, static_cast<double>(tt.start_sample) / run.truth->fs,
                                  tt.intended_start});
            }

            if (mode == ReferenceKind::Fixation) {
                if (is_class(w, synth::Phase::Fixation)) {
                    fixation_buffer.push_back(w.cov);
                    fixation_pending = true;
                } else if (fixation_pending) {
                    fixation_pending = false;
                    try {
                        reference = recenter::fit_fixation_reference(fixation_buffer, cfg.fixation, previous_run);
                        bound.reset();
                    } catch (const Error& e) {
                        if (e.kind() != ErrorKind::NoReference) {
                            throw;
                        }
                    }
                }
            } else if (mode == ReferenceKind::Task) {
                reference = recenter::task_reference_update(*reference, w.cov, cfg.task_window);
                bound.reset();
            }

            WindowScore ws;
            ws.t = w.t;
            ws.trial = w.trial;
            ws.phase = w.phase;
            Scored2 id{raw_on(w.cov, temp_on), raw_off(w.cov, temp_off)};
            ws.identity_margin_onset = decoder::margin(id.onset.d_neg, id.onset.d_pos);
            ws.identity_margin_offset = decoder::margin(id.offset.d_neg, id.offset.d_pos);
            Scored2 sc = id;
            if (mode != ReferenceKind::Identity) {
                if (reference) {
                    if (!bound) {
                        const spd::Matrix inv = spd::spd_sqrt_invsqrt(reference->s_ref).invsqrt.matrix();
                        bound.emplace(hat_on.bound(inv), hat_off.bound(inv));
                    }
                    sc = {bound->first(w.cov, temp_on), bound->second(w.cov, temp_off)};
                } else {
                    ws.bootstrap = true;
                    ++rl.bootstrap_windows;
                }
            }
            ws.p_onset = sc.onset.p_pos;
            ws.p_offset = sc.offset.p_pos;
            ws.margin_onset = decoder::margin(sc.onset.d_neg, sc.onset.d_pos);
            ws.margin_offset = decoder::margin(sc.offset.d_neg, sc.offset.d_pos);
            rl.windows.push_back(ws);

            if (current_trial >= 0) {
                sess.advance(frame_of(w.t, sc.onset), frame_of(w.t, sc.offset), w.t);
            }
        }
        sess.finish();
        rl.trials = sess.records();

        if (mode == ReferenceKind::Fixation) {
            if (fixation_pending) {
                try {
                    reference = recenter::fit_fixation_reference(fixation_buffer, cfg.fixation, previous_run);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::NoReference) {
                        throw;
                    }
                }
            }
            if (!reference) {
                throw Error(ErrorKind::NoReference, "replay: run '" + run.run_id + "' has fewer than " +
                                                        std::to_string(cfg.fixation.n_min) +
                                                        " fixation windows and no earlier reference");
            }
            previous_run = reference;
        }
        rl.final_reference = reference ? *reference : recenter::RecenterReference::identity(dim);
        log.runs.push_back(std::move(rl));
    }
    return log;
}

SessionLog replay(const ModelBundle& bundle, std::span<const StreamRun> runs, ReferenceKind mode,
                  const PipelineConfig& cfg, const std::string& config_hash)
{
    std::vector<std::vector<LabeledWindow>> windows;
    std::vector<RunInput> inputs;
    for (const auto& r : runs) {
        if (r.stream == nullptr || r.truth == nullptr) {
            throw Error(ErrorKind::Argument, "replay: run '" + r.run_id + "' is missing its stream or timeline");
        }
        if (r.stream->channels != bundle.montage.channels || r.stream->fs != bundle.montage.fs) {
            throw Error(ErrorKind::Shape, "replay: run '" + r.run_id + "' has " + std::to_string(r.stream->channels) +
                                              " channels at " + std::to_string(r.stream->fs) +
                                              " Hz, model expects " + std::to_string(bundle.montage.channels) +
                                              " at " + std::to_string(bundle.montage.fs) + " Hz");
        }
        preprocess::StreamConfig sc = cfg.stream;
        sc.band_low = bundle.band_low;
        sc.band_high = bundle.band_high;
        sc.window_len = bundle.window_len;
        sc.hop = bundle.hop;
        windows.push_back(extract_windows(*r.stream, *r.truth, sc));
    }
    for (std::size_t i = 0; i < runs.size(); ++i) {
        inputs.push_back({runs[i].run_id, runs[i].source, runs[i].truth, windows[i]});
    }
    return replay_windows(bundle, inputs, mode, cfg, config_hash);
}

// ---------------------------------------------------------------- reports

analysis::ClassMargins run_margins(const RunLog& run, DecoderId id, bool identity_geometry)
{
    const ClassMap cm = class_map(id);
    analysis::ClassMargins m;
    for (const auto& w : run.windows) {
        if (w.bootstrap) {
            continue;
        }
        const double v = id == DecoderId::Onset ? (identity_geometry ? w.identity_margin_onset : w.margin_onset)
                                                : (identity_geometry ? w.identity_margin_offset : w.margin_offset);
        if (w.phase == static_cast<std::int8_t>(cm.positive)) {
            m.positive.push_back(v);
        } else if (w.phase == static_cast<std::int8_t>(cm.negative)) {
            m.negative.push_back(v);
        }
    }
    return m;
}

std::optional<double> run_auc(const RunLog& run, DecoderId id)
{
    const auto m = run_margins(run, id);
    if (m.positive.empty() || m.negative.empty()) {
        return std::nullopt;
    }
    std::vector<analysis::Scored> s;
    for (double v : m.positive) {
        s.push_back({v, true});
    }
    for (double v : m.negative) {
        s.push_back({v, false});
    }
    return analysis::run_auc(s);
}

std::optional<double> combined_auc(const RunLog& run)
{
    const auto a = run_auc(run, DecoderId::Onset);
    const auto b = run_auc(run, DecoderId::Offset);
    if (a && b) {
        return 0.5 * (*a + *b);
    }
    return a ? a : b;
}

analysis::RunMetrics run_metrics(const RunLog& run)
{
    auto m = analysis::outcome_latency_stats(run.trials, run.run_id);
    m.auc_onset = run_auc(run, DecoderId::Onset);
    m.auc_offset = run_auc(run, DecoderId::Offset);
    return m;
}

analysis::BiasReport bias_report(const SessionLog& log, DecoderId id)
{
    analysis::ClassMargins mode;
    analysis::ClassMargins identity;
    for (const auto& run : log.runs) {
        const auto a = run_margins(run, id, false);
        const auto b = run_margins(run, id, true);
        mode.positive.insert(mode.positive.end(), a.positive.begin(), a.positive.end());
        mode.negative.insert(mode.negative.end(), a.negative.begin(), a.negative.end());
        identity.positive.insert(identity.positive.end(), b.positive.begin(), b.positive.end());
        identity.negative.insert(identity.negative.end(), b.negative.begin(), b.negative.end());
    }
    return analysis::margin_shift(mode, identity, recenter::to_string(log.mode), "identity");
}

PairedTest paired_auc_test(const SessionLog& a, const SessionLog& b, DecoderId id)
{
    PairedTest pt;
    pt.label = recenter::to_string(b.mode) + " - " + recenter::to_string(a.mode);
    pt.decoder = id;
    if (a.runs.size() != b.runs.size()) {
        pt.error = "logs have different run counts (" + std::to_string(a.runs.size()) + " vs " +
                   std::to_string(b.runs.size()) + ")";
        return pt;
    }
    for (std::size_t r = 0; r < a.runs.size(); ++r) {
        const auto x = run_auc(a.runs[r], id);
        const auto y = run_auc(b.runs[r], id);
        if (x && y) {
            pt.differences.push_back(*y - *x);
        }
    }
    try {
        pt.result = analysis::wilcoxon_signed_rank_exact(pt.differences);
    } catch (const Error& e) {
        pt.error = e.what();
    }
    return pt;
}

} // namespace mibci::pipeline
