#include <mibci/session.hpp>

#include <algorithm>
#include <cmath>

namespace mibci::session {

namespace {

// Frame clocks are multiples of the hop; comparisons against window edges
// allow for accumulated rounding.
constexpr double kClockEps = 1e-9;

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::pair<E, const char*> (&table)[N], const char* what)
{
    for (const auto& [value, name] : table) {
        if (s == name) {
            return value;
        }
    }
    throw Error(ErrorKind::Format, std::string("unknown ") + what + " '" + s + "'");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const std::pair<E, const char*> (&table)[N])
{
    for (const auto& [value, name] : table) {
        if (v == value) {
            return name;
        }
    }
    return "unknown";
}

constexpr std::pair<TrialPhase, const char*> kPhaseNames[] = {
    {TrialPhase::Rest, "rest"},           {TrialPhase::Countdown, "countdown"},
    {TrialPhase::StartCue, "start_cue"},  {TrialPhase::Moving, "moving"},
    {TrialPhase::StopHandling, "stop_handling"}, {TrialPhase::ReturnHome, "return_home"},
    {TrialPhase::Done, "done"},
};

constexpr std::pair<Outcome, const char*> kOutcomeNames[] = {
    {Outcome::Hit, "hit"},
    {Outcome::Miss, "miss"},
    {Outcome::Timeout, "timeout"},
    {Outcome::NotAttempted, "not_attempted"},
};

constexpr std::pair<DecisionKind, const char*> kDecisionNames[] = {
    {DecisionKind::Start, "start"},
    {DecisionKind::Stop, "stop"},
    {DecisionKind::OnsetMiss, "onset_miss"},
    {DecisionKind::OffsetMiss, "offset_miss"},
    {DecisionKind::OnsetTimeout, "onset_timeout"},
    {DecisionKind::OffsetTimeout, "offset_timeout"},
};

} // namespace

std::string to_string(TrialPhase p)
{
    return enum_name(p, kPhaseNames);
}

std::string to_string(Outcome o)
{
    return enum_name(o, kOutcomeNames);
}

std::string to_string(DecisionKind k)
{
    return enum_name(k, kDecisionNames);
}

TrialPhase trial_phase_from_string(const std::string& s)
{
    return parse_enum(s, kPhaseNames, "trial phase");
}

Outcome outcome_from_string(const std::string& s)
{
    return parse_enum(s, kOutcomeNames, "outcome");
}

DecisionKind decision_kind_from_string(const std::string& s)
{
    return parse_enum(s, kDecisionNames, "decision kind");
}

void SessionConfig::validate() const
{
    if (!(hop > 0.0) || !(hold_time >= 0.0) || !(countdown >= 0.0)) {
        throw Error(ErrorKind::Argument, "SessionConfig: hop must be positive and durations non-negative");
    }
    if (!(onset_window > 0.0) || !(offset_window > 0.0) || !(refractory >= 0.0)) {
        throw Error(ErrorKind::Argument, "SessionConfig: decision windows must be positive");
    }
    for (double th : {theta_onset, theta_offset}) {
        if (!(th > 0.0 && th < 1.0)) {
            throw Error(ErrorKind::Argument, "SessionConfig: thresholds must lie in (0, 1)");
        }
    }
    for (double b : {ema_beta_onset, ema_beta_offset}) {
        if (!(b > 0.0 && b < 1.0)) {
            throw Error(ErrorKind::Argument, "SessionConfig: EMA weights must lie in (0, 1)");
        }
    }
    if (!(nominal_duration > 0.0) || !(overtravel_duration >= 0.0) || !(overtravel_cap >= 1.0) ||
        !(stop_rest >= 0.0)) {
        throw Error(ErrorKind::Argument, "SessionConfig: invalid trajectory parameters");
    }
}

int SessionConfig::hold_frames() const
{
    return std::max(1, static_cast<int>(std::ceil(hold_time / hop - kClockEps)));
}

std::optional<double> HoldDetector::push(bool above, double t)
{
    if (!above) {
        run_ = 0;
        return std::nullopt;
    }
    if (run_ == 0) {
        first_ = t;
    }
    ++run_;
    if (run_ >= frames_) {
        run_ = 0;
        return first_ + frames_ * hop_;
    }
    return std::nullopt;
}

Session::Session(SessionConfig cfg)
    : cfg_((cfg.validate(), cfg)), onset_pos_(cfg_.hold_frames(), cfg_.hop), onset_neg_(cfg_.hold_frames(), cfg_.hop),
      offset_pos_(cfg_.hold_frames(), cfg_.hop), offset_neg_(cfg_.hold_frames(), cfg_.hop)
{
}

void Session::begin_trial(const TrialSchedule& schedule)
{
    if (last_clock_ && schedule.t_start < *last_clock_) {
        throw Error(ErrorKind::Protocol, "begin_trial: trial " + std::to_string(schedule.trial_id) +
                                             " starts before the last processed frame");
    }
    if (!(schedule.t_cue >= schedule.t_start)) {
        throw Error(ErrorKind::Protocol, "begin_trial: cue precedes trial start");
    }
    close_trial();
    TrialRecord rec;
    rec.trial_id = schedule.trial_id;
    rec.target_id = schedule.target_id;
    rec.t_start = schedule.t_start;
    rec.t_cue = schedule.t_cue;
    current_ = std::move(rec);
    gate_ = GateState{0, schedule.t_start};
    progress_ = 0.0;
    overtravel_end_.reset();
    rest_end_.reset();
    phase_ = TrialPhase::Done; // set_phase below records the first real phase
    set_phase(TrialPhase::Rest, schedule.t_start);
}

void Session::finish()
{
    close_trial();
}

void Session::close_trial()
{
    if (!current_) {
        return;
    }
    records_.push_back(std::move(*current_));
    current_.reset();
    phase_ = TrialPhase::Done;
}

void Session::set_phase(TrialPhase p, double t)
{
    if (p == phase_) {
        return;
    }
    phase_ = p;
    current_->phase_times.emplace_back(p, t);
    switch (p) {
    case TrialPhase::Rest:
    case TrialPhase::Countdown:
    case TrialPhase::StartCue:
        p_hat_onset_ = 0.5;
        onset_pos_.reset();
        onset_neg_.reset();
        break;
    case TrialPhase::Moving:
        p_hat_offset_ = 0.5;
        offset_pos_.reset();
        offset_neg_.reset();
        break;
    default:
        break;
    }
}

void Session::set_gate(int g, double t)
{
    if (g == gate_.g_bci) {
        return;
    }
    gate_ = GateState{g, t};
    current_->gate_changes.emplace_back(t, g);
}

double Session::progress_at(double t) const
{
    if (!current_ || !current_->t_move) {
        return 0.0;
    }
    double end = t;
    if (gate_.g_bci == 0) {
        end = std::min(end, gate_.last_transition_time);
    }
    const double p = std::max(0.0, end - *current_->t_move) / cfg_.nominal_duration;
    return std::min(p, cfg_.overtravel_cap);
}

std::vector<Event> Session::advance(const PosteriorFrame& onset, const PosteriorFrame& offset, double clock)
{
    if (last_clock_ && !(clock > *last_clock_)) {
        throw Error(ErrorKind::Protocol, "advance: clock " + std::to_string(clock) +
                                             " does not increase past " + std::to_string(*last_clock_));
    }
    last_clock_ = clock;
    std::vector<Event> events;
    if (!current_ || phase_ == TrialPhase::Done) {
        return events;
    }
    TrialRecord& rec = *current_;
    auto emit = [&](DecisionKind k, double t) {
        rec.decisions.push_back({k, t});
        events.push_back({rec.trial_id, k, t});
    };

    if (phase_ == TrialPhase::Rest || phase_ == TrialPhase::Countdown) {
        if (clock + kClockEps >= rec.t_cue) {
            set_phase(TrialPhase::StartCue, rec.t_cue);
        } else if (clock + kClockEps >= rec.t_cue - cfg_.countdown) {
            set_phase(TrialPhase::Countdown, rec.t_cue - cfg_.countdown);
        }
    }

    if (phase_ == TrialPhase::Rest || phase_ == TrialPhase::Countdown) {
        PosteriorFrame f = onset;
        f.t = clock;
        p_hat_onset_ = decoder::ema_update(p_hat_onset_, f.p_pos, cfg_.ema_beta_onset);
        f.p_hat = p_hat_onset_;
        rec.onset_trace.push_back({f, phase_});
    } else if (phase_ == TrialPhase::StartCue) {
        if (clock - rec.t_cue >= cfg_.onset_window - kClockEps) {
            const double t = rec.t_cue + cfg_.onset_window;
            emit(DecisionKind::OnsetTimeout, t);
            rec.outcome_onset = Outcome::Timeout;
            rec.outcome_offset = Outcome::NotAttempted;
            rec.complete = true;
            set_phase(TrialPhase::Done, t);
        } else {
            PosteriorFrame f = onset;
            f.t = clock;
            p_hat_onset_ = decoder::ema_update(p_hat_onset_, f.p_pos, cfg_.ema_beta_onset);
            f.p_hat = p_hat_onset_;
            rec.onset_trace.push_back({f, phase_});
            const auto start = onset_pos_.push(f.p_hat >= cfg_.theta_onset, clock);
            const auto miss = onset_neg_.push(1.0 - f.p_hat >= cfg_.theta_onset, clock);
            if (start) {
                emit(DecisionKind::Start, *start);
                rec.outcome_onset = Outcome::Hit;
                rec.onset_latency = *start - rec.t_cue;
                rec.t_move = *start;
                refractory_until_ = *start + cfg_.refractory;
                set_gate(1, *start);
                set_phase(TrialPhase::Moving, *start);
            } else if (miss) {
                emit(DecisionKind::OnsetMiss, *miss);
                rec.outcome_onset = Outcome::Miss;
                rec.outcome_offset = Outcome::NotAttempted;
                rec.complete = true;
                set_phase(TrialPhase::Done, *miss);
            }
        }
    } else if (phase_ == TrialPhase::Moving && !overtravel_end_) {
        const double t_move = *rec.t_move;
        auto begin_overtravel = [&](double t) {
            overtravel_end_ = t + cfg_.overtravel_duration;
            rec.stop_progress = std::min(cfg_.overtravel_cap, (*overtravel_end_ - t_move) / cfg_.nominal_duration);
            rec.complete = true;
        };
        if (clock - t_move >= cfg_.offset_window - kClockEps) {
            const double t = t_move + cfg_.offset_window;
            emit(DecisionKind::OffsetTimeout, t);
            rec.outcome_offset = Outcome::Timeout;
            begin_overtravel(t);
        } else {
            PosteriorFrame f = offset;
            f.t = clock;
            p_hat_offset_ = decoder::ema_update(p_hat_offset_, f.p_pos, cfg_.ema_beta_offset);
            f.p_hat = p_hat_offset_;
            rec.offset_trace.push_back({f, phase_});
            std::optional<double> stop;
            std::optional<double> miss;
            if (clock + kClockEps >= refractory_until_) {
                stop = offset_pos_.push(f.p_hat >= cfg_.theta_offset, clock);
                miss = offset_neg_.push(1.0 - f.p_hat >= cfg_.theta_offset, clock);
            }
            if (stop) {
                emit(DecisionKind::Stop, *stop);
                rec.outcome_offset = Outcome::Hit;
                rec.offset_latency = *stop - t_move;
                rec.stop_progress = std::min(cfg_.overtravel_cap, (*stop - t_move) / cfg_.nominal_duration);
                rec.complete = true;
                set_gate(0, *stop);
                set_phase(TrialPhase::StopHandling, *stop);
                rest_end_ = *stop + cfg_.stop_rest;
            } else if (miss) {
                emit(DecisionKind::OffsetMiss, *miss);
                rec.outcome_offset = Outcome::Miss;
                begin_overtravel(*miss);
            }
        }
    }

    if (phase_ == TrialPhase::Moving && overtravel_end_ && clock + kClockEps >= *overtravel_end_) {
        set_gate(0, *overtravel_end_);
        set_phase(TrialPhase::StopHandling, *overtravel_end_);
        rest_end_ = *overtravel_end_ + cfg_.stop_rest;
    }
    if (phase_ == TrialPhase::StopHandling && rest_end_ && clock + kClockEps >= *rest_end_) {
        set_phase(TrialPhase::ReturnHome, *rest_end_);
    }
    progress_ = progress_at(clock);
    return events;
}

std::pair<Outcome, Outcome> classify_outcomes(const TrialRecord& record, const SessionConfig& cfg)
{
    if (!record.complete) {
        throw Error(ErrorKind::Argument, "classify_outcomes: trial " + std::to_string(record.trial_id) +
                                             " ended before its decision windows closed");
    }
    const int hold = cfg.hold_frames();
    HoldDetector pos(hold, cfg.hop);
    HoldDetector neg(hold, cfg.hop);
    Outcome onset = Outcome::Timeout;
    std::optional<double> t_move;
    for (const auto& tp : record.onset_trace) {
        if (tp.phase != TrialPhase::StartCue) {
            continue;
        }
        if (tp.frame.t - record.t_cue >= cfg.onset_window - kClockEps) {
            break;
        }
        const auto s = pos.push(tp.frame.p_hat >= cfg.theta_onset, tp.frame.t);
        const auto m = neg.push(1.0 - tp.frame.p_hat >= cfg.theta_onset, tp.frame.t);
        if (s) {
            onset = Outcome::Hit;
            t_move = *s;
            break;
        }
        if (m) {
            onset = Outcome::Miss;
            break;
        }
    }
    if (onset != Outcome::Hit) {
        return {onset, Outcome::NotAttempted};
    }
    pos = HoldDetector(hold, cfg.hop);
    neg = HoldDetector(hold, cfg.hop);
    for (const auto& tp : record.offset_trace) {
        const double t = tp.frame.t;
        if (t - *t_move >= cfg.offset_window - kClockEps) {
            break;
        }
        if (t + kClockEps < *t_move + cfg.refractory) {
            continue;
        }
        const auto s = pos.push(tp.frame.p_hat >= cfg.theta_offset, t);
        const auto m = neg.push(1.0 - tp.frame.p_hat >= cfg.theta_offset, t);
        if (s) {
            return {Outcome::Hit, Outcome::Hit};
        }
        if (m) {
            return {Outcome::Hit, Outcome::Miss};
        }
    }
    return {Outcome::Hit, Outcome::Timeout};
}

} // namespace mibci::session
