#pragma once

// Online trial state machine: cue timeline, onset/offset arbitration,
// assistance gate and a normalized trajectory surrogate.

#include <mibci/decoder.hpp>

#include <optional>
#include <string>
#include <vector>

namespace mibci::session {

using decoder::PosteriorFrame;

enum class TrialPhase { Rest, Countdown, StartCue, Moving, StopHandling, ReturnHome, Done };
enum class Outcome { Hit, Miss, Timeout, NotAttempted };

std::string to_string(TrialPhase p);
std::string to_string(Outcome o);
TrialPhase trial_phase_from_string(const std::string& s);
Outcome outcome_from_string(const std::string& s);

struct SessionConfig {
    double hop = 0.0625;
    double hold_time = 0.25;
    double countdown = 3.0;
    double onset_window = 5.0;
    double offset_window = 6.0;
    double refractory = 1.0;
    double theta_onset = 0.5;
    double theta_offset = 0.5;
    double ema_beta_onset = 0.2;
    double ema_beta_offset = 0.2;
    double nominal_duration = 6.4;
    double overtravel_duration = 5.0;
    double overtravel_cap = 1.25;
    double stop_rest = 2.0;

    void validate() const;
    /// ceil(hold_time / hop): consecutive supra-threshold frames per decision.
    int hold_frames() const;
};

/// Counts consecutive supra-threshold frames; fires on the hold_frames-th
/// and reports the decision time t_first + hold_frames * hop.
class HoldDetector {
public:
    HoldDetector(int frames, double hop) : frames_(frames), hop_(hop) {}

    std::optional<double> push(bool above, double t);
    void reset() { run_ = 0; }

private:
    int frames_;
    double hop_;
    int run_ = 0;
    double first_ = 0.0;
};

struct TrialSchedule {
    int trial_id = 0;
    int target_id = 1;
    double t_start = 0.0; ///< rest onset
    double t_cue = 0.0;   ///< Start cue (green LED)
};

enum class DecisionKind { Start, Stop, OnsetMiss, OffsetMiss, OnsetTimeout, OffsetTimeout };
std::string to_string(DecisionKind k);
DecisionKind decision_kind_from_string(const std::string& s);

struct Decision {
    DecisionKind kind = DecisionKind::Start;
    double t = 0.0;
};

struct Event {
    int trial_id = 0;
    DecisionKind kind = DecisionKind::Start;
    double t = 0.0;
};

struct TracePoint {
    PosteriorFrame frame;
    TrialPhase phase = TrialPhase::Rest;
};

struct TrialRecord {
    int trial_id = 0;
    int target_id = 1;
    double t_start = 0.0;
    double t_cue = 0.0;
    std::vector<std::pair<TrialPhase, double>> phase_times;
    std::vector<TracePoint> onset_trace;
    std::vector<TracePoint> offset_trace;
    std::vector<Decision> decisions;
    /// (time, g_bci) at every gate change.
    std::vector<std::pair<double, int>> gate_changes;
    Outcome outcome_onset = Outcome::Timeout;
    Outcome outcome_offset = Outcome::NotAttempted;
    std::optional<double> t_move;
    std::optional<double> onset_latency;
    std::optional<double> offset_latency;
    double stop_progress = 0.0;
    /// Every decision window was observed to its end.
    bool complete = false;
};

struct GateState {
    int g_bci = 0;
    double last_transition_time = 0.0;
};

inline double gate_torque(const GateState& g, double tau_task)
{
    return static_cast<double>(g.g_bci) * tau_task;
}

/// Deterministic frame-by-frame transition function over a sequence of
/// trials. The session owns the EMA state: incoming frames carry raw
/// posteriors and the smoothed values are written into the traces.
class Session {
public:
    explicit Session(SessionConfig cfg);

    /// Starts a trial, force-finishing the current one.
    void begin_trial(const TrialSchedule& schedule);
    /// Advances one hop. Clocks must be strictly increasing.
    std::vector<Event> advance(const PosteriorFrame& onset, const PosteriorFrame& offset, double clock);
    /// Force-finishes the current trial, if any.
    void finish();

    const std::vector<TrialRecord>& records() const { return records_; }
    TrialPhase phase() const { return phase_; }
    const GateState& gate() const { return gate_; }
    /// Normalized trajectory progress at the last processed clock.
    double progress() const { return progress_; }
    const SessionConfig& config() const { return cfg_; }

private:
    void set_phase(TrialPhase p, double t);
    void set_gate(int g, double t);
    void close_trial();
    double progress_at(double t) const;

    SessionConfig cfg_;
    std::vector<TrialRecord> records_;
    std::optional<TrialRecord> current_;
    TrialPhase phase_ = TrialPhase::Done;
    GateState gate_;
    HoldDetector onset_pos_;
    HoldDetector onset_neg_;
    HoldDetector offset_pos_;
    HoldDetector offset_neg_;
    double p_hat_onset_ = 0.5;
    double p_hat_offset_ = 0.5;
    double refractory_until_ = 0.0;
    std::optional<double> overtravel_end_;
    std::optional<double> rest_end_;
    double progress_ = 0.0;
    std::optional<double> last_clock_;
};

/// Re-derives (onset, offset) outcomes from a record's traces with the
/// same hold, window and refractory rules used online.
std::pair<Outcome, Outcome> classify_outcomes(const TrialRecord& record, const SessionConfig& cfg);

} // namespace mibci::session
