#include <mibci/decoder.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace mibci::decoder {

std::string to_string(DecoderId id)
{
    return id == DecoderId::Onset ? "onset" : "offset";
}

DecoderId decoder_id_from_string(const std::string& s)
{
    if (s == "onset") {
        return DecoderId::Onset;
    }
    if (s == "offset") {
        return DecoderId::Offset;
    }
    throw Error(ErrorKind::Format, "unknown decoder id '" + s + "'");
}

double ClassPrototypes::separation() const
{
    return spd::airm_distance(positive, negative);
}

void DecoderConfig::validate() const
{
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw Error(ErrorKind::Argument, "DecoderConfig: temperature must be positive");
    }
    if (!(ema_beta > 0.0 && ema_beta < 1.0)) {
        throw Error(ErrorKind::Argument, "DecoderConfig: ema_beta must lie in (0, 1)");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw Error(ErrorKind::Argument, "DecoderConfig: threshold must lie in (0, 1)");
    }
    if (!(hold_time >= 0.0) || !(refractory >= 0.0) || !(decision_window > 0.0)) {
        throw Error(ErrorKind::Argument, "DecoderConfig: times must be non-negative");
    }
}

ClassPrototypes fit_prototypes(std::span<const LabeledCov> train, DecoderId id, const spd::FrechetConfig& cfg,
                               FitDiagnostics* diagnostics)
{
    std::vector<SpdMatrix> pos;
    std::vector<SpdMatrix> neg;
    std::vector<SpdMatrix> all;
    for (const auto& s : train) {
        (s.positive ? pos : neg).push_back(s.cov);
        all.push_back(s.cov);
    }
    if (pos.size() < 2 || neg.size() < 2) {
        throw Error(ErrorKind::Argument, "fit_prototypes: need at least two samples per class (got " +
                                             std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) +
                                             " negative)");
    }
    const spd::Index dim = all.front().dim();
    for (const auto& s : all) {
        if (s.dim() != dim) {
            throw Error(ErrorKind::Shape, "fit_prototypes: mixed dimensions");
        }
    }
    auto fit_pos = spd::frechet_mean_detailed(pos, cfg);
    auto fit_neg = spd::frechet_mean_detailed(neg, cfg);
    auto fit_all = spd::frechet_mean_detailed(all, cfg);
    if (diagnostics != nullptr) {
        *diagnostics = FitDiagnostics{static_cast<int>(pos.size()), static_cast<int>(neg.size()), fit_pos.iterations,
                                      fit_neg.iterations, fit_all.iterations};
    }
    SpdMatrix raw_pos = std::move(fit_pos.mean);
    SpdMatrix raw_neg = std::move(fit_neg.mean);
    SpdMatrix s_train = std::move(fit_all.mean);
    const SpdMatrix invsqrt = spd::spd_sqrt_invsqrt(s_train).invsqrt;
    return ClassPrototypes{spd::congruence(raw_pos, invsqrt), spd::congruence(raw_neg, invsqrt), std::move(raw_pos),
                           std::move(raw_neg), std::move(s_train), id};
}

double softmax_positive(double d_pos, double d_neg, double temperature)
{
    // exp(-a dp) / (exp(-a dp) + exp(-a dn)) = 1 / (1 + exp(-a (dn - dp)))
    const double z = temperature * (d_neg - d_pos);
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Posterior mdm_posteriors(const SpdMatrix& sample, const SpdMatrix& positive, const SpdMatrix& negative,
                         double temperature)
{
    if (sample.dim() != positive.dim() || sample.dim() != negative.dim()) {
        throw Error(ErrorKind::Shape, "mdm_posteriors: dimension mismatch");
    }
    Posterior p;
    p.d_pos = spd::airm_distance(positive, sample);
    p.d_neg = spd::airm_distance(negative, sample);
    p.p_pos = softmax_positive(p.d_pos, p.d_neg, temperature);
    return p;
}

Posterior mdm_posteriors(const SpdMatrix& sample_hat, const ClassPrototypes& prototypes, const DecoderConfig& cfg)
{
    return mdm_posteriors(sample_hat, prototypes.positive, prototypes.negative, cfg.temperature);
}

double ema_update(double p_hat_prev, double p, double beta)
{
    return (1.0 - beta) * p_hat_prev + beta * p;
}

double default_temperature(const ClassPrototypes& prototypes)
{
    const double d = prototypes.separation();
    if (!(d > 0.0)) {
        throw Error(ErrorKind::DegenerateInput, "default_temperature: prototypes coincide");
    }
    return std::log(9.0) / d;
}

namespace {

struct TraceSummary {
    double max = 0.0;
    bool positive = false;
    const LabeledTrace* trace = nullptr;
};

std::optional<double> first_crossing(const LabeledTrace& tr, double theta)
{
    for (std::size_t i = 0; i < tr.p_hat.size(); ++i) {
        if (tr.p_hat[i] >= theta) {
            return tr.times[i];
        }
    }
    return std::nullopt;
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<TraceSummary> summarize(std::span<const LabeledTrace> traces)
{
    std::vector<TraceSummary> out;
    std::size_t npos = 0;
    for (const auto& tr : traces) {
        if (tr.p_hat.empty() || tr.p_hat.size() != tr.times.size()) {
            throw Error(ErrorKind::Argument, "select_threshold: trace is empty or times/p_hat lengths differ");
        }
        out.push_back({*std::max_element(tr.p_hat.begin(), tr.p_hat.end()), tr.positive, &tr});
        npos += tr.positive ? 1 : 0;
    }
    if (npos == 0 || npos == out.size()) {
        throw Error(ErrorKind::Argument, "select_threshold: need both positive and negative traces");
    }
    return out;
}

ThresholdResult operating_point(const std::vector<TraceSummary>& s, double theta)
{
    std::size_t npos = 0;
    std::size_t nneg = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::vector<double> latencies;
    for (const auto& t : s) {
        const bool hit = t.max >= theta;
        if (t.positive) {
            ++npos;
            if (hit) {
                ++tp;
                latencies.push_back(*first_crossing(*t.trace, theta));
            }
        } else {
            ++nneg;
            fp += hit ? 1 : 0;
        }
    }
    ThresholdResult r;
    r.theta = theta;
    r.tpr = static_cast<double>(tp) / static_cast<double>(npos);
    r.fpr = static_cast<double>(fp) / static_cast<double>(nneg);
    r.youden = r.tpr - r.fpr;
    if (!latencies.empty()) {
        r.median_latency = median(std::move(latencies));
    }
    return r;
}

bool better(const ThresholdResult& a, const ThresholdResult& b)
{
    if (a.youden != b.youden) {
        return a.youden > b.youden;
    }
    if (a.fpr != b.fpr) {
        return a.fpr < b.fpr;
    }
    return a.theta > b.theta;
}

} // namespace

ThresholdResult evaluate_threshold(std::span<const LabeledTrace> traces, double theta)
{
    return operating_point(summarize(traces), theta);
}

ThresholdResult select_threshold(std::span<const LabeledTrace> traces, double latency_cap)
{
    if (!(latency_cap > 0.0)) {
        throw Error(ErrorKind::Argument, "select_threshold: latency cap must be positive");
    }
    const auto s = summarize(traces);
    std::vector<double> maxima;
    for (const auto& t : s) {
        maxima.push_back(t.max);
    }
    std::sort(maxima.begin(), maxima.end());
    maxima.erase(std::unique(maxima.begin(), maxima.end()), maxima.end());

    std::optional<ThresholdResult> best;
    std::optional<ThresholdResult> best_any;
    for (std::size_t i = 0; i + 1 < maxima.size(); ++i) {
        const ThresholdResult r = operating_point(s, 0.5 * (maxima[i] + maxima[i + 1]));
        if (!best_any || better(r, *best_any)) {
            best_any = r;
        }
        const bool admissible = r.median_latency && *r.median_latency <= latency_cap;
        if (admissible && (!best || better(r, *best))) {
            best = r;
        }
    }
    if (!best_any || best_any->youden <= 0.0) {
        ThresholdResult r = best_any ? *best_any : operating_point(s, 0.5);
        r.degenerate = true;
        return r;
    }
    if (!best) {
        throw ConstraintInfeasible("select_threshold: no threshold meets the " + std::to_string(latency_cap) +
                                       " s median latency cap",
                                   *best_any);
    }
    return *best;
}

} // namespace mibci::decoder
