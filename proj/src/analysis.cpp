#include <mibci/analysis.hpp>

#include <mibci/synth.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace mibci::analysis {

// ---------------------------------------------------------------- spectrogram

void SpectrogramConfig::validate() const
{
    if (!(fs > 0.0) || !(window > 0.0) || !(hop > 0.0)) {
        throw Error(ErrorKind::Argument, "SpectrogramConfig: fs, window and hop must be positive");
    }
    if (sub_segments < 1) {
        throw Error(ErrorKind::Argument, "SpectrogramConfig: need at least one sub-segment");
    }
    if ((2 * window_samples()) % (sub_segments + 1) != 0 || segment_samples() < 2) {
        throw Error(ErrorKind::Argument, "SpectrogramConfig: window cannot be split into equal 50%-overlap segments");
    }
    if (!(f_min >= 0.0 && f_min <= f_max && f_max <= fs / 2.0) || !(f_step > 0.0)) {
        throw Error(ErrorKind::Argument, "SpectrogramConfig: frequency grid must lie in [0, fs/2]");
    }
}

int SpectrogramConfig::window_samples() const
{
    return static_cast<int>(std::lround(window * fs));
}

int SpectrogramConfig::hop_samples() const
{
    return static_cast<int>(std::lround(hop * fs));
}

int SpectrogramConfig::segment_samples() const
{
    return 2 * window_samples() / (sub_segments + 1);
}

std::vector<double> SpectrogramConfig::freqs() const
{
    std::vector<double> f;
    for (int k = 0; f_min + k * f_step <= f_max + 1e-9; ++k) {
        f.push_back(f_min + k * f_step);
    }
    return f;
}

PowerGrid welch_power(std::span<const double> x, const SpectrogramConfig& cfg)
{
    cfg.validate();
    const int w = cfg.window_samples();
    const int h = cfg.hop_samples();
    const int l = cfg.segment_samples();
    if (static_cast<int>(x.size()) < w) {
        throw Error(ErrorKind::Shape, "welch_power: segment shorter than one window");
    }
    PowerGrid out;
    out.freqs = cfg.freqs();
    const auto nf = static_cast<Eigen::Index>(out.freqs.size());
    const int nwin = (static_cast<int>(x.size()) - w) / h + 1;

    // Periodic Hann taper and DFT kernels on the requested grid.
    Eigen::VectorXd taper(l);
    for (int n = 0; n < l; ++n) {
        taper(n) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / l);
    }
    Matrix cos_k(nf, l);
    Matrix sin_k(nf, l);
    for (Eigen::Index f = 0; f < nf; ++f) {
        for (int n = 0; n < l; ++n) {
            const double ph = 2.0 * std::numbers::pi * out.freqs[static_cast<std::size_t>(f)] * n / cfg.fs;
            cos_k(f, n) = std::cos(ph) * taper(n);
            sin_k(f, n) = std::sin(ph) * taper(n);
        }
    }
    const double norm = cfg.fs * taper.squaredNorm();

    out.power.resize(nf, nwin);
    Eigen::VectorXd seg(l);
    for (int k = 0; k < nwin; ++k) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(nf);
        for (int s = 0; s < cfg.sub_segments; ++s) {
            const int start = k * h + s * (l / 2);
            for (int n = 0; n < l; ++n) {
                seg(n) = x[static_cast<std::size_t>(start + n)];
            }
            seg.array() -= seg.mean();
            const Eigen::VectorXd re = cos_k * seg;
            const Eigen::VectorXd im = sin_k * seg;
            acc += (re.array().square() + im.array().square()).matrix();
        }
        out.power.col(k) = 2.0 * acc / (norm * cfg.sub_segments);
        out.times.push_back((k * h + w / 2.0) / cfg.fs);
    }
    return out;
}

namespace {

SpectrogramResult log_ratio(const std::vector<double>& freqs, const std::vector<double>& times, const Matrix& power,
                            double window, double baseline_begin, double baseline_end)
{
    std::vector<Eigen::Index> base;
    for (std::size_t t = 0; t < times.size(); ++t) {
        const double begin = times[t] - window / 2.0;
        const double end = times[t] + window / 2.0;
        if (begin >= baseline_begin - 1e-9 && end <= baseline_end + 1e-9) {
            base.push_back(static_cast<Eigen::Index>(t));
        }
    }
    if (base.empty()) {
        throw Error(ErrorKind::Argument, "spectrogram: no analysis window lies inside the baseline interval");
    }
    SpectrogramResult r;
    r.freqs = freqs;
    r.times = times;
    r.values = Matrix::Zero(power.rows(), power.cols());
    r.defined.assign(freqs.size(), std::vector<bool>(times.size(), false));
    for (Eigen::Index f = 0; f < power.rows(); ++f) {
        double b = 0.0;
        for (auto t : base) {
            b += power(f, t);
        }
        b /= static_cast<double>(base.size());
        r.baseline.push_back(b);
        if (!(b > 0.0)) {
            continue;
        }
        for (Eigen::Index t = 0; t < power.cols(); ++t) {
            if (power(f, t) > 0.0) {
                r.values(f, t) = std::log10(power(f, t) / b);
                r.defined[static_cast<std::size_t>(f)][static_cast<std::size_t>(t)] = true;
            }
        }
    }
    return r;
}

} // namespace

SpectrogramResult welch_spectrogram(std::span<const double> x, const SpectrogramConfig& cfg, double baseline_begin,
                                    double baseline_end)
{
    const PowerGrid g = welch_power(x, cfg);
    return log_ratio(g.freqs, g.times, g.power, cfg.window, baseline_begin, baseline_end);
}

SpectrogramResult average_spectrogram(std::span<const PowerGrid> trials, double baseline_begin, double baseline_end)
{
    if (trials.empty()) {
        throw Error(ErrorKind::Argument, "average_spectrogram: no trials");
    }
    const PowerGrid& first = trials.front();
    Matrix sum = Matrix::Zero(first.power.rows(), first.power.cols());
    for (const auto& g : trials) {
        if (g.power.rows() != sum.rows() || g.power.cols() != sum.cols()) {
            throw Error(ErrorKind::Shape, "average_spectrogram: trials have different grids");
        }
        sum += g.power;
    }
    sum /= static_cast<double>(trials.size());
    const double window = first.times.size() > 0 ? 2.0 * first.times.front() : 0.0;
    return log_ratio(first.freqs, first.times, sum, window, baseline_begin, baseline_end);
}

// ---------------------------------------------------------------- AUC

double run_auc(std::span<const Scored> samples)
{
    std::size_t npos = 0;
    for (const auto& s : samples) {
        npos += s.positive ? 1 : 0;
        if (!std::isfinite(s.score)) {
            throw Error(ErrorKind::NumericDomain, "run_auc: non-finite score");
        }
    }
    const std::size_t nneg = samples.size() - npos;
    if (npos == 0 || nneg == 0) {
        throw Error(ErrorKind::UndefinedAuc, "run_auc: need both classes (got " + std::to_string(npos) +
                                                 " positive, " + std::to_string(nneg) + " negative)");
    }
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return samples[a].score < samples[b].score; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && samples[order[j]].score == samples[order[i]].score) {
            ++j;
        }
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (samples[order[k]].positive) {
                rank_sum += midrank;
            }
        }
        i = j;
    }
    const double np = static_cast<double>(npos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(nneg));
}

// ---------------------------------------------------------------- bias

double median(std::vector<double> v)
{
    if (v.empty()) {
        throw Error(ErrorKind::Argument, "median: empty input");
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

BiasReport margin_shift(const ClassMargins& a, const ClassMargins& b, std::string name_a, std::string name_b)
{
    if (a.positive.empty() || a.negative.empty() || b.positive.empty() || b.negative.empty()) {
        throw Error(ErrorKind::Argument, "margin_shift: both classes must be present under both references");
    }
    BiasReport r;
    r.reference_a = std::move(name_a);
    r.reference_b = std::move(name_b);
    r.median_pos_a = median(a.positive);
    r.median_neg_a = median(a.negative);
    r.median_pos_b = median(b.positive);
    r.median_neg_b = median(b.negative);
    r.delta_pos = r.median_pos_a - r.median_pos_b;
    r.delta_neg = r.median_neg_a - r.median_neg_b;
    r.delta_sep = r.delta_pos - r.delta_neg;
    return r;
}

// ---------------------------------------------------------------- Wilcoxon

std::vector<double> signed_rank_magnitudes(std::span<const double> diffs)
{
    std::vector<double> mags;
    for (double d : diffs) {
        if (d != 0.0) {
            mags.push_back(std::abs(d));
        }
    }
    std::vector<std::size_t> order(mags.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return mags[a] < mags[b]; });
    std::vector<double> ranks(mags.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && mags[order[j]] == mags[order[i]]) {
            ++j;
        }
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            ranks[order[k]] = midrank;
        }
        i = j;
    }
    return ranks;
}

std::vector<double> wilcoxon_null_distribution(std::span<const double> ranks)
{
    // Counts of subsets by doubled rank sum; midranks double to integers.
    std::vector<long> doubled;
    long total = 0;
    for (double r : ranks) {
        doubled.push_back(std::lround(2.0 * r));
        total += doubled.back();
    }
    std::vector<double> counts(static_cast<std::size_t>(total + 1), 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long r : doubled) {
        for (long s = reach; s >= 0; --s) {
            counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
        }
        reach += r;
    }
    const double scale = std::ldexp(1.0, -static_cast<int>(ranks.size()));
    for (double& c : counts) {
        c *= scale;
    }
    return counts;
}

WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> diffs)
{
    for (double d : diffs) {
        if (!std::isfinite(d)) {
            throw Error(ErrorKind::NumericDomain, "wilcoxon: non-finite difference");
        }
    }
    const auto ranks = signed_rank_magnitudes(diffs);
    WilcoxonResult r;
    r.n = static_cast<int>(ranks.size());
    if (r.n == 0) {
        throw Error(ErrorKind::UndefinedTest, "wilcoxon: all differences are zero");
    }
    if (r.n > kWilcoxonMaxN) {
        throw Error(ErrorKind::Argument, "wilcoxon: exact test supports at most " + std::to_string(kWilcoxonMaxN) +
                                             " nonzero differences (got " + std::to_string(r.n) + ")");
    }
    std::size_t k = 0;
    long plus2 = 0;
    long total2 = 0;
    for (double d : diffs) {
        if (d == 0.0) {
            continue;
        }
        const long r2 = std::lround(2.0 * ranks[k++]);
        total2 += r2;
        if (d > 0.0) {
            plus2 += r2;
        }
    }
    r.w_plus = 0.5 * static_cast<double>(plus2);
    r.w_minus = 0.5 * static_cast<double>(total2 - plus2);
    r.statistic = std::min(r.w_plus, r.w_minus);
    const auto null = wilcoxon_null_distribution(ranks);
    const long t2 = std::min(plus2, total2 - plus2);
    double tail = 0.0;
    for (long s = 0; s <= t2; ++s) {
        tail += null[static_cast<std::size_t>(s)];
    }
    r.p_value = std::min(1.0, 2.0 * tail);
    return r;
}

// ---------------------------------------------------------------- outcomes

LatencyStats latency_stats(std::span<const double> values)
{
    LatencyStats s;
    s.n = static_cast<int>(values.size());
    if (s.n == 0) {
        return s;
    }
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
    if (s.n > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - s.mean) * (v - s.mean);
        }
        s.sd = std::sqrt(ss / (s.n - 1));
    }
    return s;
}

RunMetrics outcome_latency_stats(std::span<const session::TrialRecord> records, std::string run_id)
{
    using session::Outcome;
    if (records.empty()) {
        throw Error(ErrorKind::Argument, "outcome_latency_stats: no trial records");
    }
    RunMetrics m;
    m.run_id = std::move(run_id);
    m.n_trials = static_cast<int>(records.size());
    int on[3] = {0, 0, 0};
    int off[3] = {0, 0, 0};
    std::vector<double> on_lat;
    std::vector<double> off_lat;
    auto bucket = [](Outcome o) { return o == Outcome::Hit ? 0 : (o == Outcome::Miss ? 1 : 2); };
    for (const auto& r : records) {
        ++on[bucket(r.outcome_onset)];
        if (r.outcome_onset == Outcome::Hit) {
            ++m.n_attempted;
            if (r.onset_latency) {
                on_lat.push_back(*r.onset_latency);
            }
            if (r.outcome_offset == Outcome::NotAttempted) {
                throw Error(ErrorKind::Argument, "outcome_latency_stats: onset hit without an offset outcome");
            }
            ++off[bucket(r.outcome_offset)];
            if (r.outcome_offset == Outcome::Hit && r.offset_latency) {
                off_lat.push_back(*r.offset_latency);
            }
        } else if (r.outcome_offset != Outcome::NotAttempted) {
            throw Error(ErrorKind::Argument, "outcome_latency_stats: offset outcome recorded without an onset hit");
        }
    }
    const double n = m.n_trials;
    m.onset = {on[0] / n, on[1] / n, on[2] / n};
    if (m.n_attempted > 0) {
        const double a = m.n_attempted;
        m.offset = {off[0] / a, off[1] / a, off[2] / a};
    }
    m.onset_latency = latency_stats(on_lat);
    m.offset_latency = latency_stats(off_lat);
    return m;
}

// ---------------------------------------------------------------- bootstrap

ConfidenceInterval bootstrap_mean_ci(std::span<const double> values, int resamples, std::uint64_t seed, double level)
{
    if (values.empty() || resamples < 1 || !(level > 0.0 && level < 1.0)) {
        throw Error(ErrorKind::Argument, "bootstrap_mean_ci: need values, resamples >= 1 and level in (0, 1)");
    }
    const auto n = values.size();
    ConfidenceInterval ci;
    ci.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    synth::NormalRng rng(seed);
    std::vector<double> means;
    means.reserve(static_cast<std::size_t>(resamples));
    for (int b = 0; b < resamples; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s += values[static_cast<std::size_t>(rng.bits() % n)];
        }
        means.push_back(s / static_cast<double>(n));
    }
    std::sort(means.begin(), means.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(means.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, means.size() - 1);
        return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
    };
    ci.low = quantile((1.0 - level) / 2.0);
    ci.high = quantile(1.0 - (1.0 - level) / 2.0);
    return ci;
}

} // namespace mibci::analysis
