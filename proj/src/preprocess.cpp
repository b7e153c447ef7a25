#include <mibci/preprocess.hpp>

#include <cmath>
#include <numbers>
#include <string>

namespace mibci::preprocess {

namespace {

bool is_integral(double x)
{
    return std::abs(x - std::round(x)) < 1e-9;
}

} // namespace

void StreamConfig::validate() const
{
    if (!(fs > 0.0)) {
        throw Error(ErrorKind::Argument, "StreamConfig: fs must be positive");
    }
    if (channels < 1) {
        throw Error(ErrorKind::Argument, "StreamConfig: need at least one channel");
    }
    if (!(band_low > 0.0 && band_low < band_high && band_high < fs / 2.0)) {
        throw Error(ErrorKind::Argument, "StreamConfig: band must satisfy 0 < low < high < fs/2");
    }
    if (!(window_len > 0.0) || !is_integral(window_len * fs)) {
        throw Error(ErrorKind::Argument, "StreamConfig: window_len * fs must be a positive integer");
    }
    if (!(hop > 0.0) || !is_integral(hop * fs)) {
        throw Error(ErrorKind::Argument, "StreamConfig: hop * fs must be a positive integer");
    }
}

int StreamConfig::window_samples() const
{
    return static_cast<int>(std::lround(window_len * fs));
}

int StreamConfig::hop_samples() const
{
    return static_cast<int>(std::lround(hop * fs));
}

// ---------------------------------------------------------------- design

std::complex<double> Biquad::response(double freq, double fs) const
{
    const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * freq / fs);
    const std::complex<double> z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

std::complex<double> FilterCoefficients::response(double freq) const
{
    std::complex<double> h = 1.0;
    for (const auto& s : sections) {
        h *= s.response(freq, fs);
    }
    return h;
}

FilterCoefficients design_butterworth_bandpass(double low, double high, double fs, int order)
{
    if (!(fs > 0.0) || !(low > 0.0 && low < high && high < fs / 2.0)) {
        throw Error(ErrorKind::Argument, "design_bandpass: band (" + std::to_string(low) + ", " +
                                             std::to_string(high) + ") Hz is infeasible at fs " + std::to_string(fs));
    }
    if (order < 1) {
        throw Error(ErrorKind::Argument, "design_bandpass: order must be >= 1");
    }
    using cd = std::complex<double>;
    const double pi = std::numbers::pi;
    const double k = 2.0 * fs;
    const double w1 = k * std::tan(pi * low / fs);
    const double w2 = k * std::tan(pi * high / fs);
    const double w0 = std::sqrt(w1 * w2);
    const double bw = w2 - w1;
    const double centre = fs / pi * std::atan(w0 / k);

    FilterCoefficients out;
    out.fs = fs;
    for (int i = 1; i <= order; ++i) {
        const cd proto = std::polar(1.0, pi * (2.0 * i + order - 1.0) / (2.0 * order));
        const cd half = proto * bw / 2.0;
        const cd root = std::sqrt(half * half - w0 * w0);
        for (const cd s : {half + root, half - root}) {
            if (s.imag() < 0.0) {
                continue; // conjugate partner covered by the upper-half pole
            }
            const cd z = (k + s) / (k - s);
            Biquad q;
            q.b0 = 1.0;
            q.b1 = 0.0;
            q.b2 = -1.0;
            q.a1 = -2.0 * z.real();
            q.a2 = std::norm(z);
            const double g = 1.0 / std::abs(q.response(centre, fs));
            q.b0 *= g;
            q.b2 *= g;
            out.sections.push_back(q);
        }
    }
    return out;
}

FilterCoefficients design_bandpass(const StreamConfig& cfg)
{
    return design_butterworth_bandpass(cfg.band_low, cfg.band_high, cfg.fs, 4);
}

// ---------------------------------------------------------------- filtering

FilterState::FilterState(FilterCoefficients coeffs, int channels)
    : coeffs_(std::move(coeffs)), channels_(channels),
      state_(static_cast<std::size_t>(channels) * coeffs_.sections.size() * 2, 0.0)
{
    if (channels < 1) {
        throw Error(ErrorKind::Argument, "FilterState: need at least one channel");
    }
}

void FilterState::step_inplace(std::span<double> samples)
{
    if (samples.size() != static_cast<std::size_t>(channels_)) {
        throw Error(ErrorKind::Shape, "filter_step: expected " + std::to_string(channels_) + " channels, got " +
                                          std::to_string(samples.size()));
    }
    const std::size_t nsec = coeffs_.sections.size();
    for (std::size_t c = 0; c < samples.size(); ++c) {
        double x = samples[c];
        double* st = state_.data() + c * nsec * 2;
        for (std::size_t s = 0; s < nsec; ++s) {
            const Biquad& q = coeffs_.sections[s];
            const double y = q.b0 * x + st[0];
            st[0] = q.b1 * x - q.a1 * y + st[1];
            st[1] = q.b2 * x - q.a2 * y;
            x = y;
            st += 2;
        }
        samples[c] = x;
    }
}

EegFrame FilterState::step(const EegFrame& frame)
{
    EegFrame out = frame;
    step_inplace(out.samples);
    return out;
}

void common_average_reference_inplace(std::span<double> samples)
{
    if (samples.size() < 2) {
        throw Error(ErrorKind::Shape, "common_average_reference: need at least two channels");
    }
    double mean = 0.0;
    for (double v : samples) {
        mean += v;
    }
    mean /= static_cast<double>(samples.size());
    for (double& v : samples) {
        v -= mean;
    }
}

EegFrame common_average_reference(const EegFrame& frame)
{
    EegFrame out = frame;
    common_average_reference_inplace(out.samples);
    return out;
}

// ---------------------------------------------------------------- windows

SpdMatrix window_covariance(const Matrix& window, double loading)
{
    if (window.rows() < 1 || window.cols() < 1) {
        throw Error(ErrorKind::Shape, "window_covariance: empty window");
    }
    if (!(loading >= 0.0 && loading <= 1.0)) {
        throw Error(ErrorKind::Argument, "window_covariance: loading must lie in [0, 1]");
    }
    if (!window.allFinite()) {
        throw Error(ErrorKind::NumericDomain, "window_covariance: non-finite samples");
    }
    const Eigen::Index c = window.cols();
    Matrix gram = Matrix::Zero(c, c);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(window.transpose());
    gram = gram.selfadjointView<Eigen::Lower>();
    const double energy = gram.trace();
    if (!(energy >= kMinWindowEnergy)) {
        throw Error(ErrorKind::DegenerateInput, "window_covariance: window has (near) zero energy");
    }
    Matrix s = gram / energy;
    s = (1.0 - loading) * s + (loading / static_cast<double>(c)) * Matrix::Identity(c, c);
    s /= s.trace();
    return SpdMatrix(spd::symmetrize(s));
}

WindowBuffer::WindowBuffer(int window_samples, int hop_samples, int channels)
    : length_(window_samples), hop_(hop_samples), channels_(channels), ring_(Matrix::Zero(window_samples, channels))
{
    if (window_samples < 1 || hop_samples < 1 || channels < 1) {
        throw Error(ErrorKind::Argument, "WindowBuffer: lengths must be positive");
    }
}

std::optional<Window> WindowBuffer::push(std::span<const double> samples)
{
    if (samples.size() != static_cast<std::size_t>(channels_)) {
        throw Error(ErrorKind::Shape, "WindowBuffer: channel-count mismatch");
    }
    const Eigen::Index slot = static_cast<Eigen::Index>(seen_ % length_);
    for (int c = 0; c < channels_; ++c) {
        ring_(slot, c) = samples[static_cast<std::size_t>(c)];
    }
    ++seen_;
    if (seen_ < length_ || (seen_ - length_) % hop_ != 0) {
        return std::nullopt;
    }
    Window w;
    w.end = seen_;
    w.start = seen_ - length_;
    w.data.resize(length_, channels_);
    const Eigen::Index oldest = static_cast<Eigen::Index>(seen_ % length_);
    const Eigen::Index tail = length_ - oldest;
    w.data.topRows(tail) = ring_.bottomRows(tail);
    if (oldest > 0) {
        w.data.bottomRows(oldest) = ring_.topRows(oldest);
    }
    return w;
}

CovarianceStream::CovarianceStream(const StreamConfig& cfg, double loading)
    : cfg_((cfg.validate(), cfg)), loading_(loading), filter_(design_bandpass(cfg), cfg.channels),
      buffer_(cfg.window_samples(), cfg.hop_samples(), cfg.channels), scratch_(static_cast<std::size_t>(cfg.channels))
{
}

std::optional<WindowCovariance> CovarianceStream::push(std::span<const double> samples)
{
    if (samples.size() != scratch_.size()) {
        throw Error(ErrorKind::Shape, "CovarianceStream: expected " + std::to_string(scratch_.size()) +
                                          " channels, got " + std::to_string(samples.size()));
    }
    std::copy(samples.begin(), samples.end(), scratch_.begin());
    filter_.step_inplace(scratch_);
    if (scratch_.size() >= 2) {
        common_average_reference_inplace(scratch_);
    }
    auto window = buffer_.push(scratch_);
    if (!window) {
        return std::nullopt;
    }
    return WindowCovariance{window->start, window->end, window_covariance(window->data, loading_)};
}

std::optional<WindowCovariance> CovarianceStream::push(const EegFrame& frame)
{
    return push(std::span<const double>(frame.samples));
}

} // namespace mibci::preprocess
