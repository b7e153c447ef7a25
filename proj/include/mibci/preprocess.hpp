#pragma once

// Causal streaming front end: band-pass -> common-average reference ->
// sliding window -> trace-normalized covariance.

#include <mibci/spd.hpp>

#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mibci::preprocess {

using spd::Matrix;
using spd::SpdMatrix;

struct StreamConfig {
    double fs = 512.0;
    int channels = 16;
    double band_low = 8.0;
    double band_high = 30.0;
    double window_len = 1.0; ///< seconds
    double hop = 0.0625;     ///< seconds

    void validate() const;
    int window_samples() const;
    int hop_samples() const;
};

/// One multichannel sample. `index` is the sample count at fs.
struct EegFrame {
    std::vector<double> samples;
    std::int64_t index = 0;
};

/// Second-order section, a0 normalised to 1.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;

    std::complex<double> response(double freq, double fs) const;
};

struct FilterCoefficients {
    std::vector<Biquad> sections;
    double fs = 0.0;

    std::complex<double> response(double freq) const;
    double magnitude(double freq) const { return std::abs(response(freq)); }
};

/// Butterworth band-pass of the given prototype order (total order 2 * order)
/// as cascaded biquads, bilinear with pre-warping, unit gain at the centre.
FilterCoefficients design_butterworth_bandpass(double low, double high, double fs, int order);

/// The streaming band-pass: 4th-order Butterworth prototype on cfg's band.
FilterCoefficients design_bandpass(const StreamConfig& cfg);

/// Per-channel transposed direct-form II state for a biquad cascade.
class FilterState {
public:
    FilterState(FilterCoefficients coeffs, int channels);

    /// Filters one frame; the returned frame keeps the input index.
    EegFrame step(const EegFrame& frame);
    /// In-place variant on a raw sample buffer of size channels().
    void step_inplace(std::span<double> samples);

    int channels() const { return channels_; }
    const FilterCoefficients& coefficients() const { return coeffs_; }

private:
    FilterCoefficients coeffs_;
    int channels_;
    std::vector<double> state_; // [channel][section][2]
};

/// Subtracts the across-channel mean from every channel.
EegFrame common_average_reference(const EegFrame& frame);
void common_average_reference_inplace(std::span<double> samples);

/// Diagonal loading applied by window_covariance when none is given.
inline constexpr double kDefaultLoading = 1e-5;
/// Windows whose raw energy trace(X^T X) falls below this are rejected.
inline constexpr double kMinWindowEnergy = 1e-20;

/// X^T X / trace, loaded by (1 - eps) S + eps I / C and re-normalised to unit
/// trace. X is window_samples x channels.
SpdMatrix window_covariance(const Matrix& window, double loading = kDefaultLoading);

/// A full window handed out by WindowBuffer, frames [start, end).
struct Window {
    std::int64_t start = 0;
    std::int64_t end = 0;
    Matrix data; ///< rows are frames in chronological order
};

/// Ring buffer of the last window_samples frames. Emits a window once full and
/// then every hop_samples frames: the k-th window covers [k*hop, k*hop + len).
class WindowBuffer {
public:
    WindowBuffer(int window_samples, int hop_samples, int channels);

    std::optional<Window> push(std::span<const double> samples);

    std::int64_t frames_seen() const { return seen_; }

private:
    int length_;
    int hop_;
    int channels_;
    Matrix ring_;
    std::int64_t seen_ = 0;
};

struct WindowCovariance {
    std::int64_t start = 0;
    std::int64_t end = 0;
    SpdMatrix cov;
};

/// filter -> CAR -> window -> covariance for one stream.
class CovarianceStream {
public:
    explicit CovarianceStream(const StreamConfig& cfg, double loading = kDefaultLoading);

    std::optional<WindowCovariance> push(const EegFrame& frame);
    std::optional<WindowCovariance> push(std::span<const double> samples);

    const StreamConfig& config() const { return cfg_; }

private:
    StreamConfig cfg_;
    double loading_;
    FilterState filter_;
    WindowBuffer buffer_;
    std::vector<double> scratch_;
};

} // namespace mibci::preprocess
