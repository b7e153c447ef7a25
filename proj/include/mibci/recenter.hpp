#pragma once

// Whitening references: identity, task running mean, fixation-based.

#include <mibci/decoder.hpp>
#include <mibci/spd.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mibci::recenter {

using spd::SpdMatrix;

enum class ReferenceKind { Identity, Task, Fixation };

std::string to_string(ReferenceKind kind);
ReferenceKind reference_kind_from_string(const std::string& s);

struct RecenterReference {
    ReferenceKind kind = ReferenceKind::Identity;
    SpdMatrix s_ref = SpdMatrix::identity(1);
    int n_samples = 0;
    int run_index = 0;

    static RecenterReference identity(spd::Index dim);
};

struct FixationConfig {
    double trim_frac = 0.20;
    double alpha_id = 0.25;
    double lambda_eig = 0.05;
    double beta_run = 0.30;
    int n_min = 8;

    void validate() const;
};

/// Geodesic running mean: S' = geodesic(S_prev, sigma, 1 / (n + 1)).
/// With `window` > 0 the weight is 1 / min(n + 1, window), a running mean of
/// roughly the last `window` samples; 0 keeps the exact cumulative mean.
RecenterReference task_reference_update(const RecenterReference& prev, const SpdMatrix& sigma, int window = 0);

/// Drops the ceil(frac * n) samples farthest (AIRM) from the log-Euclidean
/// mean, preserving order.
std::vector<SpdMatrix> trim_outliers(std::span<const SpdMatrix> covs, double frac);

/// Trim, log-Euclidean mean, identity shrink, eigenvalue shrink, without the
/// cross-run blend.
SpdMatrix fixation_raw_reference(std::span<const SpdMatrix> fix_covs, const FixationConfig& cfg);

/// Full fixation pipeline. With fewer than n_min samples the previous
/// reference is returned unchanged; a previous fixation reference is
/// blended in the log domain with weight 1 - beta_run.
RecenterReference fit_fixation_reference(std::span<const SpdMatrix> fix_covs, const FixationConfig& cfg,
                                         const std::optional<RecenterReference>& prev);

/// S_ref^{-1/2} sigma S_ref^{-1/2}.
SpdMatrix apply_recenter(const RecenterReference& ref, const SpdMatrix& sigma);

/// Applies one reference to many samples, factoring S_ref once.
class Whitener {
public:
    explicit Whitener(const RecenterReference& ref);
    explicit Whitener(const SpdMatrix& s_ref);
    SpdMatrix operator()(const SpdMatrix& sigma) const;

private:
    SpdMatrix invsqrt_;
};

/// Re-whitens both raw class means by `s_train`.
decoder::ClassPrototypes recenter_prototypes(const SpdMatrix& s_train, const decoder::ClassPrototypes& prototypes);

} // namespace mibci::recenter
