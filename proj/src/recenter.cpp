#include <mibci/recenter.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mibci::recenter {

std::string to_string(ReferenceKind kind)
{
    switch (kind) {
    case ReferenceKind::Identity:
        return "identity";
    case ReferenceKind::Task:
        return "task";
    case ReferenceKind::Fixation:
        return "fixation";
    }
    return "identity";
}

ReferenceKind reference_kind_from_string(const std::string& s)
{
    if (s == "identity") {
        return ReferenceKind::Identity;
    }
    if (s == "task") {
        return ReferenceKind::Task;
    }
    if (s == "fixation") {
        return ReferenceKind::Fixation;
    }
    throw Error(ErrorKind::Argument, "unknown reference kind '" + s + "' (expected identity, task or fixation)");
}

RecenterReference RecenterReference::identity(spd::Index dim)
{
    return RecenterReference{ReferenceKind::Identity, SpdMatrix::identity(dim), 0, 0};
}

void FixationConfig::validate() const
{
    if (!(trim_frac >= 0.0 && trim_frac < 1.0)) {
        throw Error(ErrorKind::Argument, "FixationConfig: trim_frac must lie in [0, 1)");
    }
    if (!(alpha_id >= 0.0 && alpha_id <= 1.0)) {
        throw Error(ErrorKind::Argument, "FixationConfig: alpha_id must lie in [0, 1]");
    }
    if (!(lambda_eig >= 0.0 && lambda_eig <= 1.0)) {
        throw Error(ErrorKind::Argument, "FixationConfig: lambda_eig must lie in [0, 1]");
    }
    if (!(beta_run > 0.0 && beta_run <= 1.0)) {
        throw Error(ErrorKind::Argument, "FixationConfig: beta_run must lie in (0, 1]");
    }
    if (n_min < 1) {
        throw Error(ErrorKind::Argument, "FixationConfig: n_min must be >= 1");
    }
}

RecenterReference task_reference_update(const RecenterReference& prev, const SpdMatrix& sigma, int window)
{
    if (prev.kind == ReferenceKind::Fixation) {
        throw Error(ErrorKind::Argument, "task_reference_update: previous reference must be task or identity");
    }
    if (window < 0) {
        throw Error(ErrorKind::Argument, "task_reference_update: window must be >= 0");
    }
    const bool bootstrap = prev.kind == ReferenceKind::Identity || prev.n_samples == 0;
    if (!bootstrap && prev.s_ref.dim() != sigma.dim()) {
        throw Error(ErrorKind::Shape, "task_reference_update: dimension mismatch");
    }
    RecenterReference next;
    next.kind = ReferenceKind::Task;
    next.run_index = prev.run_index;
    if (bootstrap) {
        next.s_ref = sigma;
        next.n_samples = 1;
        return next;
    }
    int denom = prev.n_samples + 1;
    if (window > 0) {
        denom = std::min(denom, window);
    }
    next.s_ref = spd::geodesic(prev.s_ref, sigma, 1.0 / static_cast<double>(denom));
    next.n_samples = prev.n_samples + 1;
    return next;
}

std::vector<SpdMatrix> trim_outliers(std::span<const SpdMatrix> covs, double frac)
{
    if (covs.empty()) {
        throw Error(ErrorKind::Argument, "trim_outliers: empty input");
    }
    if (!(frac >= 0.0 && frac < 1.0)) {
        throw Error(ErrorKind::Argument, "trim_outliers: frac must lie in [0, 1)");
    }
    const std::size_t n = covs.size();
    const auto remove = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-12));
    if (remove >= n) {
        throw Error(ErrorKind::Argument, "trim_outliers: trimming would remove every sample");
    }
    if (remove == 0) {
        return {covs.begin(), covs.end()};
    }
    const spd::DistanceFrom from(spd::log_euclidean_mean(covs));
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        dist[i] = from(covs[i]);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Farthest first; equal distances drop the later sample.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
    std::vector<bool> dropped(n, false);
    for (std::size_t k = 0; k < remove; ++k) {
        dropped[order[k]] = true;
    }
    std::vector<SpdMatrix> out;
    out.reserve(n - remove);
    for (std::size_t i = 0; i < n; ++i) {
        if (!dropped[i]) {
            out.push_back(covs[i]);
        }
    }
    return out;
}

SpdMatrix fixation_raw_reference(std::span<const SpdMatrix> fix_covs, const FixationConfig& cfg)
{
    cfg.validate();
    const auto kept = trim_outliers(fix_covs, cfg.trim_frac);
    const SpdMatrix mean = spd::log_euclidean_mean(kept);
    return spd::eigenvalue_shrink(spd::identity_shrink(mean, cfg.alpha_id), cfg.lambda_eig);
}

RecenterReference fit_fixation_reference(std::span<const SpdMatrix> fix_covs, const FixationConfig& cfg,
                                         const std::optional<RecenterReference>& prev)
{
    cfg.validate();
    if (static_cast<int>(fix_covs.size()) < cfg.n_min) {
        if (!prev) {
            throw Error(ErrorKind::NoReference, "fit_fixation_reference: " + std::to_string(fix_covs.size()) +
                                                    " fixation windows (< n_min = " + std::to_string(cfg.n_min) +
                                                    ") and no previous reference");
        }
        return *prev;
    }
    SpdMatrix current = fixation_raw_reference(fix_covs, cfg);
    RecenterReference next;
    next.kind = ReferenceKind::Fixation;
    next.n_samples = static_cast<int>(fix_covs.size());
    next.run_index = prev ? prev->run_index + 1 : 0;
    if (prev && prev->kind == ReferenceKind::Fixation) {
        if (prev->s_ref.dim() != current.dim()) {
            throw Error(ErrorKind::Shape, "fit_fixation_reference: previous reference has a different dimension");
        }
        const spd::SymMatrix blended =
            (1.0 - cfg.beta_run) * spd::spd_log(prev->s_ref) + cfg.beta_run * spd::spd_log(current);
        next.s_ref = spd::spd_exp(blended);
    } else {
        next.s_ref = std::move(current);
    }
    return next;
}

SpdMatrix apply_recenter(const RecenterReference& ref, const SpdMatrix& sigma)
{
    return Whitener(ref)(sigma);
}

Whitener::Whitener(const RecenterReference& ref) : Whitener(ref.s_ref) {}

Whitener::Whitener(const SpdMatrix& s_ref) : invsqrt_(spd::spd_sqrt_invsqrt(s_ref).invsqrt) {}

SpdMatrix Whitener::operator()(const SpdMatrix& sigma) const
{
    if (sigma.dim() != invsqrt_.dim()) {
        throw Error(ErrorKind::Shape, "apply_recenter: reference is " + std::to_string(invsqrt_.dim()) +
                                          "-dimensional, sample is " + std::to_string(sigma.dim()));
    }
    return spd::congruence(sigma, invsqrt_);
}

decoder::ClassPrototypes recenter_prototypes(const SpdMatrix& s_train, const decoder::ClassPrototypes& prototypes)
{
    const Whitener w(s_train);
    decoder::ClassPrototypes out = prototypes;
    out.positive = w(prototypes.raw_positive);
    out.negative = w(prototypes.raw_negative);
    out.s_train = s_train;
    return out;
}

} // namespace mibci::recenter
