#pragma once

#include <cstdint>
#include <vector>

#include "fedlab/numerics.hpp"
#include "fedlab/objectives.hpp"

namespace fedlab {

// The tuple (a, b, alpha, beta, tau1, tau2, sigma) governing every bound:
//   semi-smoothness      L(U) <= L(W) + <grad L(W), U-W> + b|W-U|^2 + a|W-U| L(W)^(1/2)
//   semi-Lipschitz       |grad L(W) - grad L(U)|^2 <= beta^2 |W-U|^2
//                          + alpha^2 |W-U| max{L(W), L(U)}^(1/2)
//   no critical point    tau1^2 L(U) <= |grad L(U)|^2 <= tau2^2 L(U)
//   sigma                max over clients of the stochastic-gradient std dev.
struct AssumptionConstants {
    double a = 0.0;
    double b = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double tau1 = 0.0;
    double tau2 = 0.0;
    double sigma = 0.0;

    // 0 < tau1 <= tau2, everything finite and nonnegative. tau1 = 0 is how a
    // failed no-critical-point assumption is reported, hence a query rather
    // than a constructor invariant.
    bool well_formed() const;
};

// Sampling ball for the probes: pair_count pairs inside the ball of the
// given radius around center, drawn from the stream keyed by seed. Half the
// pairs are independent ball points, half share a point with a short-range
// offset so kink-scale behaviour is sampled too.
struct ProbeRegion {
    ParamVector center;
    double radius = 1.0;
    std::size_t pair_count = 2048;
    std::uint64_t seed = 7;
};

struct FitDiagnostics {
    std::size_t samples_used = 0;
    // max over the fitting sample of (required - provided); feasibility of
    // the fit means this never exceeds ~1e-12 in absolute terms.
    double worst_margin = 0.0;
    std::size_t worst_index = 0;
};

struct SmoothnessFit {
    double a = 0.0;
    double b = 0.0;
    FitDiagnostics diag;
};

struct LipschitzFit {
    double alpha = 0.0;
    double beta = 0.0;
    FitDiagnostics diag;
};

struct NoCriticalFit {
    double tau1 = 0.0;
    double tau2 = 0.0;
    std::size_t points_used = 0;
    // true when some probed point has a vanishing gradient at L > 0; the
    // assumption fails there and tau1 is reported as measured (0).
    bool gradient_vanishes = false;
    // Definition-range condition 0 < tau1 < 1, reported, never clamped.
    bool tau1_below_one = false;
};

struct SigmaEstimate {
    double sigma = 0.0;
    std::vector<double> per_client;
    std::size_t resamples = 0;
};

// The pair sample the estimators evaluate: deterministic in (seed,
// pair_count), prefix-stable under enlargement. Exposed so independent
// sweep oracles can re-derive constants from the same sample.
std::vector<std::pair<ParamVector, ParamVector>> sample_region_pairs(const ProbeRegion& region,
                                                                     std::size_t dim);

// Smallest (a, b) under the a + b objective such that the semi-smoothness
// inequality holds on every sampled pair. Each pair induces a half-plane in
// (a, b); the fit minimises over the feasible envelope.
SmoothnessFit estimate_semi_smoothness(const ObjectiveBundle& bundle, const ProbeRegion& region);

// Same construction in (alpha^2, beta^2) space, minimising alpha^2 + beta^2.
LipschitzFit estimate_semi_lipschitz(const ObjectiveBundle& bundle, const ProbeRegion& region);

// tau1^2 / tau2^2 are the min / max over sampled points of |grad L|^2 / L;
// points with L <= 1e-12 are skipped (both sides of the inequality vanish).
NoCriticalFit estimate_no_critical_point(const ObjectiveBundle& bundle, const ProbeRegion& region);

// Per client: empirical centered second moment of stoch_grad over
// `resamples` batches at `point_count` sampled parameter points; sigma is
// the max over clients (and points) of the square root.
SigmaEstimate estimate_sigma(const Objective& obj, const LabeledDataset& data, const ClientPartition& part,
                             const ProbeRegion& region, std::size_t batch_size, std::size_t resamples,
                             std::size_t point_count);

enum class Inequality {
    SemiSmooth,
    SemiLipschitz,
    NoCriticalLower,
    NoCriticalUpper,
};

struct Violation {
    Inequality which;
    std::size_t index; // trajectory position (pair start or point)
    double margin;     // LHS - RHS, positive = violated
};

// Re-checks the three defining inequalities with the given constants on
// every consecutive pair and every point of a trajectory. Violations are
// data, not errors.
struct ProbeReport {
    AssumptionConstants constants;
    std::vector<Violation> violations;
    double worst_smooth_margin = 0.0;
    double worst_lipschitz_margin = 0.0;
    double worst_tau_margin = 0.0;
    std::size_t samples_used = 0;
};

ProbeReport verify_along_trajectory(const AssumptionConstants& constants,
                                    const std::vector<ParamVector>& trajectory,
                                    const ObjectiveBundle& bundle);

} // namespace fedlab
