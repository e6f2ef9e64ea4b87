#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/engine.hpp"
#include "fedlab/planner.hpp"
#include "fedlab/probes.hpp"

namespace fedlab {

// The recorded scalars of one run, as they appear row by row in a run CSV:
// index r ranges over 0..R with the state at U^r, and the xi columns of row
// r describe the update launched from U^r (zero on the final row, where no
// update happens). All checks work on this representation so that verifying
// a CSV and verifying an in-memory trajectory are the same computation.
struct RunSeries {
    std::vector<double> loss;
    std::vector<double> grad_norm_sq;
    std::vector<double> xi_pre;
    std::vector<double> xi_post;
    bool full_batch = false;
    std::uint64_t seed = 0;
    std::string config_hash;
};

RunSeries series_from_trajectory(const Trajectory& traj);

// Tolerance policy: expectation-based claims compare the seed-mean against
// bound * 1.05; deterministic claims (full batch) use 1e-9 absolute slack.
inline constexpr double kSeedMeanSlackFactor = 1.05;
inline constexpr double kDeterministicSlack = 1e-9;

struct EnvelopeRow {
    std::size_t round = 0;
    double mean_gap = 0.0;
    double bound = 0.0;
    double slack = 0.0; // bound - mean_gap
    bool satisfied = true;
};

struct EnvelopeReport {
    std::vector<EnvelopeRow> rows;
    std::size_t seeds_used = 0;
    std::optional<std::size_t> first_violation;
    bool deterministic = false;
    bool pass = true;
};

// Seed-mean gap against (1 - lambda1)^r * gap0 + 2 lambda2 at every round.
// All series must share length and config hash.
EnvelopeReport check_envelope(const std::vector<RunSeries>& runs, const RatePlan& plan, double l_star);

struct GdContractionRow {
    std::size_t step = 0;
    double gap = 0.0;
    double next_gap = 0.0;
    double allowed = 0.0; // (1 - lambda) * gap
    bool satisfied = true;
};

struct GdContractionReport {
    bool vacuous = false;
    std::string vacuous_reason;
    double lambda = 0.0;
    std::vector<GdContractionRow> rows;
    std::optional<std::size_t> first_violation;
    double worst_factor = 0.0; // max observed gap ratio
    bool pass = true;
};

// Per-step check of gap_{t+1} <= (1 - 0.1 eta tau1^2) gap_t. Vacuous when
// eta exceeds the proposition's ceiling or 0.5 tau1^2 < a tau2.
GdContractionReport check_gd_contraction(const RunSeries& run, double eta,
                                         const AssumptionConstants& constants, double l_star);

struct DriftRow {
    std::size_t round = 0;
    double xi_post = 0.0;
    double bound_tight = 0.0;
    double bound_stated = 0.0;
    bool ok_tight = true;
    bool ok_stated = true;
    bool tight_le_stated = true;
};

struct DriftReport {
    bool vacuous = false;
    std::string vacuous_reason;
    std::vector<DriftRow> rows;
    std::optional<std::size_t> first_violation;
    bool pass = true;
};

// xi_post per round against both forms of the bounded-drift lemma:
//   tight:  (20 eta_l^2 + 40 K^2 eta_l^2 tau2^2) L(U) + 20 K eta_l^2 sigma^2
//   stated: 50 eta_l^2 (1 + K^2 tau2^2 L(U) + K sigma^2)
// Vacuous unless eta_l < min{1/(alpha^2 K), 1/(2 beta K)}.
DriftReport check_drift_bound(const RunSeries& run, const AssumptionConstants& constants, double eta_l,
                              std::size_t local_steps, double sigma);

// Envelope bound value for a round; also used to fill the CSV column.
double envelope_bound(const RatePlan& plan, double initial_gap, std::size_t round);

// Tight drift bound for a round's starting loss; fills the CSV column.
double drift_bound_tight(double loss, double eta_l, std::size_t local_steps, double tau2, double sigma);

} // namespace fedlab
