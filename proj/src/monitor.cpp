#include "fedlab/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedlab/errors.hpp"

namespace fedlab {

RunSeries series_from_trajectory(const Trajectory& traj) {
    RunSeries s;
    s.full_batch = traj.config.full_batch;
    s.seed = traj.config.master_seed;
    s.loss.reserve(traj.rounds.size() + 1);
    for (const RoundRecord& r : traj.rounds) {
        s.loss.push_back(r.loss);
        s.grad_norm_sq.push_back(r.grad_norm_sq);
        s.xi_pre.push_back(r.xi_pre);
        s.xi_post.push_back(r.xi_post);
    }
    s.loss.push_back(traj.final_loss);
    s.grad_norm_sq.push_back(traj.final_grad_norm_sq);
    s.xi_pre.push_back(0.0);
    s.xi_post.push_back(0.0);
    return s;
}

double envelope_bound(const RatePlan& plan, double initial_gap, std::size_t round) {
    return std::pow(1.0 - plan.lambda1, static_cast<double>(round)) * initial_gap + 2.0 * plan.lambda2;
}

double drift_bound_tight(double loss, double eta_l, std::size_t local_steps, double tau2, double sigma) {
    double k = static_cast<double>(local_steps);
    double e2 = eta_l * eta_l;
    return (20.0 * e2 + 40.0 * k * k * e2 * tau2 * tau2) * loss + 20.0 * k * e2 * sigma * sigma;
}

EnvelopeReport check_envelope(const std::vector<RunSeries>& runs, const RatePlan& plan, double l_star) {
    if (runs.empty()) {
        throw ConfigError("envelope check: no runs supplied");
    }
    std::size_t len = runs[0].loss.size();
    bool deterministic = true;
    for (const RunSeries& r : runs) {
        if (r.loss.size() != len) {
            throw ConfigError("envelope check: runs have mismatched lengths");
        }
        if (r.config_hash != runs[0].config_hash) {
            throw ConfigError("envelope check: runs come from different configs");
        }
        deterministic = deterministic && r.full_batch;
    }
    double gap0 = 0.0;
    for (const RunSeries& r : runs) {
        gap0 += r.loss[0] - l_star;
    }
    gap0 /= static_cast<double>(runs.size());

    EnvelopeReport report;
    report.seeds_used = runs.size();
    report.deterministic = deterministic;
    report.rows.reserve(len);
    for (std::size_t r = 0; r < len; ++r) {
        EnvelopeRow row;
        row.round = r;
        double mean = 0.0;
        for (const RunSeries& run : runs) {
            mean += run.loss[r] - l_star;
        }
        mean /= static_cast<double>(runs.size());
        row.mean_gap = mean;
        row.bound = envelope_bound(plan, gap0, r);
        row.slack = row.bound - mean;
        row.satisfied = deterministic ? (mean <= row.bound + kDeterministicSlack)
                                      : (mean <= row.bound * kSeedMeanSlackFactor);
        if (!row.satisfied && !report.first_violation.has_value()) {
            report.first_violation = r;
            report.pass = false;
        }
        report.rows.push_back(row);
    }
    return report;
}

GdContractionReport check_gd_contraction(const RunSeries& run, double eta,
                                         const AssumptionConstants& constants, double l_star) {
    GdContractionReport report;
    double tau1_sq = constants.tau1 * constants.tau1;
    if (!(0.5 * tau1_sq >= constants.a * constants.tau2)) {
        report.vacuous = true;
        report.vacuous_reason = "precondition 0.5 tau1^2 >= a tau2 violated";
        return report;
    }
    double ceiling = constants.b * constants.tau2 * constants.tau2 > 0.0
                         ? tau1_sq / (10.0 * constants.b * constants.tau2 * constants.tau2)
                         : std::numeric_limits<double>::infinity();
    if (eta > ceiling) {
        report.vacuous = true;
        report.vacuous_reason = "eta above the proposition's ceiling";
        return report;
    }
    report.lambda = 0.1 * eta * tau1_sq;
    double factor = 1.0 - report.lambda;
    for (std::size_t t = 0; t + 1 < run.loss.size(); ++t) {
        GdContractionRow row;
        row.step = t;
        row.gap = run.loss[t] - l_star;
        row.next_gap = run.loss[t + 1] - l_star;
        row.allowed = factor * row.gap;
        row.satisfied = row.next_gap <= row.allowed + kDeterministicSlack;
        if (row.gap > 0.0) {
            report.worst_factor = std::max(report.worst_factor, row.next_gap / row.gap);
        }
        if (!row.satisfied && !report.first_violation.has_value()) {
            report.first_violation = t;
            report.pass = false;
        }
        report.rows.push_back(row);
    }
    return report;
}

DriftReport check_drift_bound(const RunSeries& run, const AssumptionConstants& constants, double eta_l,
                              std::size_t local_steps, double sigma) {
    DriftReport report;
    double k = static_cast<double>(local_steps);
    double limit_alpha = constants.alpha > 0.0 ? 1.0 / (constants.alpha * constants.alpha * k)
                                               : std::numeric_limits<double>::infinity();
    double limit_beta = constants.beta > 0.0 ? 1.0 / (2.0 * constants.beta * k)
                                             : std::numeric_limits<double>::infinity();
    if (!(eta_l < std::min(limit_alpha, limit_beta))) {
        report.vacuous = true;
        report.vacuous_reason = "eta_l outside the lemma's rate condition";
        return report;
    }
    double e2 = eta_l * eta_l;
    double tau2_sq = constants.tau2 * constants.tau2;
    // xi columns describe the update launched from row r; the final row has
    // no update and is skipped.
    for (std::size_t r = 0; r + 1 < run.loss.size(); ++r) {
        DriftRow row;
        row.round = r;
        row.xi_post = run.xi_post[r];
        row.bound_tight = drift_bound_tight(run.loss[r], eta_l, local_steps, constants.tau2, sigma);
        row.bound_stated = 50.0 * e2 * (1.0 + k * k * tau2_sq * run.loss[r] + k * sigma * sigma);
        row.ok_tight = row.xi_post <= row.bound_tight + kDeterministicSlack;
        row.ok_stated = row.xi_post <= row.bound_stated + kDeterministicSlack;
        row.tight_le_stated = row.bound_tight <= row.bound_stated + kDeterministicSlack;
        if ((!row.ok_tight || !row.ok_stated) && !report.first_violation.has_value()) {
            report.first_violation = r;
            report.pass = false;
        }
        report.rows.push_back(row);
    }
    return report;
}

} // namespace fedlab
