#include "fedlab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedlab/errors.hpp"
#include "fedlab/parallel.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

namespace {

constexpr double kPairDistanceFloor = 1e-10; // pairs closer than this are skipped
constexpr double kLossFloor = 1e-12;         // tau ratio undefined below this
constexpr double kMarginTol = 1e-12;         // slack for feasibility rechecks

ParamVector ball_point(StreamRng& rng, const ParamVector& center, double radius) {
    std::size_t d = center.dim();
    std::vector<double> dir(d);
    double nsq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        dir[j] = rng.next_normal();
        nsq += dir[j] * dir[j];
    }
    if (nsq == 0.0) {
        dir[0] = 1.0;
        nsq = 1.0;
    }
    double r = radius * std::pow(rng.next_unit(), 1.0 / static_cast<double>(d));
    double scale = r / std::sqrt(nsq);
    std::vector<double> out(d);
    for (std::size_t j = 0; j < d; ++j) {
        out[j] = center[j] + scale * dir[j];
    }
    return ParamVector(std::move(out));
}

ParamVector offset_point(StreamRng& rng, const ParamVector& base, const ParamVector& center, double radius) {
    std::size_t d = base.dim();
    // log-uniform offset length in radius * [10^-2.5, 10^-0.5]
    double scale = radius * std::pow(10.0, -(0.5 + 2.0 * rng.next_unit()));
    std::vector<double> dir(d);
    double nsq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        dir[j] = rng.next_normal();
        nsq += dir[j] * dir[j];
    }
    if (nsq == 0.0) {
        dir[0] = 1.0;
        nsq = 1.0;
    }
    double step = scale / std::sqrt(nsq);
    auto shifted = [&](double sign) {
        std::vector<double> out(d);
        for (std::size_t j = 0; j < d; ++j) {
            out[j] = base[j] + sign * step * dir[j];
        }
        return ParamVector(std::move(out));
    };
    ParamVector u = shifted(1.0);
    if (distance_sq(u, center) > radius * radius) {
        u = shifted(-1.0); // mirror back into the ball
    }
    if (distance_sq(u, center) > radius * radius) {
        // base sits at the boundary in both directions; project onto the ball
        double dist = std::sqrt(distance_sq(u, center));
        std::vector<double> out(d);
        for (std::size_t j = 0; j < d; ++j) {
            out[j] = center[j] + (u[j] - center[j]) * (radius / dist);
        }
        u = ParamVector(std::move(out));
    }
    return u;
}

struct EvalPoint {
    ParamVector x;
    double loss = 0.0;
    ParamVector grad;
};

struct PairSet {
    std::vector<EvalPoint> first;
    std::vector<EvalPoint> second;
};

void check_region(const ObjectiveBundle& bundle, const ProbeRegion& region) {
    if (!(region.radius > 0.0)) {
        throw ProbeError("degenerate probe region (radius 0)");
    }
    if (region.pair_count < 1) {
        throw ProbeError("probe region needs at least one pair");
    }
    if (region.center.dim() != bundle.dim) {
        throw DimensionError("probe region center does not match objective dimension");
    }
}

PairSet sample_and_evaluate(const ObjectiveBundle& bundle, const ProbeRegion& region) {
    check_region(bundle, region);
    std::vector<std::pair<ParamVector, ParamVector>> pairs = sample_region_pairs(region, bundle.dim);
    PairSet set;
    set.first.resize(pairs.size());
    set.second.resize(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t p) {
        set.first[p] = EvalPoint{pairs[p].first, bundle.loss(pairs[p].first), bundle.grad(pairs[p].first)};
        set.second[p] = EvalPoint{pairs[p].second, bundle.loss(pairs[p].second), bundle.grad(pairs[p].second)};
    });
    return set;
}

// One feasibility constraint u*s + v*q >= r with s >= 0, q > 0.
struct HalfPlane {
    double s = 0.0;
    double q = 0.0;
    double r = 0.0;
};

// Minimises u + v over u, v >= 0 subject to the half-planes. Normalised per
// constraint to v >= c - m*u, the feasible boundary is the upper envelope of
// those lines; the optimum sits at u = 0, an envelope vertex, or a zero
// crossing of an envelope line. Candidates are evaluated against the exact
// max over all lines, the envelope only enumerates them.
std::pair<double, double> minimize_sum_two_constants(const std::vector<HalfPlane>& planes) {
    struct Line {
        double m; // slope of v = b + m*u, m <= 0
        double b;
    };
    std::vector<Line> lines;
    lines.reserve(planes.size());
    for (const HalfPlane& h : planes) {
        double c = h.r / h.q;
        if (!(c > 0.0)) {
            continue; // satisfied by u = v = 0
        }
        lines.push_back(Line{-h.s / h.q, c});
    }
    if (lines.empty()) {
        return {0.0, 0.0};
    }
    std::sort(lines.begin(), lines.end(), [](const Line& x, const Line& y) {
        if (x.m != y.m) return x.m < y.m;
        return x.b > y.b;
    });
    // keep one line per slope (max intercept), then build the upper hull
    std::vector<Line> hull;
    for (const Line& l : lines) {
        if (!hull.empty() && hull.back().m == l.m) {
            continue;
        }
        while (hull.size() >= 2) {
            const Line& a = hull[hull.size() - 2];
            const Line& b = hull.back();
            double x_ab = (a.b - b.b) / (b.m - a.m);
            double x_al = (a.b - l.b) / (l.m - a.m);
            if (x_al <= x_ab) {
                hull.pop_back();
            } else {
                break;
            }
        }
        if (hull.size() == 1 && l.b >= hull[0].b) {
            // larger slope and intercept dominates on u >= 0
            hull.pop_back();
        }
        hull.push_back(l);
    }

    auto envelope = [&lines](double u) {
        double best = -std::numeric_limits<double>::infinity();
        for (const Line& l : lines) {
            best = std::max(best, l.b + l.m * u);
        }
        return best;
    };

    std::vector<double> candidates;
    candidates.push_back(0.0);
    for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
        double x = (hull[i].b - hull[i + 1].b) / (hull[i + 1].m - hull[i].m);
        if (x > 0.0 && std::isfinite(x)) {
            candidates.push_back(x);
        }
    }
    for (const Line& l : hull) {
        if (l.m < 0.0 && l.b > 0.0) {
            double x = -l.b / l.m;
            if (std::isfinite(x)) {
                candidates.push_back(x);
            }
        }
    }
    std::sort(candidates.begin(), candidates.end());
    double best_obj = std::numeric_limits<double>::infinity();
    for (double u : candidates) {
        best_obj = std::min(best_obj, u + std::max(0.0, envelope(u)));
    }
    // Tie-break towards the smallest u, with a tolerance covering the
    // floating-point scatter of the normalised constraints (the r/q division
    // amplifies eval noise on short-range pairs). An optimum that is u = 0
    // up to that noise must come out exactly 0.
    double noise = 0.0;
    for (const HalfPlane& h : planes) {
        noise = std::max(noise, (1.0 + std::fabs(h.r)) / h.q);
    }
    double tol = 1e-11 * (1.0 + std::fabs(best_obj)) + 1e-13 * noise;
    for (double u : candidates) {
        double v = std::max(0.0, envelope(u));
        if (u + v <= best_obj + tol) {
            return {u, v};
        }
    }
    return {0.0, std::max(0.0, envelope(0.0))};
}

FitDiagnostics recheck(const std::vector<HalfPlane>& planes, double u, double v, std::size_t samples) {
    FitDiagnostics diag;
    diag.samples_used = samples;
    diag.worst_margin = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < planes.size(); ++i) {
        double margin = planes[i].r - (u * planes[i].s + v * planes[i].q);
        if (margin > diag.worst_margin) {
            diag.worst_margin = margin;
            diag.worst_index = i;
        }
    }
    if (planes.empty()) {
        diag.worst_margin = 0.0;
    }
    return diag;
}

double sqrt_nonneg(double x) {
    return std::sqrt(std::max(x, 0.0));
}

} // namespace

std::vector<std::pair<ParamVector, ParamVector>> sample_region_pairs(const ProbeRegion& region,
                                                                     std::size_t dim) {
    if (!(region.radius > 0.0)) {
        throw ProbeError("degenerate probe region (radius 0)");
    }
    if (region.pair_count < 1) {
        throw ProbeError("probe region needs at least one pair");
    }
    if (region.center.dim() != dim) {
        throw DimensionError("probe region center does not match objective dimension");
    }
    std::vector<std::pair<ParamVector, ParamVector>> pairs(region.pair_count);
    StreamRng rng = StreamRng::keyed(region.seed, {stream_purpose::probe_pairs});
    for (std::size_t p = 0; p < region.pair_count; ++p) {
        // The per-pair draw schedule depends only on the index, so a longer
        // sample extends a shorter one with the same seed.
        ParamVector w = ball_point(rng, region.center, region.radius);
        ParamVector u = (p % 2 == 0) ? ball_point(rng, region.center, region.radius)
                                     : offset_point(rng, w, region.center, region.radius);
        pairs[p] = {std::move(w), std::move(u)};
    }
    return pairs;
}

bool AssumptionConstants::well_formed() const {
    auto ok = [](double x) { return std::isfinite(x) && x >= 0.0; };
    return ok(a) && ok(b) && ok(alpha) && ok(beta) && ok(sigma) && std::isfinite(tau1) &&
           std::isfinite(tau2) && tau1 > 0.0 && tau1 <= tau2;
}

SmoothnessFit estimate_semi_smoothness(const ObjectiveBundle& bundle, const ProbeRegion& region) {
    PairSet set = sample_and_evaluate(bundle, region);
    std::vector<HalfPlane> planes;
    planes.reserve(set.first.size());
    for (std::size_t p = 0; p < set.first.size(); ++p) {
        const EvalPoint& w = set.first[p];
        const EvalPoint& u = set.second[p];
        double dist_sq = distance_sq(w.x, u.x);
        if (dist_sq < kPairDistanceFloor * kPairDistanceFloor) {
            continue;
        }
        double dist = std::sqrt(dist_sq);
        ParamVector delta = axpy(u.x, -1.0, w.x); // U - W
        double residual = u.loss - w.loss - dot(w.grad, delta);
        planes.push_back(HalfPlane{dist * sqrt_nonneg(w.loss), dist_sq, residual});
    }
    auto [a, b] = minimize_sum_two_constants(planes);
    SmoothnessFit fit;
    fit.a = a;
    fit.b = b;
    fit.diag = recheck(planes, a, b, planes.size());
    return fit;
}

LipschitzFit estimate_semi_lipschitz(const ObjectiveBundle& bundle, const ProbeRegion& region) {
    PairSet set = sample_and_evaluate(bundle, region);
    std::vector<HalfPlane> planes;
    planes.reserve(set.first.size());
    for (std::size_t p = 0; p < set.first.size(); ++p) {
        const EvalPoint& w = set.first[p];
        const EvalPoint& u = set.second[p];
        double dist_sq = distance_sq(w.x, u.x);
        if (dist_sq < kPairDistanceFloor * kPairDistanceFloor) {
            continue;
        }
        double dist = std::sqrt(dist_sq);
        double grad_diff_sq = distance_sq(w.grad, u.grad);
        double loss_scale = sqrt_nonneg(std::max(w.loss, u.loss));
        planes.push_back(HalfPlane{dist * loss_scale, dist_sq, grad_diff_sq});
    }
    auto [alpha_sq, beta_sq] = minimize_sum_two_constants(planes);
    LipschitzFit fit;
    fit.alpha = std::sqrt(alpha_sq);
    fit.beta = std::sqrt(beta_sq);
    fit.diag = recheck(planes, alpha_sq, beta_sq, planes.size());
    return fit;
}

NoCriticalFit estimate_no_critical_point(const ObjectiveBundle& bundle, const ProbeRegion& region) {
    PairSet set = sample_and_evaluate(bundle, region);
    std::vector<const EvalPoint*> points;
    points.reserve(2 * set.first.size() + 1);
    for (std::size_t p = 0; p < set.first.size(); ++p) {
        points.push_back(&set.first[p]);
        points.push_back(&set.second[p]);
    }
    // The region center (the initialisation in the pipeline) is probed too.
    EvalPoint center{region.center, bundle.loss(region.center), bundle.grad(region.center)};
    points.push_back(&center);

    double min_ratio = std::numeric_limits<double>::infinity();
    double max_ratio = 0.0;
    std::size_t used = 0;
    for (const EvalPoint* pt : points) {
        if (pt->loss <= kLossFloor) {
            continue; // both sides vanish; ratio undefined
        }
        double ratio = norm_sq(pt->grad) / pt->loss;
        min_ratio = std::min(min_ratio, ratio);
        max_ratio = std::max(max_ratio, ratio);
        ++used;
    }
    if (used == 0) {
        throw ProbeError("probe region at minimum: no point with L above " + std::to_string(kLossFloor));
    }
    NoCriticalFit fit;
    fit.tau1 = std::sqrt(min_ratio);
    fit.tau2 = std::sqrt(max_ratio);
    fit.points_used = used;
    fit.gradient_vanishes = min_ratio <= kLossFloor;
    fit.tau1_below_one = fit.tau1 > 0.0 && fit.tau1 < 1.0;
    return fit;
}

SigmaEstimate estimate_sigma(const Objective& obj, const LabeledDataset& data, const ClientPartition& part,
                             const ProbeRegion& region, std::size_t batch_size, std::size_t resamples,
                             std::size_t point_count) {
    if (resamples < 2) {
        throw ProbeError("sigma estimation needs at least 2 resamples");
    }
    if (point_count < 1) {
        throw ProbeError("sigma estimation needs at least one probe point");
    }
    if (!(region.radius > 0.0)) {
        throw ProbeError("degenerate probe region (radius 0)");
    }
    SigmaEstimate est;
    est.resamples = resamples;
    est.per_client.assign(part.clients(), 0.0);
    std::uint64_t sigma_seed = StreamRng::mix(region.seed ^ stream_purpose::sigma);
    parallel_for(part.clients(), [&](std::size_t c) {
        const Shard& shard = part.shard(c);
        double worst = 0.0;
        for (std::size_t j = 0; j < point_count; ++j) {
            StreamRng point_rng = StreamRng::keyed(region.seed, {stream_purpose::sigma, c, j});
            ParamVector w = ball_point(point_rng, region.center, region.radius);
            std::vector<ParamVector> draws(resamples);
            for (std::size_t m = 0; m < resamples; ++m) {
                BatchSampler sampler(batch_size, sigma_seed, c, j, m);
                draws[m] = stoch_grad(obj, data, shard, w, sampler);
            }
            ParamVector sum = ParamVector::zeros(obj.dim());
            for (const ParamVector& g : draws) {
                sum = axpy(sum, 1.0, g);
            }
            ParamVector mean = axpy(ParamVector::zeros(obj.dim()), 1.0 / static_cast<double>(resamples), sum);
            double acc = 0.0;
            for (const ParamVector& g : draws) {
                acc += distance_sq(g, mean);
            }
            double second_moment = acc / static_cast<double>(resamples - 1);
            worst = std::max(worst, second_moment);
        }
        est.per_client[c] = std::sqrt(worst);
    });
    est.sigma = 0.0;
    for (double s : est.per_client) {
        est.sigma = std::max(est.sigma, s);
    }
    return est;
}

ProbeReport verify_along_trajectory(const AssumptionConstants& constants,
                                    const std::vector<ParamVector>& trajectory,
                                    const ObjectiveBundle& bundle) {
    if (trajectory.size() < 2) {
        throw ProbeError("trajectory verification needs at least 2 points");
    }
    std::vector<EvalPoint> pts(trajectory.size());
    parallel_for(trajectory.size(), [&](std::size_t i) {
        pts[i] = EvalPoint{trajectory[i], bundle.loss(trajectory[i]), bundle.grad(trajectory[i])};
    });

    ProbeReport report;
    report.constants = constants;
    report.samples_used = trajectory.size();
    double worst_smooth = -std::numeric_limits<double>::infinity();
    double worst_lips = -std::numeric_limits<double>::infinity();
    double worst_tau = -std::numeric_limits<double>::infinity();

    auto smooth_margin = [&](const EvalPoint& w, const EvalPoint& u) {
        ParamVector delta = axpy(u.x, -1.0, w.x);
        double dist = std::sqrt(distance_sq(w.x, u.x));
        double lhs = u.loss - w.loss - dot(w.grad, delta);
        double rhs = constants.b * dist * dist + constants.a * dist * sqrt_nonneg(w.loss);
        return lhs - rhs;
    };

    for (std::size_t i = 0; i + 1 < trajectory.size(); ++i) {
        const EvalPoint& w = pts[i];
        const EvalPoint& u = pts[i + 1];
        double dist_sq = distance_sq(w.x, u.x);
        if (dist_sq < kPairDistanceFloor * kPairDistanceFloor) {
            continue; // vacuous for a constant step
        }
        // semi-smoothness is not symmetric; check both orientations
        double m1 = std::max(smooth_margin(w, u), smooth_margin(u, w));
        worst_smooth = std::max(worst_smooth, m1);
        if (m1 > kMarginTol) {
            report.violations.push_back(Violation{Inequality::SemiSmooth, i, m1});
        }
        double dist = std::sqrt(dist_sq);
        double lhs = distance_sq(w.grad, u.grad);
        double rhs = constants.beta * constants.beta * dist_sq +
                     constants.alpha * constants.alpha * dist * sqrt_nonneg(std::max(w.loss, u.loss));
        double m2 = lhs - rhs;
        worst_lips = std::max(worst_lips, m2);
        if (m2 > kMarginTol) {
            report.violations.push_back(Violation{Inequality::SemiLipschitz, i, m2});
        }
    }
    for (std::size_t i = 0; i < trajectory.size(); ++i) {
        double gn = norm_sq(pts[i].grad);
        double lower = constants.tau1 * constants.tau1 * pts[i].loss - gn;
        double upper = gn - constants.tau2 * constants.tau2 * pts[i].loss;
        worst_tau = std::max(worst_tau, std::max(lower, upper));
        if (lower > kMarginTol) {
            report.violations.push_back(Violation{Inequality::NoCriticalLower, i, lower});
        }
        if (upper > kMarginTol) {
            report.violations.push_back(Violation{Inequality::NoCriticalUpper, i, upper});
        }
    }
    // A trajectory with no admissible pair (all points equal) is vacuous.
    report.worst_smooth_margin = std::isfinite(worst_smooth) ? worst_smooth : 0.0;
    report.worst_lipschitz_margin = std::isfinite(worst_lips) ? worst_lips : 0.0;
    report.worst_tau_margin = std::isfinite(worst_tau) ? worst_tau : 0.0;
    return report;
}

} // namespace fedlab
