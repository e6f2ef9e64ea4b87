#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "fedlab/errors.hpp"
#include "fedlab/objectives.hpp"
#include "fedlab/probes.hpp"
#include "fedlab/rng.hpp"

using namespace fedlab;

namespace {

// Closed-form pure quadratic 0.5*||w - c||^2 as a probe target.
ObjectiveBundle quadratic_bundle(const ParamVector& center) {
    ObjectiveBundle b;
    b.dim = center.dim();
    b.loss = [center](const ParamVector& w) { return 0.5 * distance_sq(w, center); };
    b.grad = [center](const ParamVector& w) { return axpy(w, -1.0, center); };
    return b;
}

ObjectiveBundle scaled_bundle(const ObjectiveBundle& base, double c) {
    ObjectiveBundle b;
    b.dim = base.dim;
    b.loss = [base, c](const ParamVector& w) { return c * base.loss(w); };
    b.grad = [base, c](const ParamVector& w) {
        return axpy(ParamVector::zeros(base.dim), c, base.grad(w));
    };
    return b;
}

ParamVector constant_vec(std::size_t dim, double value) {
    return ParamVector(std::vector<double>(dim, value));
}

ProbeRegion region_around(const ParamVector& center, double radius, std::size_t pairs,
                          std::uint64_t seed) {
    return ProbeRegion{center, radius, pairs, seed};
}

LabeledDataset random_dataset(std::size_t n, std::size_t d, std::uint64_t seed) {
    StreamRng rng(seed);
    std::vector<double> xs(n * d), ys(n);
    for (double& v : xs) {
        v = rng.next_normal() / std::sqrt(static_cast<double>(d));
    }
    for (double& v : ys) {
        v = rng.next_normal();
    }
    return LabeledDataset(d, std::move(xs), std::move(ys));
}

// Interpolating least-squares instance: y = <x, w_true>. Features are kept
// small so the Gram curvature stays below 1 and the probe region around
// w_true reaches losses well under the pair distances.
LabeledDataset interpolating_linear(std::size_t n, std::size_t d, const ParamVector& w_true,
                                    std::uint64_t seed) {
    StreamRng rng(seed);
    std::vector<double> xs(n * d), ys(n);
    for (double& v : xs) {
        v = 0.5 * rng.next_normal() / std::sqrt(static_cast<double>(d));
    }
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            acc += xs[i * d + j] * w_true[j];
        }
        ys[i] = acc;
    }
    return LabeledDataset(d, std::move(xs), std::move(ys));
}

// Client-weighted Gram matrix H = (1/N) sum_c X_c^T X_c, an independent
// arithmetic route to the least-squares curvature.
std::vector<double> gram_matrix(const LabeledDataset& data, const ClientPartition& part) {
    std::size_t d = data.d();
    std::vector<double> h(d * d, 0.0);
    for (std::size_t c = 0; c < part.clients(); ++c) {
        for (std::size_t i : part.shard(c)) {
            const double* row = data.x_row(i);
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t b = 0; b < d; ++b) {
                    h[a * d + b] += row[a] * row[b] / static_cast<double>(part.clients());
                }
            }
        }
    }
    return h;
}

double quad_form(const std::vector<double>& h, const ParamVector& v) {
    std::size_t d = v.dim();
    double acc = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
            acc += v[a] * h[a * d + b] * v[b];
        }
    }
    return acc;
}

std::vector<double> mat_vec(const std::vector<double>& h, const ParamVector& v) {
    std::size_t d = v.dim();
    std::vector<double> out(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
            out[a] += h[a * d + b] * v[b];
        }
    }
    return out;
}

} // namespace

TEST_CASE("quadratic semi-smoothness fit is exact") {
    ParamVector center = constant_vec(8, 0.25);
    ObjectiveBundle bundle = quadratic_bundle(center);
    // init-style region center sqrt(2) away from the minimum
    ParamVector probe_center = axpy(center, 1.0, constant_vec(8, 0.5));
    SmoothnessFit fit = estimate_semi_smoothness(bundle, region_around(probe_center, 1.0, 2048, 7));
    CHECK(fit.a == 0.0);
    CHECK(fit.b == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(fit.diag.worst_margin <= 1e-12);
}

TEST_CASE("quadratic semi-Lipschitz fit is exact") {
    ParamVector center = constant_vec(8, -0.5);
    ObjectiveBundle bundle = quadratic_bundle(center);
    ParamVector probe_center = axpy(center, 1.0, constant_vec(8, 0.5));
    LipschitzFit fit = estimate_semi_lipschitz(bundle, region_around(probe_center, 1.0, 2048, 11));
    CHECK(fit.alpha <= 1e-9);
    CHECK(fit.beta == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fit.diag.worst_margin <= 1e-12);
}

TEST_CASE("quadratic no-critical-point fit gives tau^2 = 2 exactly") {
    ParamVector center = constant_vec(6, 1.0);
    ObjectiveBundle bundle = quadratic_bundle(center);
    ParamVector probe_center = axpy(center, 1.4142135623730951, constant_vec(6, 1.0 / std::sqrt(6.0)));
    NoCriticalFit fit = estimate_no_critical_point(bundle, region_around(probe_center, 1.0, 1024, 3));
    CHECK(fit.tau1 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(fit.tau2 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(!fit.gradient_vanishes);
    // tau1 = sqrt(2) > 1: outside the definition's stated range, reported as is
    CHECK(!fit.tau1_below_one);
}

TEST_CASE("linear-ls fits match a brute-force pair sweep over the same sample") {
    std::size_t d = 4, n = 24;
    ParamVector w_true({0.3, -0.2, 0.5, 0.1});
    LabeledDataset data = interpolating_linear(n, d, w_true, 91);
    ClientPartition part = ClientPartition::contiguous(n, 3);
    LinearLeastSquares obj(d);
    ObjectiveBundle bundle = global_bundle(obj, data, part);
    std::vector<double> h = gram_matrix(data, part);

    ParamVector probe_center = axpy(w_true, 0.2, constant_vec(d, 0.5));
    ProbeRegion region = region_around(probe_center, 1.0, 2048, 17);

    SUBCASE("semi-smoothness: a = 0, b = max Rayleigh/2 over sampled pairs") {
        SmoothnessFit fit = estimate_semi_smoothness(bundle, region);
        double brute = 0.0;
        for (const auto& [w, u] : sample_region_pairs(region, d)) {
            ParamVector delta = axpy(u, -1.0, w);
            double q = norm_sq(delta);
            if (q < 1e-20) {
                continue;
            }
            brute = std::max(brute, 0.5 * quad_form(h, delta) / q);
        }
        CHECK(fit.a == 0.0);
        CHECK(fit.b == doctest::Approx(brute).epsilon(1e-8));
    }

    SUBCASE("semi-Lipschitz: alpha = 0, beta^2 = max |H delta|^2/|delta|^2") {
        LipschitzFit fit = estimate_semi_lipschitz(bundle, region);
        double brute = 0.0;
        for (const auto& [w, u] : sample_region_pairs(region, d)) {
            ParamVector delta = axpy(u, -1.0, w);
            double q = norm_sq(delta);
            if (q < 1e-20) {
                continue;
            }
            ParamVector hd(mat_vec(h, delta));
            brute = std::max(brute, norm_sq(hd) / q);
        }
        CHECK(fit.alpha <= 1e-9);
        CHECK(fit.beta * fit.beta == doctest::Approx(brute).epsilon(1e-9));
    }

    SUBCASE("no-critical-point: Rayleigh sweep over sampled residual directions") {
        NoCriticalFit fit = estimate_no_critical_point(bundle, region);
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        auto ratio_at = [&](const ParamVector& w) {
            // independent route: L and grad from the Gram form around w_true
            ParamVector delta = axpy(w, -1.0, w_true);
            double loss = 0.5 * quad_form(h, delta);
            if (loss <= 1e-12) {
                return;
            }
            ParamVector grad(mat_vec(h, delta));
            double r = norm_sq(grad) / loss;
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        };
        for (const auto& [w, u] : sample_region_pairs(region, d)) {
            ratio_at(w);
            ratio_at(u);
        }
        ratio_at(probe_center);
        CHECK(fit.tau1 * fit.tau1 == doctest::Approx(lo).epsilon(1e-9));
        CHECK(fit.tau2 * fit.tau2 == doctest::Approx(hi).epsilon(1e-9));
    }
}

TEST_CASE("relu fits: feasible on the fitting sample and on a held-out sample") {
    std::size_t d = 4, hidden = 4, n = 24;
    TwoLayerRelu obj(d, hidden, 77);
    LabeledDataset data = random_dataset(n, d, 13);
    ClientPartition part = ClientPartition::contiguous(n, 3);
    ObjectiveBundle bundle = global_bundle(obj, data, part);
    ParamVector probe_center = constant_vec(d * hidden, 0.3);

    ProbeRegion fit_region = region_around(probe_center, 1.0, 1024, 19);
    SmoothnessFit smooth = estimate_semi_smoothness(bundle, fit_region);
    LipschitzFit lips = estimate_semi_lipschitz(bundle, fit_region);
    CHECK(smooth.diag.worst_margin <= 1e-12);
    CHECK(lips.diag.worst_margin <= 1e-12);
    CHECK(std::isfinite(smooth.a));
    CHECK(std::isfinite(smooth.b));
    // kink crossings make the first-order term load-bearing
    CHECK(smooth.a > 0.0);

    ProbeRegion held_out = region_around(probe_center, 1.0, 1024, 20);
    std::size_t violations = 0;
    for (const auto& [w, u] : sample_region_pairs(held_out, d * hidden)) {
        double dist_sq = distance_sq(w, u);
        if (dist_sq < 1e-20) {
            continue;
        }
        double dist = std::sqrt(dist_sq);
        double lw = bundle.loss(w), lu = bundle.loss(u);
        ParamVector gw = bundle.grad(w);
        double resid = lu - lw - dot(gw, axpy(u, -1.0, w));
        if (resid > smooth.b * dist_sq + smooth.a * dist * std::sqrt(lw) + 1e-12) {
            ++violations;
        }
        double grad_diff = distance_sq(gw, bundle.grad(u));
        double rhs = lips.beta * lips.beta * dist_sq +
                     lips.alpha * lips.alpha * dist * std::sqrt(std::max(lw, lu));
        if (grad_diff > rhs + 1e-12) {
            ++violations;
        }
    }
    CHECK(violations == 0);
}

TEST_CASE("a vanishing gradient off the minimum is flagged") {
    // loss 1 + 0.5|w|^2 has grad = w: at the region center (0) the gradient
    // vanishes while the loss is 1.
    ObjectiveBundle bundle;
    bundle.dim = 3;
    bundle.loss = [](const ParamVector& w) { return 1.0 + 0.5 * norm_sq(w); };
    bundle.grad = [](const ParamVector& w) { return w; };
    NoCriticalFit fit = estimate_no_critical_point(bundle, region_around(constant_vec(3, 0.0), 0.5, 256, 5));
    CHECK(fit.tau1 == 0.0);
    CHECK(fit.gradient_vanishes);
}

TEST_CASE("probe errors") {
    ObjectiveBundle bundle = quadratic_bundle(constant_vec(2, 0.0));
    CHECK_THROWS_AS(estimate_semi_smoothness(bundle, region_around(constant_vec(2, 1.0), 0.0, 64, 1)),
                    ProbeError);
    // identically-zero loss: every point sits at the minimum
    ObjectiveBundle flat;
    flat.dim = 2;
    flat.loss = [](const ParamVector&) { return 0.0; };
    flat.grad = [](const ParamVector&) { return ParamVector::zeros(2); };
    CHECK_THROWS_AS(estimate_no_critical_point(flat, region_around(constant_vec(2, 0.0), 1.0, 64, 1)),
                    ProbeError);
}

TEST_CASE("sigma estimation") {
    SUBCASE("one-point shard with full batch has sigma = 0") {
        QuadraticObjective obj(2);
        LabeledDataset data(2, {0.5, 0.5}, {0.0});
        ClientPartition part(1, {{0}});
        ProbeRegion region = region_around(constant_vec(2, 0.0), 1.0, 8, 3);
        SigmaEstimate est = estimate_sigma(obj, data, part, region, 1, 100, 2);
        CHECK(est.sigma == doctest::Approx(0.0));
    }

    SUBCASE("closed-form dispersion of a two-point shard, within 5% at M = 1e4") {
        // shard {0, 2} in 1-d: mean 1, per-point dispersion 1, so the B=1
        // stochastic gradient has variance exactly 1 at every w
        QuadraticObjective obj(1);
        LabeledDataset data(1, {0.0, 2.0}, {0.0, 0.0});
        ClientPartition part(2, {{0, 1}});
        ProbeRegion region = region_around(constant_vec(1, 0.5), 1.0, 8, 9);
        SigmaEstimate est = estimate_sigma(obj, data, part, region, 1, 10000, 4);
        CHECK(est.sigma * est.sigma == doctest::Approx(1.0).epsilon(0.05));
    }

    SUBCASE("doubling the batch halves sigma^2 within 10%") {
        QuadraticObjective obj(1);
        LabeledDataset data(1, {0.0, 2.0}, {0.0, 0.0});
        ClientPartition part(2, {{0, 1}});
        ProbeRegion region = region_around(constant_vec(1, 0.5), 1.0, 8, 9);
        double v1 = estimate_sigma(obj, data, part, region, 1, 10000, 2).sigma;
        double v2 = estimate_sigma(obj, data, part, region, 2, 10000, 2).sigma;
        CHECK((v1 * v1) / (v2 * v2) == doctest::Approx(2.0).epsilon(0.10));
    }

    SUBCASE("fewer than two resamples is an error") {
        QuadraticObjective obj(1);
        LabeledDataset data(1, {0.0}, {0.0});
        ClientPartition part(1, {{0}});
        ProbeRegion region = region_around(constant_vec(1, 0.0), 1.0, 8, 1);
        CHECK_THROWS_AS(estimate_sigma(obj, data, part, region, 1, 1, 1), ProbeError);
    }
}

TEST_CASE("sigma estimator variance shrinks with M") {
    QuadraticObjective obj(1);
    LabeledDataset data(1, {0.0, 2.0}, {0.0, 0.0});
    ClientPartition part(2, {{0, 1}});
    auto variance_of_estimates = [&](std::size_t m) {
        std::vector<double> estimates;
        for (std::uint64_t s = 1; s <= 12; ++s) {
            ProbeRegion region = region_around(constant_vec(1, 0.5), 1.0, 8, s * 1000);
            double sig = estimate_sigma(obj, data, part, region, 1, m, 1).sigma;
            estimates.push_back(sig * sig);
        }
        double mean = 0.0;
        for (double e : estimates) {
            mean += e;
        }
        mean /= static_cast<double>(estimates.size());
        double var = 0.0;
        for (double e : estimates) {
            var += (e - mean) * (e - mean);
        }
        return var / static_cast<double>(estimates.size() - 1);
    };
    double var_small = variance_of_estimates(200);
    double var_large = variance_of_estimates(800);
    CHECK(var_large < var_small);
    // ~1/M scaling; allow a wide band for the small replication count
    CHECK(var_large < 0.6 * var_small);
}

TEST_CASE("fit monotonicity under nested samples") {
    std::size_t d = 4, hidden = 3, n = 18;
    TwoLayerRelu obj(d, hidden, 31);
    LabeledDataset data = random_dataset(n, d, 23);
    ClientPartition part = ClientPartition::contiguous(n, 3);
    ObjectiveBundle bundle = global_bundle(obj, data, part);
    ParamVector center = constant_vec(d * hidden, 0.2);

    double prev_sum_ab = -1.0, prev_sum_lips = -1.0;
    double prev_tau1 = std::numeric_limits<double>::infinity(), prev_tau2 = -1.0;
    for (std::size_t pairs : {128u, 256u, 512u}) {
        ProbeRegion region = region_around(center, 1.0, pairs, 47);
        SmoothnessFit s = estimate_semi_smoothness(bundle, region);
        LipschitzFit l = estimate_semi_lipschitz(bundle, region);
        NoCriticalFit t = estimate_no_critical_point(bundle, region);
        CHECK(s.a + s.b >= prev_sum_ab - 1e-7);
        CHECK(l.alpha * l.alpha + l.beta * l.beta >= prev_sum_lips - 1e-7);
        CHECK(t.tau1 <= prev_tau1 + 1e-12);
        CHECK(t.tau2 >= prev_tau2 - 1e-12);
        prev_sum_ab = s.a + s.b;
        prev_sum_lips = l.alpha * l.alpha + l.beta * l.beta;
        prev_tau1 = t.tau1;
        prev_tau2 = t.tau2;
    }
}

TEST_CASE("constants transform as derived under loss rescaling (quadratic closed form)") {
    ParamVector center = constant_vec(5, 0.1);
    ObjectiveBundle base = quadratic_bundle(center);
    // the minimum sits well inside the region, so the scaled fits stay in
    // the regime where the second-order constants carry the inequality
    ParamVector probe_center = axpy(center, 0.3, constant_vec(5, 1.0 / std::sqrt(5.0)));
    ProbeRegion region = region_around(probe_center, 1.0, 1024, 29);

    const double c = 2.0;
    ObjectiveBundle scaled = scaled_bundle(base, c);

    SmoothnessFit s = estimate_semi_smoothness(scaled, region);
    CHECK(s.a == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(s.b == doctest::Approx(c * 0.5).epsilon(1e-6)); // b scales with c

    LipschitzFit l = estimate_semi_lipschitz(scaled, region);
    CHECK(l.alpha <= 1e-6);
    CHECK(l.beta == doctest::Approx(c * 1.0).epsilon(1e-6)); // beta scales with c

    NoCriticalFit t = estimate_no_critical_point(scaled, region);
    // |grad cL|^2 / (cL) = c * |grad L|^2 / L: tau scales with sqrt(c)
    CHECK(t.tau1 == doctest::Approx(std::sqrt(c * 2.0)).epsilon(1e-6));
    CHECK(t.tau2 == doctest::Approx(std::sqrt(c * 2.0)).epsilon(1e-6));
}

TEST_CASE("verify_along_trajectory") {
    ParamVector center = constant_vec(3, 0.0);
    ObjectiveBundle bundle = quadratic_bundle(center);
    AssumptionConstants exact{0.0, 0.5, 0.0, 1.0, std::sqrt(2.0), std::sqrt(2.0), 0.0};

    SUBCASE("constant trajectory is vacuously clean") {
        std::vector<ParamVector> traj(4, constant_vec(3, 1.0));
        ProbeReport report = verify_along_trajectory(exact, traj, bundle);
        CHECK(report.violations.empty());
    }

    SUBCASE("gd trajectory with exact constants has zero violations") {
        std::vector<ParamVector> traj;
        ParamVector x = constant_vec(3, 1.0);
        for (int t = 0; t < 20; ++t) {
            traj.push_back(x);
            x = axpy(x, -0.2, bundle.grad(x));
        }
        ProbeReport report = verify_along_trajectory(exact, traj, bundle);
        CHECK(report.violations.empty());
        CHECK(report.worst_smooth_margin <= 1e-12);
        CHECK(report.worst_lipschitz_margin <= 1e-12);
        CHECK(report.worst_tau_margin <= 1e-12);
    }

    SUBCASE("halved constants are caught with positive margins") {
        AssumptionConstants halved = exact;
        halved.b *= 0.5;
        halved.beta *= 0.5;
        halved.tau2 *= 0.5;
        std::vector<ParamVector> traj;
        ParamVector x = constant_vec(3, 1.0);
        for (int t = 0; t < 10; ++t) {
            traj.push_back(x);
            x = axpy(x, -0.2, bundle.grad(x));
        }
        ProbeReport report = verify_along_trajectory(halved, traj, bundle);
        CHECK(!report.violations.empty());
        for (const Violation& v : report.violations) {
            CHECK(v.margin > 0.0);
        }
    }

    SUBCASE("fewer than two points is an error") {
        std::vector<ParamVector> traj{constant_vec(3, 1.0)};
        CHECK_THROWS_AS(verify_along_trajectory(exact, traj, bundle), ProbeError);
    }
}

TEST_CASE("well_formed constants") {
    AssumptionConstants good{0.1, 0.5, 0.0, 1.0, 1.0, 1.4, 0.1};
    CHECK(good.well_formed());
    AssumptionConstants zero_tau1{0.1, 0.5, 0.0, 1.0, 0.0, 1.4, 0.1};
    CHECK(!zero_tau1.well_formed());
    AssumptionConstants reversed{0.1, 0.5, 0.0, 1.0, 2.0, 1.0, 0.1};
    CHECK(!reversed.well_formed());
}
