#include "fedlab/planner.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "fedlab/errors.hpp"

namespace fedlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inv_or_inf(double denom) {
    return denom > 0.0 ? 1.0 / denom : kInf;
}

} // namespace

double plan_local_rate(const AssumptionConstants& constants, std::size_t local_steps) {
    double k = static_cast<double>(local_steps);
    double alpha = constants.alpha, beta = constants.beta, tau2 = constants.tau2;
    double term1 = inv_or_inf(alpha * alpha * k);
    double term2 = inv_or_inf(100.0 * k * tau2 * (beta + alpha));
    double term3 = inv_or_inf(100.0 * std::sqrt(k) * (beta + alpha));
    double eta_l = std::min({term1, term2, term3});
    if (!std::isfinite(eta_l) || !(eta_l > 0.0)) {
        throw PlanError("constants degenerate: every local-rate ceiling is infinite");
    }
    return eta_l;
}

double plan_global_rate(const AssumptionConstants& constants, std::size_t local_steps, double eta_l,
                        double cap) {
    if (!(eta_l > 0.0)) {
        throw PlanError("plan_global_rate: eta_l must be positive");
    }
    double denom = 20.0 * static_cast<double>(local_steps) * constants.b * eta_l;
    double ceiling = denom > 0.0 ? constants.tau1 * constants.tau1 / denom : kInf;
    return std::min(ceiling, cap);
}

Lambdas compute_lambdas(const AssumptionConstants& constants, std::size_t local_steps, double eta_l,
                        double eta_g) {
    if (!(eta_l > 0.0) || !(eta_g > 0.0)) {
        throw PlanError("compute_lambdas: rates must be positive");
    }
    double eta_tilde = static_cast<double>(local_steps) * eta_l * eta_g;
    double bracket = 1.0 - 4.0 * constants.b * eta_tilde - 2.0 * constants.a;
    double lambda1 = (eta_tilde / 4.0) * bracket * constants.tau1 * constants.tau1;
    if (!(lambda1 > 0.0)) {
        double max_a = (1.0 - 4.0 * constants.b * eta_tilde) / 2.0;
        throw PlanError("decay coefficient nonpositive: a or effective step too large (a = " +
                        std::to_string(constants.a) + ", max admissible a = " + std::to_string(max_a) + ")");
    }
    Lambdas out;
    out.lambda1 = lambda1;
    out.lambda2 = (1.0 + constants.a + constants.b * eta_tilde) * (eta_tilde / 10.0) * constants.sigma *
                  constants.sigma;
    out.sigma_used = constants.sigma;
    return out;
}

std::size_t plan_rounds(double epsilon, double initial_gap, double lambda1) {
    if (!(epsilon > 0.0)) {
        throw PlanError("plan_rounds: epsilon must be positive");
    }
    if (!(initial_gap > 0.0)) {
        throw PlanError("plan_rounds: initial gap must be positive");
    }
    if (initial_gap <= epsilon / 2.0) {
        return 0; // already converged
    }
    if (!(lambda1 > 0.0) || !(lambda1 < 1.0)) {
        throw PlanError("plan_rounds: lambda1 must lie in (0, 1)");
    }
    double r = std::ceil(std::log(2.0 * initial_gap / epsilon) / lambda1);
    return static_cast<std::size_t>(r);
}

double corollary_eta_g_cap(const AssumptionConstants& constants, std::size_t local_steps, double epsilon) {
    if (!(epsilon > 0.0)) {
        throw PlanError("corollary cap: epsilon must be positive");
    }
    if (!(constants.sigma > 0.0)) {
        return kInf; // noise floor absent; no cap needed
    }
    double tau1_sq = constants.tau1 * constants.tau1;
    double denom = constants.sigma * constants.sigma *
                   (1.0 + constants.a + tau1_sq / (20.0 * static_cast<double>(local_steps)));
    return 2.0 * epsilon / denom;
}

GdPlan plan_gd(const AssumptionConstants& constants, double cap) {
    double tau1_sq = constants.tau1 * constants.tau1;
    if (!(0.5 * tau1_sq >= constants.a * constants.tau2)) {
        throw PlanError("gd plan rejected: requires 0.5 tau1^2 >= a tau2");
    }
    double denom = 10.0 * constants.b * constants.tau2 * constants.tau2;
    double eta = denom > 0.0 ? tau1_sq / denom : kInf;
    eta = std::min(eta, cap);
    if (!(eta > 0.0)) {
        throw PlanError("gd plan rejected: step ceiling is zero");
    }
    GdPlan plan;
    plan.eta = eta;
    plan.lambda = 0.1 * eta * tau1_sq;
    return plan;
}

RatePlan make_plan(const AssumptionConstants& constants, std::size_t local_steps,
                   std::optional<double> epsilon, std::optional<double> initial_gap, double eta_g_cap) {
    RatePlan plan;
    plan.local_steps = local_steps;
    plan.eta_l = plan_local_rate(constants, local_steps);
    plan.eta_g = plan_global_rate(constants, local_steps, plan.eta_l, eta_g_cap);
    if (epsilon.has_value() && constants.sigma > 0.0) {
        plan.eta_g = std::min(plan.eta_g, corollary_eta_g_cap(constants, local_steps, *epsilon));
    }
    Lambdas l = compute_lambdas(constants, local_steps, plan.eta_l, plan.eta_g);
    if (l.lambda1 >= 1.0) {
        throw PlanError("decay coefficient lambda1 >= 1: constants out of the theorem's regime");
    }
    plan.eta_tilde = static_cast<double>(local_steps) * plan.eta_l * plan.eta_g;
    plan.lambda1 = l.lambda1;
    plan.lambda2 = l.lambda2;
    plan.sigma_used = l.sigma_used;
    plan.epsilon_target = epsilon;
    if (epsilon.has_value() && initial_gap.has_value()) {
        plan.rounds = plan_rounds(*epsilon, *initial_gap, plan.lambda1);
    }
    return plan;
}

} // namespace fedlab
