#pragma once

#include <cstddef>
#include <optional>

#include "fedlab/probes.hpp"

namespace fedlab {

// Step sizes and decay/noise-floor coefficients prescribed by the theory:
//   bound per round   E[L(U^r) - L*] <= (1 - lambda1)^r (L(U^0) - L*) + 2 lambda2
//   lambda1 = (eta~/4) (1 - 4 b eta~ - 2a) tau1^2,   eta~ = K eta_l eta_g
//   lambda2 = (1 + a + b eta~) (eta~/10) sigma^2
struct RatePlan {
    double eta_l = 0.0;
    double eta_g = 0.0;
    double eta_tilde = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    std::size_t rounds = 0;
    std::size_t local_steps = 1;
    double sigma_used = 0.0;
    std::optional<double> epsilon_target;
};

// min{ 1/(alpha^2 K), 1/(100 K tau2 (beta+alpha)), 1/(100 sqrt(K) (beta+alpha)) },
// zero denominators treated as +inf. All three infinite -> plan error.
double plan_local_rate(const AssumptionConstants& constants, std::size_t local_steps);

// Ceiling tau1^2 / (20 K b eta_l); b = 0 makes it vacuous, so the returned
// value is capped (default 1e3) to keep simulations finite.
double plan_global_rate(const AssumptionConstants& constants, std::size_t local_steps, double eta_l,
                        double cap = 1e3);

struct Lambdas {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double sigma_used = 0.0;
};

// Exact formula evaluation; rejects lambda1 <= 0 and reports the maximum
// admissible a for the chosen rates in the error message.
Lambdas compute_lambdas(const AssumptionConstants& constants, std::size_t local_steps, double eta_l,
                        double eta_g);

// R = ceil(ln(2 * initial_gap / epsilon) / lambda1); 0 when already converged.
std::size_t plan_rounds(double epsilon, double initial_gap, double lambda1);

// The epsilon-dependent global-rate ceiling 2 eps / (sigma^2 (1 + a + tau1^2/(20K))).
double corollary_eta_g_cap(const AssumptionConstants& constants, std::size_t local_steps, double epsilon);

struct GdPlan {
    double eta = 0.0;
    double lambda = 0.0;
};

// Gradient-descent baseline rate: requires 0.5 tau1^2 >= a tau2, uses the
// ceiling eta = tau1^2 / (10 b tau2^2) and lambda = 0.1 eta tau1^2.
GdPlan plan_gd(const AssumptionConstants& constants, double cap = 1e3);

// Full plan: local rate, global rate at its ceiling (with the corollary cap
// when an epsilon target is given and sigma > 0), lambdas, and the round
// budget when both epsilon and the initial gap are known.
RatePlan make_plan(const AssumptionConstants& constants, std::size_t local_steps,
                   std::optional<double> epsilon, std::optional<double> initial_gap,
                   double eta_g_cap = 1e3);

} // namespace fedlab
