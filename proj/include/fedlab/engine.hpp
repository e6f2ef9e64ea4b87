#pragma once

#include <cstdint>
#include <vector>

#include "fedlab/numerics.hpp"
#include "fedlab/objectives.hpp"

namespace fedlab {

struct FedConfig {
    std::size_t clients = 1;     // N
    std::size_t local_steps = 1; // K
    double eta_l = 0.0;
    double eta_g = 0.0;
    std::size_t rounds = 1; // R
    std::size_t batch_size = 1;
    std::uint64_t master_seed = 0;
    // true forces every local step to use the exact local gradient (the
    // sigma = 0 regime).
    bool full_batch = false;

    void check() const;
};

// Telemetry for one communication round, taken at the round's starting point
// U^r together with the drift of the update it launches. xi_pre averages
// |W_{c,k-1} - U|^2 over k = 1..K (so the k=0 term, always zero, is
// included); xi_post averages |W_{c,k} - U|^2 over the same k range.
struct RoundRecord {
    std::size_t round = 0;
    double loss = 0.0;
    double grad_norm_sq = 0.0;
    double xi_pre = 0.0;
    double xi_post = 0.0;
    std::vector<double> client_delta_norms;
    double wall_ms = 0.0;
};

struct Trajectory {
    ParamVector initial;
    ParamVector final_point;
    std::vector<RoundRecord> rounds; // R records
    double final_loss = 0.0;
    double final_grad_norm_sq = 0.0;
    FedConfig config;

    // Losses at U^0 .. U^R (rounds' pre-update losses plus the final one).
    std::vector<double> loss_series() const;
};

struct ClientResult {
    // Sum of the applied local steps; mathematically W_{c,K} - U.
    ParamVector delta;
    // W_{c,0} .. W_{c,K} for drift accounting.
    std::vector<ParamVector> iterates;
};

// K local steps from the broadcast point. Stochastic batches come from the
// stream (master_seed, c, r, k); full_batch uses the exact local gradient.
ClientResult client_update(const Objective& obj, const LabeledDataset& data, const Shard& shard,
                           std::size_t client, const ParamVector& global, const FedConfig& cfg,
                           std::size_t round);

// U + eta_g * (1/N) * sum of deltas, summed in ascending client index.
ParamVector server_round(const ParamVector& global, const std::vector<ParamVector>& deltas, double eta_g);

// Both drift conventions, averaged over clients and local steps.
std::pair<double, double> compute_drift(const std::vector<ClientResult>& clients, const ParamVector& global);

// R rounds of FedAvg. Deterministic given the config's master seed,
// independent of client execution order and thread count.
Trajectory run_fedavg(const Objective& obj, const LabeledDataset& data, const ClientPartition& part,
                      const ParamVector& init, const FedConfig& cfg);

// Centralized full-gradient descent baseline x_{t+1} = x_t - eta * grad L(x_t).
Trajectory run_gd(const ObjectiveBundle& bundle, const ParamVector& init, double eta, std::size_t steps);

} // namespace fedlab
