#include "fedlab/engine.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "fedlab/errors.hpp"
#include "fedlab/parallel.hpp"

namespace fedlab {

void FedConfig::check() const {
    if (clients < 1) throw ConfigError("fedavg: N must be >= 1");
    if (local_steps < 1) throw ConfigError("fedavg: K must be >= 1");
    if (!(eta_l > 0.0) || !std::isfinite(eta_l)) throw ConfigError("fedavg: eta_l must be positive");
    if (!(eta_g > 0.0) || !std::isfinite(eta_g)) throw ConfigError("fedavg: eta_g must be positive");
    if (rounds < 1) throw ConfigError("fedavg: R must be >= 1");
    if (batch_size < 1) throw ConfigError("fedavg: B must be >= 1");
}

std::vector<double> Trajectory::loss_series() const {
    std::vector<double> out;
    out.reserve(rounds.size() + 1);
    for (const RoundRecord& r : rounds) {
        out.push_back(r.loss);
    }
    out.push_back(final_loss);
    return out;
}

ClientResult client_update(const Objective& obj, const LabeledDataset& data, const Shard& shard,
                           std::size_t client, const ParamVector& global, const FedConfig& cfg,
                           std::size_t round) {
    ClientResult result;
    result.iterates.reserve(cfg.local_steps + 1);
    result.iterates.push_back(global);
    // The delta is accumulated as the sum of the applied steps; for K = 1 it
    // is exactly -eta_l * g, matching the single-step contract bit for bit.
    result.delta = ParamVector::zeros(global.dim());
    ParamVector w = global;
    for (std::size_t k = 0; k < cfg.local_steps; ++k) {
        ParamVector g = cfg.full_batch
                            ? obj.local_grad(data, shard, w)
                            : stoch_grad(obj, data, shard, w,
                                         BatchSampler(cfg.batch_size, cfg.master_seed, client, round, k));
        try {
            w = axpy(w, -cfg.eta_l, g);
            result.delta = axpy(result.delta, -cfg.eta_l, g);
        } catch (const NumericError&) {
            throw DivergenceError("client " + std::to_string(client) + " diverged at round " +
                                  std::to_string(round) + ", local step " + std::to_string(k));
        }
        result.iterates.push_back(w);
    }
    return result;
}

ParamVector server_round(const ParamVector& global, const std::vector<ParamVector>& deltas, double eta_g) {
    if (deltas.empty()) {
        throw DimensionError("server_round: no client deltas");
    }
    ParamVector sum = ParamVector::zeros(global.dim());
    for (const ParamVector& d : deltas) {
        sum = axpy(sum, 1.0, d); // ascending client index
    }
    ParamVector mean = axpy(ParamVector::zeros(global.dim()), 1.0 / static_cast<double>(deltas.size()), sum);
    return axpy(global, eta_g, mean);
}

std::pair<double, double> compute_drift(const std::vector<ClientResult>& clients, const ParamVector& global) {
    double pre = 0.0, post = 0.0;
    std::size_t terms = 0;
    for (const ClientResult& c : clients) {
        std::size_t k_steps = c.iterates.size() - 1;
        for (std::size_t k = 1; k <= k_steps; ++k) {
            pre += distance_sq(c.iterates[k - 1], global);
            post += distance_sq(c.iterates[k], global);
            ++terms;
        }
    }
    if (terms == 0) {
        return {0.0, 0.0};
    }
    return {pre / static_cast<double>(terms), post / static_cast<double>(terms)};
}

Trajectory run_fedavg(const Objective& obj, const LabeledDataset& data, const ClientPartition& part,
                      const ParamVector& init, const FedConfig& cfg) {
    cfg.check();
    if (part.clients() != cfg.clients) {
        throw ConfigError("fedavg: partition has " + std::to_string(part.clients()) + " shards, config says " +
                          std::to_string(cfg.clients));
    }
    if (init.dim() != obj.dim()) {
        throw DimensionError("fedavg: init point does not match objective dimension");
    }

    Trajectory traj;
    traj.initial = init;
    traj.config = cfg;
    traj.rounds.reserve(cfg.rounds);

    ParamVector u = init;
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
        auto start = std::chrono::steady_clock::now();
        RoundRecord rec;
        rec.round = r;
        rec.loss = global_loss(obj, data, part, u);
        rec.grad_norm_sq = norm_sq(global_grad(obj, data, part, u));

        // Fan out over clients; every client is pure given its rng stream,
        // so scheduling cannot change the result.
        std::vector<ClientResult> results(cfg.clients);
        parallel_for(cfg.clients, [&](std::size_t c) {
            results[c] = client_update(obj, data, part.shard(c), c, u, cfg, r);
        });

        auto [xi_pre, xi_post] = compute_drift(results, u);
        rec.xi_pre = xi_pre;
        rec.xi_post = xi_post;
        rec.client_delta_norms.reserve(cfg.clients);
        std::vector<ParamVector> deltas;
        deltas.reserve(cfg.clients);
        for (std::size_t c = 0; c < cfg.clients; ++c) {
            rec.client_delta_norms.push_back(std::sqrt(norm_sq(results[c].delta)));
            deltas.push_back(std::move(results[c].delta));
        }
        u = server_round(u, deltas, cfg.eta_g);

        rec.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        traj.rounds.push_back(std::move(rec));
    }
    traj.final_point = u;
    traj.final_loss = global_loss(obj, data, part, u);
    traj.final_grad_norm_sq = norm_sq(global_grad(obj, data, part, u));
    return traj;
}

Trajectory run_gd(const ObjectiveBundle& bundle, const ParamVector& init, double eta, std::size_t steps) {
    if (!(eta >= 0.0) || !std::isfinite(eta)) {
        throw ConfigError("gd: eta must be finite and >= 0");
    }
    if (init.dim() != bundle.dim) {
        throw DimensionError("gd: init point does not match objective dimension");
    }
    Trajectory traj;
    traj.initial = init;
    traj.config.clients = 1;
    traj.config.local_steps = 1;
    traj.config.eta_l = eta;
    traj.config.eta_g = 1.0;
    traj.config.rounds = steps;
    traj.config.full_batch = true;
    traj.rounds.reserve(steps);

    ParamVector x = init;
    for (std::size_t t = 0; t < steps; ++t) {
        auto start = std::chrono::steady_clock::now();
        RoundRecord rec;
        rec.round = t;
        rec.loss = bundle.loss(x);
        ParamVector g = bundle.grad(x);
        rec.grad_norm_sq = norm_sq(g);
        try {
            x = axpy(x, -eta, g);
        } catch (const NumericError&) {
            throw DivergenceError("gd diverged at step " + std::to_string(t));
        }
        rec.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        traj.rounds.push_back(std::move(rec));
    }
    traj.final_point = x;
    traj.final_loss = bundle.loss(x);
    traj.final_grad_norm_sq = norm_sq(bundle.grad(x));
    return traj;
}

} // namespace fedlab
