#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/artifacts.hpp"
#include "fedlab/engine.hpp"
#include "fedlab/objectives.hpp"

namespace fedlab {

// Flat key-value experiment description. Keys use dotted sections
// (fedavg.K = 2), '#' starts a comment, unknown keys are rejected.
struct ExperimentConfig {
    // objective block
    std::string kind;
    std::size_t dim = 8;      // objective.d
    std::size_t hidden = 4;   // objective.hidden (two-layer-relu)
    std::size_t points = 64;  // objective.n
    double spread = 0.0;      // cross-client heterogeneity
    double jitter = 0.0;      // within-shard dispersion (gradient noise knob)
    std::uint64_t data_seed = 1;
    double init_radius = 1.4142135623730951;
    std::string source = "synth"; // synth | csv
    std::string csv_path;
    bool l_star_auto = true;
    double l_star_value = 0.0;

    // clients block
    std::size_t clients = 0; // clients.N, required
    std::string partition_policy = "contiguous";

    // fedavg block
    std::size_t local_steps = 0; // fedavg.K, required
    bool eta_l_auto = true;
    double eta_l = 0.0;
    bool eta_g_auto = true;
    double eta_g = 0.0;
    bool rounds_auto = true;
    std::size_t rounds = 0;
    std::size_t batch_size = 8;
    bool full_batch = false;

    // gd block
    std::size_t gd_steps = 0; // 0 = no GD baseline

    // probe block
    double probe_radius = 1.0;
    std::size_t probe_pairs = 2048;
    std::size_t probe_resamples = 10000; // probe.M
    std::size_t probe_sigma_points = 8;
    std::uint64_t probe_seed = 7;

    // per-field overrides of the probed constants
    std::optional<double> const_a, const_b, const_alpha, const_beta, const_tau1, const_tau2, const_sigma;

    double epsilon = 0.01;
    std::vector<std::uint64_t> seeds = {1,  2,  3,  4,  5,  6,  7,  8,  9,  10,
                                        11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
    std::string out_dir = "out";

    bool operator==(const ExperimentConfig&) const = default;
};

// Rejects unknown keys, duplicates, type mismatches and missing required
// keys (objective.kind, clients.N, fedavg.K), each with the key path.
ExperimentConfig parse_config(const std::string& text);

// Canonical rendering; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

std::string config_hash(const ExperimentConfig& cfg);

// Dataset, partition and the kind's natural anchor point (shard-mean center
// for quadratic, the generating weights for linear-ls, zeros otherwise).
struct SynthesizedExperiment {
    LabeledDataset data;
    ClientPartition partition;
    ParamVector anchor;
};

SynthesizedExperiment synthesize_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

// Everything the pipeline stages share.
struct ExperimentContext {
    ExperimentConfig cfg;
    std::unique_ptr<Objective> objective;
    LabeledDataset data;
    ClientPartition partition;
    ParamVector init;
    std::string hash;
};

ExperimentContext build_context(const ExperimentConfig& cfg);

// Initial point: anchor + init_radius * unit direction for the anchored
// kinds; entrywise init_radius/sqrt(d) normals for the relu kind.
ParamVector make_init(const ExperimentConfig& cfg, const SynthesizedExperiment& synth);

// GD-to-near-convergence estimate with backtracking on increase; returns the
// best loss seen. Used when objective.l_star = auto.
double estimate_l_star(const ObjectiveBundle& bundle, const ParamVector& init,
                       const AssumptionConstants& constants);

// ---- pipeline stages (each stage is also a CLI subcommand) -------------

ProbeArtifact stage_probe(const ExperimentContext& ctx);
PlanArtifact stage_plan(const ExperimentContext& ctx, const ProbeArtifact& probe);
// Runs every seed (or a single one), writes run_<seed>.csv files plus the
// manifest, and the GD baseline CSV when planned.
void stage_run(const ExperimentContext& ctx, const PlanArtifact& plan,
               std::optional<std::uint64_t> only_seed);
VerdictArtifact stage_verify(const ExperimentConfig& cfg);

// probe -> plan -> run -> verify; artifacts land in cfg.out_dir. Returns the
// verify exit code (0 pass/vacuous, 1 fail); stage errors throw.
int run_pipeline(const ExperimentConfig& cfg);

} // namespace fedlab
