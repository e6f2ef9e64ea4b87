// fedavg-lab: probe assumption constants, derive theory-prescribed rates,
// run FedAvg / GD, and verify the convergence bounds on the recorded runs.
//
// Exit codes: 0 all checks pass (or vacuous), 1 a verified bound failed,
// 2 configuration or I/O error.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fedlab/artifacts.hpp"
#include "fedlab/errors.hpp"
#include "fedlab/harness.hpp"

namespace {

fedlab::ExperimentConfig load_config(const std::string& path, const std::string& out_override) {
    fedlab::ExperimentConfig cfg = fedlab::parse_config(fedlab::read_text_file(path));
    if (!out_override.empty()) {
        cfg.out_dir = out_override;
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FedAvg assumption probing, rate planning and bound verification"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::optional<std::uint64_t> seed_override;

    auto add_common = [&](CLI::App* cmd, bool with_seed) {
        cmd->add_option("--config", config_path, "experiment config file")->required();
        cmd->add_option("--out", out_override, "output directory (overrides config)");
        if (with_seed) {
            cmd->add_option("--seed", seed_override, "run a single seed instead of the config list");
        }
    };

    CLI::App* probe_cmd = app.add_subcommand("probe", "estimate assumption constants");
    CLI::App* plan_cmd = app.add_subcommand("plan", "derive step sizes and round budget");
    CLI::App* run_cmd = app.add_subcommand("run", "execute FedAvg runs (and the GD baseline)");
    CLI::App* verify_cmd = app.add_subcommand("verify", "check the recorded runs against the bounds");
    CLI::App* pipeline_cmd = app.add_subcommand("pipeline", "probe, plan, run and verify in one go");
    add_common(probe_cmd, false);
    add_common(plan_cmd, false);
    add_common(run_cmd, true);
    add_common(verify_cmd, false);
    add_common(pipeline_cmd, false);

    CLI11_PARSE(app, argc, argv);

    try {
        fedlab::ExperimentConfig cfg = load_config(config_path, out_override);
        std::filesystem::create_directories(cfg.out_dir);

        if (probe_cmd->parsed()) {
            fedlab::ExperimentContext ctx = fedlab::build_context(cfg);
            fedlab::ProbeArtifact probe = fedlab::stage_probe(ctx);
            fedlab::write_text_file(cfg.out_dir + "/probe.json", fedlab::to_json_text(probe));
            std::printf("probe: a=%.6g b=%.6g alpha=%.6g beta=%.6g tau1=%.6g tau2=%.6g sigma=%.6g\n",
                        probe.constants.a, probe.constants.b, probe.constants.alpha, probe.constants.beta,
                        probe.constants.tau1, probe.constants.tau2, probe.constants.sigma);
            return 0;
        }
        if (plan_cmd->parsed()) {
            fedlab::ExperimentContext ctx = fedlab::build_context(cfg);
            fedlab::ProbeArtifact probe =
                fedlab::probe_artifact_from_json(fedlab::read_text_file(cfg.out_dir + "/probe.json"));
            if (probe.config_hash != ctx.hash) {
                throw fedlab::ConfigError("plan: probe.json belongs to a different config");
            }
            fedlab::PlanArtifact plan = fedlab::stage_plan(ctx, probe);
            fedlab::write_text_file(cfg.out_dir + "/plan.json", fedlab::to_json_text(plan));
            std::printf("plan: eta_l=%.6g eta_g=%.6g lambda1=%.6g lambda2=%.6g R=%zu\n", plan.plan.eta_l,
                        plan.plan.eta_g, plan.plan.lambda1, plan.plan.lambda2, plan.plan.rounds);
            return 0;
        }
        if (run_cmd->parsed()) {
            fedlab::ExperimentContext ctx = fedlab::build_context(cfg);
            fedlab::PlanArtifact plan =
                fedlab::plan_artifact_from_json(fedlab::read_text_file(cfg.out_dir + "/plan.json"));
            if (plan.config_hash != ctx.hash) {
                throw fedlab::ConfigError("run: plan.json belongs to a different config");
            }
            fedlab::stage_run(ctx, plan, seed_override);
            std::printf("run: wrote %zu run file(s) under %s\n",
                        seed_override ? std::size_t{1} : cfg.seeds.size(), cfg.out_dir.c_str());
            return 0;
        }
        if (verify_cmd->parsed()) {
            fedlab::VerdictArtifact verdict = fedlab::stage_verify(cfg);
            std::printf("verify: envelope=%s gd=%s drift=%s\n", verdict.envelope.c_str(), verdict.gd.c_str(),
                        verdict.drift.c_str());
            return verdict.exit_code();
        }
        // pipeline
        int code = fedlab::run_pipeline(cfg);
        fedlab::VerdictArtifact verdict =
            fedlab::verdict_artifact_from_json(fedlab::read_text_file(cfg.out_dir + "/verdict.json"));
        std::printf("pipeline: envelope=%s gd=%s drift=%s (exit %d)\n", verdict.envelope.c_str(),
                    verdict.gd.c_str(), verdict.drift.c_str(), code);
        return code;
    } catch (const fedlab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const fedlab::PlanError& e) {
        std::fprintf(stderr, "plan error: %s\n", e.what());
        return 2;
    } catch (const fedlab::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
