#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/monitor.hpp"
#include "fedlab/planner.hpp"
#include "fedlab/probes.hpp"

namespace fedlab {

// 64-bit FNV-1a over the canonical config text; embedded in every artifact
// so verify can refuse mismatched plan/run pairs.
std::string fnv1a_hex(const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// ---- run CSV ----------------------------------------------------------
// Line 1: "# config_hash=<hex> seed=<n> full_batch=<0|1>"
// Line 2: header round,loss,grad_norm_sq,xi_pre,xi_post,drift_bound,envelope
// Rows r = 0..R: state at U^r plus the drift of the update launched there;
// floats printed with 17 significant digits, LF endings.
std::string format_run_csv(const RunSeries& series, const std::vector<double>& drift_bound,
                           const std::vector<double>& envelope);

struct RunCsv {
    RunSeries series;
    std::vector<double> drift_bound;
    std::vector<double> envelope;
};

RunCsv parse_run_csv(const std::string& text);

// ---- JSON artifacts ----------------------------------------------------

struct ProbeArtifact {
    AssumptionConstants constants;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    bool tau1_positive = true;
    bool tau1_below_one = false;
    // worst feasibility margin of the fits on their own samples (<= ~1e-12)
    double worst_fit_margin = 0.0;
    std::vector<std::string> violations; // empty by construction of the fits
    std::string config_hash;
};

std::string to_json_text(const ProbeArtifact& artifact);
ProbeArtifact probe_artifact_from_json(const std::string& text);

struct PlanArtifact {
    RatePlan plan;
    AssumptionConstants constants; // sigma already reflects the run regime
    std::optional<GdPlan> gd;
    std::string gd_note;
    std::size_t gd_steps = 0;
    double l_star = 0.0;
    double initial_gap = 0.0;
    std::string config_hash;
};

std::string to_json_text(const PlanArtifact& artifact);
PlanArtifact plan_artifact_from_json(const std::string& text);

struct ManifestArtifact {
    std::string config_text;
    AssumptionConstants constants;
    std::vector<std::uint64_t> seeds;
    std::string config_hash;
    double wall_time_ms = 0.0; // excluded from byte comparisons
};

std::string to_json_text(const ManifestArtifact& artifact);
ManifestArtifact manifest_artifact_from_json(const std::string& text);

struct VerdictArtifact {
    std::string envelope = "vacuous"; // pass | fail | vacuous
    std::string gd = "vacuous";
    std::string drift = "vacuous";
    std::vector<std::string> details;
    std::string config_hash;

    int exit_code() const {
        bool fail = envelope == "fail" || gd == "fail" || drift == "fail";
        return fail ? 1 : 0;
    }
};

std::string to_json_text(const VerdictArtifact& artifact);
VerdictArtifact verdict_artifact_from_json(const std::string& text);

} // namespace fedlab
