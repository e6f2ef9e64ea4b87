#include "fedlab/artifacts.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "fedlab/errors.hpp"

namespace fedlab {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& tok, const char* context) {
    const char* begin = tok.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) {
        throw IoError(std::string(context) + ": bad number '" + tok + "'");
    }
    return v;
}

json constants_to_json(const AssumptionConstants& c) {
    return json{{"a", c.a},     {"b", c.b},       {"alpha", c.alpha}, {"beta", c.beta},
                {"tau1", c.tau1}, {"tau2", c.tau2}, {"sigma", c.sigma}};
}

AssumptionConstants constants_from_json(const json& j) {
    AssumptionConstants c;
    c.a = j.at("a").get<double>();
    c.b = j.at("b").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.beta = j.at("beta").get<double>();
    c.tau1 = j.at("tau1").get<double>();
    c.tau2 = j.at("tau2").get<double>();
    c.sigma = j.at("sigma").get<double>();
    return c;
}

json parse_json(const std::string& text, const char* what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw IoError(std::string("malformed JSON in ") + what);
    }
    return j;
}

} // namespace

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return buf;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open file: " + path);
    }
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write file: " + path);
    }
    out << text;
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

std::string format_run_csv(const RunSeries& series, const std::vector<double>& drift_bound,
                           const std::vector<double>& envelope) {
    std::size_t rows = series.loss.size();
    if (drift_bound.size() != rows || envelope.size() != rows) {
        throw DimensionError("run csv: column lengths differ");
    }
    std::string out;
    out += "# config_hash=" + series.config_hash + " seed=" + std::to_string(series.seed) +
           " full_batch=" + (series.full_batch ? std::string("1") : std::string("0")) + "\n";
    out += "round,loss,grad_norm_sq,xi_pre,xi_post,drift_bound,envelope\n";
    for (std::size_t r = 0; r < rows; ++r) {
        out += std::to_string(r);
        out += ',' + fmt_double(series.loss[r]);
        out += ',' + fmt_double(series.grad_norm_sq[r]);
        out += ',' + fmt_double(series.xi_pre[r]);
        out += ',' + fmt_double(series.xi_post[r]);
        out += ',' + fmt_double(drift_bound[r]);
        out += ',' + fmt_double(envelope[r]);
        out += '\n';
    }
    return out;
}

RunCsv parse_run_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("# config_hash=", 0) != 0) {
        throw IoError("run csv: missing config hash line");
    }
    RunCsv out;
    {
        std::istringstream meta(line.substr(2));
        std::string tok;
        while (meta >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos) {
                continue;
            }
            std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
            if (key == "config_hash") {
                out.series.config_hash = value;
            } else if (key == "seed") {
                out.series.seed = std::strtoull(value.c_str(), nullptr, 10);
            } else if (key == "full_batch") {
                out.series.full_batch = value == "1";
            }
        }
    }
    if (!std::getline(in, line) || line != "round,loss,grad_norm_sq,xi_pre,xi_post,drift_bound,envelope") {
        throw IoError("run csv: bad or missing header row");
    }
    std::size_t expected_row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string tok;
        std::vector<std::string> cols;
        while (std::getline(row, tok, ',')) {
            cols.push_back(tok);
        }
        if (cols.size() != 7) {
            throw IoError("run csv: expected 7 columns, got " + std::to_string(cols.size()));
        }
        if (std::strtoull(cols[0].c_str(), nullptr, 10) != expected_row) {
            throw IoError("run csv: rows out of order at " + cols[0]);
        }
        ++expected_row;
        out.series.loss.push_back(parse_double(cols[1], "run csv loss"));
        out.series.grad_norm_sq.push_back(parse_double(cols[2], "run csv grad"));
        out.series.xi_pre.push_back(parse_double(cols[3], "run csv xi_pre"));
        out.series.xi_post.push_back(parse_double(cols[4], "run csv xi_post"));
        out.drift_bound.push_back(parse_double(cols[5], "run csv drift_bound"));
        out.envelope.push_back(parse_double(cols[6], "run csv envelope"));
    }
    if (out.series.loss.empty()) {
        throw IoError("run csv: no data rows");
    }
    return out;
}

std::string to_json_text(const ProbeArtifact& artifact) {
    json j;
    j["constants"] = constants_to_json(artifact.constants);
    j["samples"] = artifact.samples;
    j["seed"] = artifact.seed;
    j["tau1_positive"] = artifact.tau1_positive;
    j["tau1_below_one"] = artifact.tau1_below_one;
    j["worst_fit_margin"] = artifact.worst_fit_margin;
    j["violations"] = artifact.violations;
    j["config_hash"] = artifact.config_hash;
    return j.dump(2) + "\n";
}

ProbeArtifact probe_artifact_from_json(const std::string& text) {
    json j = parse_json(text, "probe.json");
    ProbeArtifact a;
    a.constants = constants_from_json(j.at("constants"));
    a.samples = j.at("samples").get<std::size_t>();
    a.seed = j.at("seed").get<std::uint64_t>();
    a.tau1_positive = j.at("tau1_positive").get<bool>();
    a.tau1_below_one = j.at("tau1_below_one").get<bool>();
    a.worst_fit_margin = j.at("worst_fit_margin").get<double>();
    a.violations = j.at("violations").get<std::vector<std::string>>();
    a.config_hash = j.at("config_hash").get<std::string>();
    return a;
}

std::string to_json_text(const PlanArtifact& artifact) {
    json j;
    j["eta_l"] = artifact.plan.eta_l;
    j["eta_g"] = artifact.plan.eta_g;
    j["eta_tilde"] = artifact.plan.eta_tilde;
    j["lambda1"] = artifact.plan.lambda1;
    j["lambda2"] = artifact.plan.lambda2;
    j["rounds"] = artifact.plan.rounds;
    j["local_steps"] = artifact.plan.local_steps;
    j["sigma_used"] = artifact.plan.sigma_used;
    if (artifact.plan.epsilon_target.has_value()) {
        j["epsilon"] = *artifact.plan.epsilon_target;
    }
    j["constants"] = constants_to_json(artifact.constants);
    if (artifact.gd.has_value()) {
        j["gd"] = json{{"eta", artifact.gd->eta}, {"lambda", artifact.gd->lambda}};
    }
    j["gd_note"] = artifact.gd_note;
    j["gd_steps"] = artifact.gd_steps;
    j["l_star"] = artifact.l_star;
    j["initial_gap"] = artifact.initial_gap;
    j["config_hash"] = artifact.config_hash;
    return j.dump(2) + "\n";
}

PlanArtifact plan_artifact_from_json(const std::string& text) {
    json j = parse_json(text, "plan.json");
    PlanArtifact a;
    a.plan.eta_l = j.at("eta_l").get<double>();
    a.plan.eta_g = j.at("eta_g").get<double>();
    a.plan.eta_tilde = j.at("eta_tilde").get<double>();
    a.plan.lambda1 = j.at("lambda1").get<double>();
    a.plan.lambda2 = j.at("lambda2").get<double>();
    a.plan.rounds = j.at("rounds").get<std::size_t>();
    a.plan.local_steps = j.at("local_steps").get<std::size_t>();
    a.plan.sigma_used = j.at("sigma_used").get<double>();
    if (j.contains("epsilon")) {
        a.plan.epsilon_target = j.at("epsilon").get<double>();
    }
    a.constants = constants_from_json(j.at("constants"));
    if (j.contains("gd")) {
        GdPlan gd;
        gd.eta = j.at("gd").at("eta").get<double>();
        gd.lambda = j.at("gd").at("lambda").get<double>();
        a.gd = gd;
    }
    a.gd_note = j.at("gd_note").get<std::string>();
    a.gd_steps = j.at("gd_steps").get<std::size_t>();
    a.l_star = j.at("l_star").get<double>();
    a.initial_gap = j.at("initial_gap").get<double>();
    a.config_hash = j.at("config_hash").get<std::string>();
    return a;
}

std::string to_json_text(const ManifestArtifact& artifact) {
    json j;
    j["config"] = artifact.config_text;
    j["constants"] = constants_to_json(artifact.constants);
    j["seeds"] = artifact.seeds;
    j["config_hash"] = artifact.config_hash;
    j["wall_time_ms"] = artifact.wall_time_ms;
    return j.dump(2) + "\n";
}

ManifestArtifact manifest_artifact_from_json(const std::string& text) {
    json j = parse_json(text, "manifest.json");
    ManifestArtifact a;
    a.config_text = j.at("config").get<std::string>();
    a.constants = constants_from_json(j.at("constants"));
    a.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    a.config_hash = j.at("config_hash").get<std::string>();
    a.wall_time_ms = j.at("wall_time_ms").get<double>();
    return a;
}

std::string to_json_text(const VerdictArtifact& artifact) {
    json j;
    j["envelope"] = artifact.envelope;
    j["gd"] = artifact.gd;
    j["drift"] = artifact.drift;
    j["details"] = artifact.details;
    j["config_hash"] = artifact.config_hash;
    return j.dump(2) + "\n";
}

VerdictArtifact verdict_artifact_from_json(const std::string& text) {
    json j = parse_json(text, "verdict.json");
    VerdictArtifact a;
    a.envelope = j.at("envelope").get<std::string>();
    a.gd = j.at("gd").get<std::string>();
    a.drift = j.at("drift").get<std::string>();
    a.details = j.at("details").get<std::vector<std::string>>();
    a.config_hash = j.at("config_hash").get<std::string>();
    return a;
}

} // namespace fedlab
