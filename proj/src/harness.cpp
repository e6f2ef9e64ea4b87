#include "fedlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "fedlab/errors.hpp"
#include "fedlab/parallel.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& value) {
    const char* begin = value.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || !std::isfinite(v)) {
        throw ConfigError(key + ": expected a finite number, got '" + value + "'");
    }
    return v;
}

double to_positive(const std::string& key, const std::string& value) {
    double v = to_double(key, value);
    if (!(v > 0.0)) {
        throw ConfigError(key + ": must be positive, got '" + value + "'");
    }
    return v;
}

double to_nonneg(const std::string& key, const std::string& value) {
    double v = to_double(key, value);
    if (v < 0.0) {
        throw ConfigError(key + ": must be nonnegative, got '" + value + "'");
    }
    return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + value + "'");
    }
    return std::strtoull(value.c_str(), nullptr, 10);
}

std::size_t to_count(const std::string& key, const std::string& value, std::size_t min_value) {
    std::uint64_t v = to_u64(key, value);
    if (v < min_value) {
        throw ConfigError(key + ": must be >= " + std::to_string(min_value) + ", got '" + value + "'");
    }
    return static_cast<std::size_t>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& schema() {
    static const std::map<std::string, Setter> table = {
        {"objective.kind",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v != "quadratic" && v != "linear-ls" && v != "two-layer-relu") {
                 throw ConfigError(k + ": unknown objective kind '" + v + "'");
             }
             c.kind = v;
         }},
        {"objective.d", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.dim = to_count(k, v, 1); }},
        {"objective.hidden",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.hidden = to_count(k, v, 1); }},
        {"objective.n", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.points = to_count(k, v, 1); }},
        {"objective.spread",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.spread = to_nonneg(k, v); }},
        {"objective.jitter",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.jitter = to_nonneg(k, v); }},
        {"objective.data_seed",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data_seed = to_u64(k, v); }},
        {"objective.init_radius",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.init_radius = to_positive(k, v); }},
        {"objective.source",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v != "synth" && v != "csv") {
                 throw ConfigError(k + ": expected synth or csv, got '" + v + "'");
             }
             c.source = v;
         }},
        {"objective.csv",
         [](ExperimentConfig& c, const std::string&, const std::string& v) { c.csv_path = v; }},
        {"objective.l_star",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v == "auto") {
                 c.l_star_auto = true;
                 c.l_star_value = 0.0;
             } else {
                 c.l_star_auto = false;
                 c.l_star_value = to_nonneg(k, v);
             }
         }},
        {"clients.N",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.clients = to_count(k, v, 1); }},
        {"clients.partition",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v != "contiguous" && v != "striped") {
                 throw ConfigError(k + ": expected contiguous or striped, got '" + v + "'");
             }
             c.partition_policy = v;
         }},
        {"fedavg.K",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.local_steps = to_count(k, v, 1); }},
        {"fedavg.eta_l",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v == "auto") {
                 c.eta_l_auto = true;
                 c.eta_l = 0.0;
             } else {
                 c.eta_l_auto = false;
                 c.eta_l = to_positive(k, v);
             }
         }},
        {"fedavg.eta_g",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v == "auto") {
                 c.eta_g_auto = true;
                 c.eta_g = 0.0;
             } else {
                 c.eta_g_auto = false;
                 c.eta_g = to_positive(k, v);
             }
         }},
        {"fedavg.R",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v == "auto") {
                 c.rounds_auto = true;
                 c.rounds = 0;
             } else {
                 c.rounds_auto = false;
                 c.rounds = to_count(k, v, 1);
             }
         }},
        {"fedavg.B",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.batch_size = to_count(k, v, 1); }},
        {"fedavg.full_batch",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.full_batch = to_bool(k, v); }},
        {"gd.steps",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.gd_steps = to_count(k, v, 0); }},
        {"probe.radius",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.probe_radius = to_positive(k, v); }},
        {"probe.pairs",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.probe_pairs = to_count(k, v, 1); }},
        {"probe.M",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.probe_resamples = to_count(k, v, 2); }},
        {"probe.sigma_points",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.probe_sigma_points = to_count(k, v, 1);
         }},
        {"probe.seed",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.probe_seed = to_u64(k, v); }},
        {"constants.a",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.const_a = to_nonneg(k, v); }},
        {"constants.b",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.const_b = to_nonneg(k, v); }},
        {"constants.alpha",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.const_alpha = to_nonneg(k, v); }},
        {"constants.beta",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.const_beta = to_nonneg(k, v); }},
        {"constants.tau1",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.const_tau1 = to_nonneg(k, v); }},
        {"constants.tau2",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.const_tau2 = to_positive(k, v); }},
        {"constants.sigma",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.const_sigma = to_nonneg(k, v); }},
        {"epsilon",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.epsilon = to_positive(k, v); }},
        {"seeds",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             std::vector<std::uint64_t> seeds;
             std::stringstream ss(v);
             std::string tok;
             while (std::getline(ss, tok, ',')) {
                 seeds.push_back(to_u64(k, trim(tok)));
             }
             if (seeds.empty()) {
                 throw ConfigError(k + ": must list at least one seed");
             }
             std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
             if (uniq.size() != seeds.size()) {
                 throw ConfigError(k + ": seeds must be distinct");
             }
             c.seeds = std::move(seeds);
         }},
        {"out", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
    };
    return table;
}

ParamVector unit_direction(StreamRng& rng, std::size_t dim) {
    std::vector<double> dir(dim);
    double nsq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
        dir[j] = rng.next_normal();
        nsq += dir[j] * dir[j];
    }
    if (nsq == 0.0) {
        dir[0] = 1.0;
        nsq = 1.0;
    }
    double inv = 1.0 / std::sqrt(nsq);
    for (double& v : dir) {
        v *= inv;
    }
    return ParamVector(std::move(dir));
}

std::vector<double> normal_vector(StreamRng& rng, std::size_t dim, double scale) {
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        v[j] = scale * rng.next_normal();
    }
    return v;
}

} // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        std::size_t hash_pos = line.find('#');
        if (hash_pos != std::string::npos) {
            line = line.substr(0, hash_pos);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto it = schema().find(key);
        if (it == schema().end()) {
            throw ConfigError("unknown key '" + key + "' (line " + std::to_string(lineno) + ")");
        }
        if (!seen.insert(key).second) {
            throw ConfigError("duplicate key '" + key + "' (line " + std::to_string(lineno) + ")");
        }
        it->second(cfg, key, value);
    }
    for (const char* required : {"objective.kind", "clients.N", "fedavg.K"}) {
        if (!seen.count(required)) {
            throw ConfigError(std::string("missing required key '") + required + "'");
        }
    }
    if (cfg.source == "csv" && cfg.csv_path.empty()) {
        throw ConfigError("objective.csv: required when objective.source = csv");
    }
    return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    auto line = [&out](const std::string& key, const std::string& value) {
        out += key + " = " + value + "\n";
    };
    line("objective.kind", cfg.kind);
    line("objective.d", std::to_string(cfg.dim));
    line("objective.hidden", std::to_string(cfg.hidden));
    line("objective.n", std::to_string(cfg.points));
    line("objective.spread", fmt_double(cfg.spread));
    line("objective.jitter", fmt_double(cfg.jitter));
    line("objective.data_seed", std::to_string(cfg.data_seed));
    line("objective.init_radius", fmt_double(cfg.init_radius));
    line("objective.source", cfg.source);
    if (!cfg.csv_path.empty()) {
        line("objective.csv", cfg.csv_path);
    }
    line("objective.l_star", cfg.l_star_auto ? "auto" : fmt_double(cfg.l_star_value));
    line("clients.N", std::to_string(cfg.clients));
    line("clients.partition", cfg.partition_policy);
    line("fedavg.K", std::to_string(cfg.local_steps));
    line("fedavg.eta_l", cfg.eta_l_auto ? "auto" : fmt_double(cfg.eta_l));
    line("fedavg.eta_g", cfg.eta_g_auto ? "auto" : fmt_double(cfg.eta_g));
    line("fedavg.R", cfg.rounds_auto ? "auto" : std::to_string(cfg.rounds));
    line("fedavg.B", std::to_string(cfg.batch_size));
    line("fedavg.full_batch", cfg.full_batch ? "true" : "false");
    line("gd.steps", std::to_string(cfg.gd_steps));
    line("probe.radius", fmt_double(cfg.probe_radius));
    line("probe.pairs", std::to_string(cfg.probe_pairs));
    line("probe.M", std::to_string(cfg.probe_resamples));
    line("probe.sigma_points", std::to_string(cfg.probe_sigma_points));
    line("probe.seed", std::to_string(cfg.probe_seed));
    if (cfg.const_a) line("constants.a", fmt_double(*cfg.const_a));
    if (cfg.const_b) line("constants.b", fmt_double(*cfg.const_b));
    if (cfg.const_alpha) line("constants.alpha", fmt_double(*cfg.const_alpha));
    if (cfg.const_beta) line("constants.beta", fmt_double(*cfg.const_beta));
    if (cfg.const_tau1) line("constants.tau1", fmt_double(*cfg.const_tau1));
    if (cfg.const_tau2) line("constants.tau2", fmt_double(*cfg.const_tau2));
    if (cfg.const_sigma) line("constants.sigma", fmt_double(*cfg.const_sigma));
    line("epsilon", fmt_double(cfg.epsilon));
    {
        std::string seeds;
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
            if (i > 0) seeds += ',';
            seeds += std::to_string(cfg.seeds[i]);
        }
        line("seeds", seeds);
    }
    line("out", cfg.out_dir);
    return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
    return fnv1a_hex(serialize_config(cfg));
}

SynthesizedExperiment synthesize_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.clients > cfg.points) {
        throw ConfigError("clients.N: more clients than data points");
    }
    SynthesizedExperiment out;
    out.partition = cfg.partition_policy == "striped" ? ClientPartition::striped(cfg.points, cfg.clients)
                                                      : ClientPartition::contiguous(cfg.points, cfg.clients);
    std::size_t d = cfg.dim, n = cfg.points;
    std::vector<std::size_t> client_of(n);
    for (std::size_t c = 0; c < out.partition.clients(); ++c) {
        for (std::size_t i : out.partition.shard(c)) {
            client_of[i] = c;
        }
    }

    if (cfg.kind == "quadratic") {
        StreamRng base_rng = StreamRng::keyed(seed, {stream_purpose::dataset, 10});
        std::vector<double> base = normal_vector(base_rng, d, 1.0 / std::sqrt(static_cast<double>(d)));
        std::vector<std::vector<double>> offsets(cfg.clients);
        for (std::size_t c = 0; c < cfg.clients; ++c) {
            StreamRng rng = StreamRng::keyed(seed, {stream_purpose::dataset, 11, c});
            offsets[c] = normal_vector(rng, d, cfg.spread);
        }
        std::vector<std::vector<double>> jitters(n);
        for (std::size_t i = 0; i < n; ++i) {
            StreamRng rng = StreamRng::keyed(seed, {stream_purpose::dataset, 12, i});
            jitters[i] = normal_vector(rng, d, cfg.jitter);
        }
        // De-mean the jitter per shard so the shard mean (the client optimum)
        // sits exactly at base + offset_c regardless of the jitter scale.
        std::vector<double> xs(n * d);
        for (std::size_t c = 0; c < cfg.clients; ++c) {
            const Shard& shard = out.partition.shard(c);
            std::vector<double> mean(d, 0.0);
            for (std::size_t i : shard) {
                for (std::size_t j = 0; j < d; ++j) {
                    mean[j] += jitters[i][j];
                }
            }
            for (std::size_t j = 0; j < d; ++j) {
                mean[j] /= static_cast<double>(shard.size());
            }
            for (std::size_t i : shard) {
                for (std::size_t j = 0; j < d; ++j) {
                    xs[i * d + j] = base[j] + offsets[c][j] + (jitters[i][j] - mean[j]);
                }
            }
        }
        out.data = LabeledDataset(d, std::move(xs), std::vector<double>(n, 0.0));
        // anchor = global minimizer = mean over clients of shard means
        std::vector<double> anchor(d, 0.0);
        for (std::size_t c = 0; c < cfg.clients; ++c) {
            const Shard& shard = out.partition.shard(c);
            std::vector<double> m(d, 0.0);
            for (std::size_t i : shard) {
                for (std::size_t j = 0; j < d; ++j) {
                    m[j] += out.data.x_row(i)[j];
                }
            }
            for (std::size_t j = 0; j < d; ++j) {
                anchor[j] += m[j] / static_cast<double>(shard.size());
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            anchor[j] /= static_cast<double>(cfg.clients);
        }
        out.anchor = ParamVector(std::move(anchor));
        return out;
    }

    if (cfg.kind == "linear-ls") {
        std::vector<double> xs(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            StreamRng rng = StreamRng::keyed(seed, {stream_purpose::dataset, 13, i});
            std::vector<double> row = normal_vector(rng, d, 1.0 / std::sqrt(static_cast<double>(d)));
            std::copy(row.begin(), row.end(), xs.begin() + static_cast<std::ptrdiff_t>(i * d));
        }
        StreamRng w_rng = StreamRng::keyed(seed, {stream_purpose::dataset, 14});
        std::vector<double> w_true = normal_vector(w_rng, d, 1.0);
        std::vector<double> shifts(cfg.clients);
        for (std::size_t c = 0; c < cfg.clients; ++c) {
            StreamRng rng = StreamRng::keyed(seed, {stream_purpose::dataset, 15, c});
            shifts[c] = cfg.spread * rng.next_normal();
        }
        std::vector<double> ys(n);
        for (std::size_t i = 0; i < n; ++i) {
            StreamRng rng = StreamRng::keyed(seed, {stream_purpose::dataset, 16, i});
            double dot_wx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dot_wx += xs[i * d + j] * w_true[j];
            }
            ys[i] = dot_wx + shifts[client_of[i]] + cfg.jitter * rng.next_normal();
        }
        out.data = LabeledDataset(d, std::move(xs), std::move(ys));
        out.anchor = ParamVector(std::move(w_true));
        return out;
    }

    // two-layer-relu: unit-norm inputs, labels from a random teacher network
    std::size_t hidden = cfg.hidden;
    std::vector<double> xs(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        StreamRng rng = StreamRng::keyed(seed, {stream_purpose::dataset, 17, i});
        std::vector<double> row = normal_vector(rng, d, 1.0);
        double nsq = 0.0;
        for (double v : row) {
            nsq += v * v;
        }
        if (nsq == 0.0) {
            row[0] = 1.0;
            nsq = 1.0;
        }
        double inv = 1.0 / std::sqrt(nsq);
        for (std::size_t j = 0; j < d; ++j) {
            xs[i * d + j] = row[j] * inv;
        }
    }
    StreamRng t_rng = StreamRng::keyed(seed, {stream_purpose::dataset, 18});
    std::vector<double> teacher = normal_vector(t_rng, hidden * d, 1.0 / std::sqrt(static_cast<double>(d)));
    StreamRng s_rng = StreamRng::keyed(seed, {stream_purpose::dataset, 19});
    std::vector<double> t_signs(hidden);
    for (std::size_t h = 0; h < hidden; ++h) {
        t_signs[h] = (s_rng.next_u64() & 1ULL) ? 1.0 : -1.0;
    }
    std::vector<double> shifts(cfg.clients);
    for (std::size_t c = 0; c < cfg.clients; ++c) {
        StreamRng rng = StreamRng::keyed(seed, {stream_purpose::dataset, 20, c});
        shifts[c] = cfg.spread * rng.next_normal();
    }
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        StreamRng rng = StreamRng::keyed(seed, {stream_purpose::dataset, 21, i});
        double f = 0.0;
        for (std::size_t h = 0; h < hidden; ++h) {
            double pre = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                pre += teacher[h * d + j] * xs[i * d + j];
            }
            if (pre > 0.0) {
                f += t_signs[h] * pre;
            }
        }
        ys[i] = f + shifts[client_of[i]] + cfg.jitter * rng.next_normal();
    }
    out.data = LabeledDataset(d, std::move(xs), std::move(ys));
    out.anchor = ParamVector::zeros(hidden * d);
    return out;
}

ParamVector make_init(const ExperimentConfig& cfg, const SynthesizedExperiment& synth) {
    StreamRng rng = StreamRng::keyed(cfg.data_seed, {stream_purpose::init});
    if (cfg.kind == "two-layer-relu") {
        std::size_t dim = cfg.hidden * cfg.dim;
        std::vector<double> w =
            normal_vector(rng, dim, cfg.init_radius / std::sqrt(static_cast<double>(cfg.dim)));
        return ParamVector(std::move(w));
    }
    ParamVector dir = unit_direction(rng, synth.anchor.dim());
    return axpy(synth.anchor, cfg.init_radius, dir);
}

ExperimentContext build_context(const ExperimentConfig& cfg) {
    ExperimentContext ctx;
    ctx.cfg = cfg;
    ctx.objective = make_objective(cfg.kind, cfg.dim, cfg.hidden, cfg.data_seed);
    if (cfg.source == "csv") {
        LabeledDataset data = load_dataset_csv(cfg.csv_path);
        if (data.d() != cfg.dim) {
            throw ConfigError("objective.d (" + std::to_string(cfg.dim) + ") does not match csv dimension (" +
                              std::to_string(data.d()) + ")");
        }
        SynthesizedExperiment synth;
        synth.partition = cfg.partition_policy == "striped"
                              ? ClientPartition::striped(data.n(), cfg.clients)
                              : ClientPartition::contiguous(data.n(), cfg.clients);
        synth.data = std::move(data);
        if (cfg.kind == "quadratic") {
            // natural anchor: mean of shard means
            std::vector<double> anchor(cfg.dim, 0.0);
            for (std::size_t c = 0; c < synth.partition.clients(); ++c) {
                const Shard& shard = synth.partition.shard(c);
                std::vector<double> m(cfg.dim, 0.0);
                for (std::size_t i : shard) {
                    for (std::size_t j = 0; j < cfg.dim; ++j) {
                        m[j] += synth.data.x_row(i)[j];
                    }
                }
                for (std::size_t j = 0; j < cfg.dim; ++j) {
                    anchor[j] += m[j] / static_cast<double>(shard.size());
                }
            }
            for (std::size_t j = 0; j < cfg.dim; ++j) {
                anchor[j] /= static_cast<double>(synth.partition.clients());
            }
            synth.anchor = ParamVector(std::move(anchor));
        } else {
            synth.anchor = ParamVector::zeros(ctx.objective->dim());
        }
        ctx.init = make_init(cfg, synth);
        ctx.data = std::move(synth.data);
        ctx.partition = std::move(synth.partition);
    } else {
        SynthesizedExperiment synth = synthesize_dataset(cfg, cfg.data_seed);
        ctx.init = make_init(cfg, synth);
        ctx.data = std::move(synth.data);
        ctx.partition = std::move(synth.partition);
    }
    ctx.hash = config_hash(cfg);
    return ctx;
}

double estimate_l_star(const ObjectiveBundle& bundle, const ParamVector& init,
                       const AssumptionConstants& constants) {
    double eta;
    try {
        eta = plan_gd(constants).eta;
    } catch (const PlanError&) {
        eta = constants.b > 0.0 ? std::min(0.2 / constants.b, 1.0) : 0.1;
    }
    ParamVector x = init;
    double current = bundle.loss(x);
    double best = current;
    for (std::size_t t = 0; t < 4000 && eta > 1e-12; ++t) {
        ParamVector g = bundle.grad(x);
        if (norm_sq(g) < 1e-20) {
            break;
        }
        ParamVector next;
        try {
            next = axpy(x, -eta, g);
        } catch (const NumericError&) {
            eta *= 0.5;
            continue;
        }
        double next_loss = bundle.loss(next);
        if (next_loss > current) {
            eta *= 0.5;
            continue;
        }
        x = std::move(next);
        current = next_loss;
        best = std::min(best, current);
    }
    return best;
}

ProbeArtifact stage_probe(const ExperimentContext& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    ProbeArtifact artifact;
    artifact.seed = cfg.probe_seed;
    artifact.config_hash = ctx.hash;

    bool all_overridden = cfg.const_a && cfg.const_b && cfg.const_alpha && cfg.const_beta &&
                          cfg.const_tau1 && cfg.const_tau2 && cfg.const_sigma;
    if (!all_overridden) {
        ObjectiveBundle bundle = global_bundle(*ctx.objective, ctx.data, ctx.partition);
        ProbeRegion region{ctx.init, cfg.probe_radius, cfg.probe_pairs, cfg.probe_seed};
        SmoothnessFit smooth = estimate_semi_smoothness(bundle, region);
        LipschitzFit lips = estimate_semi_lipschitz(bundle, region);
        NoCriticalFit tau = estimate_no_critical_point(bundle, region);
        SigmaEstimate sig = estimate_sigma(*ctx.objective, ctx.data, ctx.partition, region, cfg.batch_size,
                                           cfg.probe_resamples, cfg.probe_sigma_points);
        artifact.constants =
            AssumptionConstants{smooth.a, smooth.b, lips.alpha, lips.beta, tau.tau1, tau.tau2, sig.sigma};
        artifact.samples = cfg.probe_pairs;
        artifact.tau1_positive = !tau.gradient_vanishes;
        artifact.tau1_below_one = tau.tau1_below_one;
        artifact.worst_fit_margin = std::max(smooth.diag.worst_margin, lips.diag.worst_margin);
    }
    if (cfg.const_a) artifact.constants.a = *cfg.const_a;
    if (cfg.const_b) artifact.constants.b = *cfg.const_b;
    if (cfg.const_alpha) artifact.constants.alpha = *cfg.const_alpha;
    if (cfg.const_beta) artifact.constants.beta = *cfg.const_beta;
    if (cfg.const_tau1) artifact.constants.tau1 = *cfg.const_tau1;
    if (cfg.const_tau2) artifact.constants.tau2 = *cfg.const_tau2;
    if (cfg.const_sigma) artifact.constants.sigma = *cfg.const_sigma;
    return artifact;
}

PlanArtifact stage_plan(const ExperimentContext& ctx, const ProbeArtifact& probe) {
    const ExperimentConfig& cfg = ctx.cfg;
    PlanArtifact artifact;
    artifact.config_hash = ctx.hash;
    artifact.constants = probe.constants;
    if (cfg.full_batch) {
        artifact.constants.sigma = 0.0; // exact local gradients in this regime
    }
    const AssumptionConstants& constants = artifact.constants;

    ObjectiveBundle bundle = global_bundle(*ctx.objective, ctx.data, ctx.partition);
    artifact.l_star = cfg.l_star_auto ? estimate_l_star(bundle, ctx.init, constants) : cfg.l_star_value;
    artifact.initial_gap = bundle.loss(ctx.init) - artifact.l_star;

    RatePlan plan;
    plan.local_steps = cfg.local_steps;
    plan.eta_l = cfg.eta_l_auto ? plan_local_rate(constants, cfg.local_steps) : cfg.eta_l;
    if (cfg.eta_g_auto) {
        plan.eta_g = plan_global_rate(constants, cfg.local_steps, plan.eta_l);
        if (cfg.rounds_auto && constants.sigma > 0.0) {
            plan.eta_g = std::min(plan.eta_g, corollary_eta_g_cap(constants, cfg.local_steps, cfg.epsilon));
        }
    } else {
        plan.eta_g = cfg.eta_g;
    }
    Lambdas lambdas = compute_lambdas(constants, cfg.local_steps, plan.eta_l, plan.eta_g);
    plan.eta_tilde = static_cast<double>(cfg.local_steps) * plan.eta_l * plan.eta_g;
    plan.lambda1 = lambdas.lambda1;
    plan.lambda2 = lambdas.lambda2;
    plan.sigma_used = lambdas.sigma_used;
    if (cfg.rounds_auto) {
        if (!(artifact.initial_gap > 0.0)) {
            plan.rounds = 0;
        } else {
            plan.rounds = plan_rounds(cfg.epsilon, artifact.initial_gap, plan.lambda1);
        }
        plan.epsilon_target = cfg.epsilon;
    } else {
        plan.rounds = cfg.rounds;
    }
    artifact.plan = plan;

    artifact.gd_steps = cfg.gd_steps;
    if (cfg.gd_steps > 0) {
        try {
            artifact.gd = plan_gd(constants);
        } catch (const PlanError& e) {
            artifact.gd_note = e.what();
        }
    } else {
        artifact.gd_note = "gd baseline disabled";
    }
    return artifact;
}

void stage_run(const ExperimentContext& ctx, const PlanArtifact& plan_artifact,
               std::optional<std::uint64_t> only_seed) {
    const ExperimentConfig& cfg = ctx.cfg;
    const RatePlan& plan = plan_artifact.plan;
    fs::create_directories(cfg.out_dir);

    std::vector<std::uint64_t> seeds = only_seed ? std::vector<std::uint64_t>{*only_seed} : cfg.seeds;
    auto run_one = [&](std::size_t idx) {
        std::uint64_t seed = seeds[idx];
        RunSeries series;
        if (plan.rounds >= 1) {
            FedConfig fed;
            fed.clients = cfg.clients;
            fed.local_steps = cfg.local_steps;
            fed.eta_l = plan.eta_l;
            fed.eta_g = plan.eta_g;
            fed.rounds = plan.rounds;
            fed.batch_size = cfg.batch_size;
            fed.master_seed = seed;
            fed.full_batch = cfg.full_batch;
            Trajectory traj = run_fedavg(*ctx.objective, ctx.data, ctx.partition, ctx.init, fed);
            series = series_from_trajectory(traj);
        } else {
            // already-converged plan: record the initial state only
            ObjectiveBundle bundle = global_bundle(*ctx.objective, ctx.data, ctx.partition);
            series.loss.push_back(bundle.loss(ctx.init));
            series.grad_norm_sq.push_back(norm_sq(bundle.grad(ctx.init)));
            series.xi_pre.push_back(0.0);
            series.xi_post.push_back(0.0);
            series.full_batch = cfg.full_batch;
        }
        series.seed = seed;
        series.config_hash = ctx.hash;
        std::vector<double> drift_col(series.loss.size()), env_col(series.loss.size());
        for (std::size_t r = 0; r < series.loss.size(); ++r) {
            drift_col[r] = drift_bound_tight(series.loss[r], plan.eta_l, plan.local_steps,
                                             plan_artifact.constants.tau2, plan.sigma_used);
            env_col[r] = envelope_bound(plan, plan_artifact.initial_gap, r);
        }
        write_text_file(cfg.out_dir + "/run_" + std::to_string(seed) + ".csv",
                        format_run_csv(series, drift_col, env_col));
    };
    auto started = std::chrono::steady_clock::now();
    parallel_for(seeds.size(), run_one);

    if (cfg.gd_steps > 0 && plan_artifact.gd.has_value()) {
        ObjectiveBundle bundle = global_bundle(*ctx.objective, ctx.data, ctx.partition);
        Trajectory traj = run_gd(bundle, ctx.init, plan_artifact.gd->eta, cfg.gd_steps);
        RunSeries series = series_from_trajectory(traj);
        series.seed = 0;
        series.config_hash = ctx.hash;
        std::vector<double> nan_col(series.loss.size(), std::nan(""));
        write_text_file(cfg.out_dir + "/run_gd.csv", format_run_csv(series, nan_col, nan_col));
    }

    ManifestArtifact manifest;
    manifest.config_text = serialize_config(cfg);
    manifest.constants = plan_artifact.constants;
    manifest.seeds = seeds;
    manifest.config_hash = ctx.hash;
    manifest.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    write_text_file(cfg.out_dir + "/manifest.json", to_json_text(manifest));
}

VerdictArtifact stage_verify(const ExperimentConfig& cfg) {
    std::string out = cfg.out_dir;
    std::string expected_hash = config_hash(cfg);
    PlanArtifact plan = plan_artifact_from_json(read_text_file(out + "/plan.json"));
    ManifestArtifact manifest = manifest_artifact_from_json(read_text_file(out + "/manifest.json"));
    if (plan.config_hash != expected_hash) {
        throw ConfigError("verify: plan.json config hash mismatch (" + plan.config_hash + " vs " +
                          expected_hash + ")");
    }
    if (manifest.config_hash != expected_hash) {
        throw ConfigError("verify: manifest.json config hash mismatch");
    }

    std::vector<RunSeries> runs;
    runs.reserve(manifest.seeds.size());
    for (std::uint64_t seed : manifest.seeds) {
        RunCsv csv = parse_run_csv(read_text_file(out + "/run_" + std::to_string(seed) + ".csv"));
        if (csv.series.config_hash != expected_hash) {
            throw ConfigError("verify: run_" + std::to_string(seed) + ".csv config hash mismatch");
        }
        runs.push_back(std::move(csv.series));
    }

    VerdictArtifact verdict;
    verdict.config_hash = expected_hash;

    EnvelopeReport envelope = check_envelope(runs, plan.plan, plan.l_star);
    verdict.envelope = envelope.pass ? "pass" : "fail";
    verdict.details.push_back("envelope: seeds=" + std::to_string(envelope.seeds_used) +
                              (envelope.deterministic ? " policy=deterministic" : " policy=seed-mean") +
                              (envelope.first_violation
                                   ? " first_violation=" + std::to_string(*envelope.first_violation)
                                   : std::string(" all rounds within bound")));

    bool drift_vacuous = false;
    bool drift_pass = true;
    std::string drift_note;
    for (const RunSeries& run : runs) {
        DriftReport report =
            check_drift_bound(run, plan.constants, plan.plan.eta_l, plan.plan.local_steps, plan.plan.sigma_used);
        if (report.vacuous) {
            drift_vacuous = true;
            drift_note = report.vacuous_reason;
            break;
        }
        if (!report.pass) {
            drift_pass = false;
            drift_note = "seed " + std::to_string(run.seed) + " violates the drift bound at round " +
                         std::to_string(*report.first_violation);
            break;
        }
    }
    verdict.drift = drift_vacuous ? "vacuous" : (drift_pass ? "pass" : "fail");
    verdict.details.push_back("drift: " + (drift_note.empty() ? "both bound forms hold on every round" : drift_note));

    if (plan.gd.has_value() && fs::exists(out + "/run_gd.csv")) {
        RunCsv gd_csv = parse_run_csv(read_text_file(out + "/run_gd.csv"));
        if (gd_csv.series.config_hash != expected_hash) {
            throw ConfigError("verify: run_gd.csv config hash mismatch");
        }
        GdContractionReport gd =
            check_gd_contraction(gd_csv.series, plan.gd->eta, plan.constants, plan.l_star);
        verdict.gd = gd.vacuous ? "vacuous" : (gd.pass ? "pass" : "fail");
        verdict.details.push_back(
            "gd: " + (gd.vacuous ? gd.vacuous_reason
                                 : "worst per-step factor " + std::to_string(gd.worst_factor) +
                                       " against allowed " + std::to_string(1.0 - gd.lambda)));
    } else {
        verdict.gd = "vacuous";
        verdict.details.push_back("gd: " + (plan.gd_note.empty() ? std::string("no gd run present") : plan.gd_note));
    }

    write_text_file(out + "/verdict.json", to_json_text(verdict));
    return verdict;
}

int run_pipeline(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    ExperimentContext ctx = build_context(cfg);
    ProbeArtifact probe = stage_probe(ctx);
    write_text_file(cfg.out_dir + "/probe.json", to_json_text(probe));
    PlanArtifact plan = stage_plan(ctx, probe);
    write_text_file(cfg.out_dir + "/plan.json", to_json_text(plan));
    stage_run(ctx, plan, std::nullopt);
    VerdictArtifact verdict = stage_verify(cfg);
    return verdict.exit_code();
}

} // namespace fedlab
