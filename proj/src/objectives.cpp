#include "fedlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fedlab/errors.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

LabeledDataset::LabeledDataset(std::size_t d, std::vector<double> x_rows, std::vector<double> y)
    : d_(d), x_(std::move(x_rows)), y_(std::move(y)) {
    if (d_ < 1 || y_.empty()) {
        throw ConfigError("dataset: need d >= 1 and n >= 1");
    }
    if (x_.size() != y_.size() * d_) {
        throw DimensionError("dataset: x storage does not match n*d");
    }
    for (double v : x_) {
        if (!std::isfinite(v)) throw NumericError("dataset: non-finite feature");
    }
    for (double v : y_) {
        if (!std::isfinite(v)) throw NumericError("dataset: non-finite label");
    }
}

ClientPartition::ClientPartition(std::size_t n, std::vector<Shard> shards) : shards_(std::move(shards)) {
    std::vector<char> seen(n, 0);
    std::size_t covered = 0;
    for (const Shard& s : shards_) {
        if (s.empty()) {
            throw PartitionError("partition: empty shard");
        }
        for (std::size_t i : s) {
            if (i >= n) {
                throw PartitionError("partition: index " + std::to_string(i) + " out of range");
            }
            if (seen[i]) {
                throw PartitionError("partition: index " + std::to_string(i) + " appears twice");
            }
            seen[i] = 1;
            ++covered;
        }
    }
    if (covered != n) {
        throw PartitionError("partition: shards do not cover [n]");
    }
}

ClientPartition ClientPartition::contiguous(std::size_t n, std::size_t clients) {
    if (clients < 1 || clients > n) {
        throw ConfigError("partition: need 1 <= N <= n");
    }
    std::vector<Shard> shards(clients);
    // Equal blocks; the first n % N shards take one extra point.
    std::size_t base = n / clients, extra = n % clients, at = 0;
    for (std::size_t c = 0; c < clients; ++c) {
        std::size_t len = base + (c < extra ? 1 : 0);
        for (std::size_t k = 0; k < len; ++k) {
            shards[c].push_back(at++);
        }
    }
    return ClientPartition(n, std::move(shards));
}

ClientPartition ClientPartition::striped(std::size_t n, std::size_t clients) {
    if (clients < 1 || clients > n) {
        throw ConfigError("partition: need 1 <= N <= n");
    }
    std::vector<Shard> shards(clients);
    for (std::size_t i = 0; i < n; ++i) {
        shards[i % clients].push_back(i);
    }
    return ClientPartition(n, std::move(shards));
}

BatchSampler::BatchSampler(std::size_t batch_size, std::uint64_t master_seed, std::uint64_t client,
                           std::uint64_t round, std::uint64_t step)
    : batch_size_(batch_size), master_seed_(master_seed), client_(client), round_(round), step_(step) {
    if (batch_size_ < 1) {
        throw ConfigError("batch sampler: batch size must be >= 1");
    }
}

std::vector<std::size_t> BatchSampler::draw(const Shard& shard) const {
    if (shard.empty()) {
        throw PartitionError("batch sampler: empty shard");
    }
    StreamRng rng = StreamRng::keyed(master_seed_, {stream_purpose::batch, client_, round_, step_});
    std::vector<std::size_t> idx(batch_size_);
    for (std::size_t b = 0; b < batch_size_; ++b) {
        idx[b] = shard[rng.below(shard.size())];
    }
    return idx;
}

void Objective::check_shard(const LabeledDataset& data, const Shard& shard) const {
    if (shard.empty()) {
        throw PartitionError("objective: empty shard");
    }
    for (std::size_t i : shard) {
        if (i >= data.n()) {
            throw PartitionError("objective: shard index " + std::to_string(i) + " out of range");
        }
    }
}

double Objective::local_loss(const LabeledDataset& data, const Shard& shard, const ParamVector& w) const {
    check_shard(data, shard);
    double acc = 0.0;
    for (std::size_t i : shard) {
        double r = residual(data, i, w);
        acc += r * r;
    }
    return 0.5 * acc;
}

ParamVector Objective::local_grad(const LabeledDataset& data, const Shard& shard, const ParamVector& w) const {
    check_shard(data, shard);
    std::vector<double> out(dim(), 0.0);
    for (std::size_t i : shard) {
        accumulate_point_grad(data, i, w, out);
    }
    return ParamVector(std::move(out));
}

ParamVector Objective::sample_term(const LabeledDataset& data, const Shard& shard, std::size_t i,
                                   const ParamVector& w) const {
    // E over a uniform shard index of m * point_grad equals the shard sum.
    std::vector<double> out(dim(), 0.0);
    accumulate_point_grad(data, i, w, out);
    double m = static_cast<double>(shard.size());
    for (double& v : out) {
        v *= m;
    }
    return ParamVector(std::move(out));
}

ParamVector QuadraticObjective::shard_center(const LabeledDataset& data, const Shard& shard) const {
    std::vector<double> c(d_, 0.0);
    for (std::size_t i : shard) {
        const double* row = data.x_row(i);
        for (std::size_t j = 0; j < d_; ++j) {
            c[j] += row[j];
        }
    }
    double inv = 1.0 / static_cast<double>(shard.size());
    for (double& v : c) {
        v *= inv;
    }
    return ParamVector(std::move(c));
}

double QuadraticObjective::residual(const LabeledDataset& data, std::size_t i, const ParamVector& w) const {
    const double* row = data.x_row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < d_; ++j) {
        double diff = w[j] - row[j];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

double QuadraticObjective::local_loss(const LabeledDataset& data, const Shard& shard, const ParamVector& w) const {
    check_shard(data, shard);
    return 0.5 * distance_sq(w, shard_center(data, shard));
}

ParamVector QuadraticObjective::local_grad(const LabeledDataset& data, const Shard& shard,
                                           const ParamVector& w) const {
    check_shard(data, shard);
    return axpy(w, -1.0, shard_center(data, shard));
}

ParamVector QuadraticObjective::sample_term(const LabeledDataset& data, const Shard& shard, std::size_t i,
                                            const ParamVector& w) const {
    (void)shard;
    std::vector<double> out(d_);
    const double* row = data.x_row(i);
    for (std::size_t j = 0; j < d_; ++j) {
        out[j] = w[j] - row[j];
    }
    return ParamVector(std::move(out));
}

void QuadraticObjective::accumulate_point_grad(const LabeledDataset&, std::size_t, const ParamVector&,
                                               std::vector<double>&) const {
    throw NumericError("quadratic kind has no per-point sum-form gradient");
}

double LinearLeastSquares::residual(const LabeledDataset& data, std::size_t i, const ParamVector& w) const {
    const double* row = data.x_row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < d_; ++j) {
        acc += row[j] * w[j];
    }
    return acc - data.y(i);
}

void LinearLeastSquares::accumulate_point_grad(const LabeledDataset& data, std::size_t i, const ParamVector& w,
                                               std::vector<double>& out) const {
    double r = residual(data, i, w);
    const double* row = data.x_row(i);
    for (std::size_t j = 0; j < d_; ++j) {
        out[j] += r * row[j];
    }
}

TwoLayerRelu::TwoLayerRelu(std::size_t d, std::size_t hidden, std::uint64_t sign_seed)
    : d_(d), hidden_(hidden) {
    if (hidden_ < 1) {
        throw ConfigError("two-layer-relu: hidden width must be >= 1");
    }
    StreamRng rng = StreamRng::keyed(sign_seed, {stream_purpose::dataset, 0x516e5ULL});
    signs_.resize(hidden_);
    for (std::size_t h = 0; h < hidden_; ++h) {
        signs_[h] = (rng.next_u64() & 1ULL) ? 1.0 : -1.0;
    }
}

double TwoLayerRelu::forward(const LabeledDataset& data, std::size_t i, const ParamVector& w) const {
    const double* row = data.x_row(i);
    double f = 0.0;
    for (std::size_t h = 0; h < hidden_; ++h) {
        double pre = 0.0;
        for (std::size_t j = 0; j < d_; ++j) {
            pre += w[h * d_ + j] * row[j];
        }
        if (pre > 0.0) {
            f += signs_[h] * pre;
        }
    }
    return f;
}

double TwoLayerRelu::residual(const LabeledDataset& data, std::size_t i, const ParamVector& w) const {
    return forward(data, i, w) - data.y(i);
}

void TwoLayerRelu::accumulate_point_grad(const LabeledDataset& data, std::size_t i, const ParamVector& w,
                                         std::vector<double>& out) const {
    double r = residual(data, i, w);
    const double* row = data.x_row(i);
    for (std::size_t h = 0; h < hidden_; ++h) {
        double pre = 0.0;
        for (std::size_t j = 0; j < d_; ++j) {
            pre += w[h * d_ + j] * row[j];
        }
        if (pre > 0.0) {
            double scale = r * signs_[h];
            for (std::size_t j = 0; j < d_; ++j) {
                out[h * d_ + j] += scale * row[j];
            }
        }
    }
}

std::unique_ptr<Objective> make_objective(const std::string& kind, std::size_t d, std::size_t hidden,
                                          std::uint64_t sign_seed) {
    if (kind == "quadratic") {
        return std::make_unique<QuadraticObjective>(d);
    }
    if (kind == "linear-ls") {
        return std::make_unique<LinearLeastSquares>(d);
    }
    if (kind == "two-layer-relu") {
        return std::make_unique<TwoLayerRelu>(d, hidden, sign_seed);
    }
    throw ConfigError("unknown objective kind: " + kind);
}

double global_loss(const Objective& obj, const LabeledDataset& data, const ClientPartition& part,
                   const ParamVector& w) {
    double acc = 0.0;
    for (std::size_t c = 0; c < part.clients(); ++c) {
        acc += obj.local_loss(data, part.shard(c), w);
    }
    return acc / static_cast<double>(part.clients());
}

ParamVector global_grad(const Objective& obj, const LabeledDataset& data, const ClientPartition& part,
                        const ParamVector& w) {
    ParamVector sum = ParamVector::zeros(obj.dim());
    for (std::size_t c = 0; c < part.clients(); ++c) {
        sum = axpy(sum, 1.0, obj.local_grad(data, part.shard(c), w));
    }
    return axpy(ParamVector::zeros(obj.dim()), 1.0 / static_cast<double>(part.clients()), sum);
}

ParamVector stoch_grad(const Objective& obj, const LabeledDataset& data, const Shard& shard,
                       const ParamVector& w, const BatchSampler& sampler) {
    std::vector<std::size_t> idx = sampler.draw(shard);
    ParamVector acc = ParamVector::zeros(obj.dim());
    for (std::size_t i : idx) {
        acc = axpy(acc, 1.0, obj.sample_term(data, shard, i, w));
    }
    return axpy(ParamVector::zeros(obj.dim()), 1.0 / static_cast<double>(idx.size()), acc);
}

ObjectiveBundle global_bundle(const Objective& obj, const LabeledDataset& data, const ClientPartition& part) {
    ObjectiveBundle b;
    b.dim = obj.dim();
    b.loss = [&obj, &data, &part](const ParamVector& w) { return global_loss(obj, data, part, w); };
    b.grad = [&obj, &data, &part](const ParamVector& w) { return global_grad(obj, data, part, w); };
    return b;
}

ObjectiveBundle local_bundle(const Objective& obj, const LabeledDataset& data, const Shard& shard) {
    ObjectiveBundle b;
    b.dim = obj.dim();
    b.loss = [&obj, &data, &shard](const ParamVector& w) { return obj.local_loss(data, shard, w); };
    b.grad = [&obj, &data, &shard](const ParamVector& w) { return obj.local_grad(data, shard, w); };
    return b;
}

LabeledDataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open dataset file: " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw IoError("dataset file is empty: " + path);
    }
    // Header must be exactly x_1,..,x_d,y.
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            cols.push_back(tok);
        }
    }
    if (cols.size() < 2 || cols.back() != "y") {
        throw IoError("dataset header must be x_1,..,x_d,y");
    }
    std::size_t d = cols.size() - 1;
    for (std::size_t j = 0; j < d; ++j) {
        if (cols[j] != "x_" + std::to_string(j + 1)) {
            throw IoError("dataset header column " + std::to_string(j + 1) + " must be x_" +
                          std::to_string(j + 1));
        }
    }
    std::vector<double> xs, ys;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string tok;
        std::vector<double> row;
        while (std::getline(ss, tok, ',')) {
            try {
                row.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw IoError("dataset line " + std::to_string(lineno) + ": bad number '" + tok + "'");
            }
        }
        if (row.size() != d + 1) {
            throw IoError("dataset line " + std::to_string(lineno) + ": expected " +
                          std::to_string(d + 1) + " columns");
        }
        xs.insert(xs.end(), row.begin(), row.begin() + static_cast<std::ptrdiff_t>(d));
        ys.push_back(row.back());
    }
    return LabeledDataset(d, std::move(xs), std::move(ys));
}

} // namespace fedlab
