#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fedlab/numerics.hpp"

namespace fedlab {

using Shard = std::vector<std::size_t>;

// n labeled points (x in R^d, y scalar), row-major storage.
class LabeledDataset {
public:
    LabeledDataset() = default;
    LabeledDataset(std::size_t d, std::vector<double> x_rows, std::vector<double> y);

    std::size_t n() const { return y_.size(); }
    std::size_t d() const { return d_; }
    const double* x_row(std::size_t i) const { return x_.data() + i * d_; }
    double y(std::size_t i) const { return y_[i]; }
    const std::vector<double>& x_flat() const { return x_; }
    const std::vector<double>& y_all() const { return y_; }

private:
    std::size_t d_ = 0;
    std::vector<double> x_;
    std::vector<double> y_;
};

// Disjoint shards S_1..S_N covering [n], every shard non-empty.
class ClientPartition {
public:
    ClientPartition() = default;
    ClientPartition(std::size_t n, std::vector<Shard> shards);

    std::size_t clients() const { return shards_.size(); }
    const Shard& shard(std::size_t c) const { return shards_[c]; }
    const std::vector<Shard>& shards() const { return shards_; }

    static ClientPartition contiguous(std::size_t n, std::size_t clients);
    static ClientPartition striped(std::size_t n, std::size_t clients);

private:
    std::vector<Shard> shards_;
};

// Uniform-with-replacement batch draws from a shard. The draw is a pure
// function of the stream identifier (master seed, client, round, step), so
// the same identifier always yields the same batch.
class BatchSampler {
public:
    BatchSampler(std::size_t batch_size, std::uint64_t master_seed, std::uint64_t client,
                 std::uint64_t round, std::uint64_t step);

    std::size_t batch_size() const { return batch_size_; }
    std::vector<std::size_t> draw(const Shard& shard) const;

private:
    std::size_t batch_size_;
    std::uint64_t master_seed_, client_, round_, step_;
};

// A loss family. Data-driven kinds define the local loss as half the sum of
// squared residuals over the shard; the quadratic kind overrides the closed
// form 0.5*||W - mean_{i in S_c} x_i||^2. sample_term(i) is the single-draw
// stochastic gradient contribution whose expectation under a uniform index
// draw from the shard equals local_grad.
class Objective {
public:
    virtual ~Objective() = default;

    virtual std::string kind() const = 0;
    virtual std::size_t dim() const = 0;

    virtual double residual(const LabeledDataset& data, std::size_t i, const ParamVector& w) const = 0;

    virtual double local_loss(const LabeledDataset& data, const Shard& shard, const ParamVector& w) const;
    virtual ParamVector local_grad(const LabeledDataset& data, const Shard& shard, const ParamVector& w) const;
    virtual ParamVector sample_term(const LabeledDataset& data, const Shard& shard, std::size_t i,
                                    const ParamVector& w) const;

protected:
    // Gradient of 0.5 * residual(i)^2, accumulated into out.
    virtual void accumulate_point_grad(const LabeledDataset& data, std::size_t i, const ParamVector& w,
                                       std::vector<double>& out) const = 0;
    void check_shard(const LabeledDataset& data, const Shard& shard) const;
};

// L_c(W) = 0.5 * ||W - c_shard||^2 with c_shard the empirical shard mean of
// the x's. Exactly quadratic around the shard mean for any data; the
// single-draw term (W - x_i) is an unbiased gradient with per-point spread
// as the variance knob.
class QuadraticObjective final : public Objective {
public:
    explicit QuadraticObjective(std::size_t d) : d_(d) {}

    std::string kind() const override { return "quadratic"; }
    std::size_t dim() const override { return d_; }
    double residual(const LabeledDataset& data, std::size_t i, const ParamVector& w) const override;
    double local_loss(const LabeledDataset& data, const Shard& shard, const ParamVector& w) const override;
    ParamVector local_grad(const LabeledDataset& data, const Shard& shard, const ParamVector& w) const override;
    ParamVector sample_term(const LabeledDataset& data, const Shard& shard, std::size_t i,
                            const ParamVector& w) const override;

protected:
    void accumulate_point_grad(const LabeledDataset&, std::size_t, const ParamVector&,
                               std::vector<double>&) const override;

private:
    ParamVector shard_center(const LabeledDataset& data, const Shard& shard) const;
    std::size_t d_;
};

// Least squares on shard data: residual_i = <x_i, W> - y_i.
class LinearLeastSquares final : public Objective {
public:
    explicit LinearLeastSquares(std::size_t d) : d_(d) {}

    std::string kind() const override { return "linear-ls"; }
    std::size_t dim() const override { return d_; }
    double residual(const LabeledDataset& data, std::size_t i, const ParamVector& w) const override;

protected:
    void accumulate_point_grad(const LabeledDataset& data, std::size_t i, const ParamVector& w,
                               std::vector<double>& out) const override;

private:
    std::size_t d_;
};

// Two-layer network with trainable first layer and fixed random +-1 output
// layer: f(x; W) = sum_h v_h * relu(<w_h, x>), residual_i = f(x_i) - y_i.
// The derivative of relu at 0 is taken to be 0.
class TwoLayerRelu final : public Objective {
public:
    TwoLayerRelu(std::size_t d, std::size_t hidden, std::uint64_t sign_seed);

    std::string kind() const override { return "two-layer-relu"; }
    std::size_t dim() const override { return d_ * hidden_; }
    std::size_t hidden() const { return hidden_; }
    const std::vector<double>& output_signs() const { return signs_; }

    double forward(const LabeledDataset& data, std::size_t i, const ParamVector& w) const;
    double residual(const LabeledDataset& data, std::size_t i, const ParamVector& w) const override;

protected:
    void accumulate_point_grad(const LabeledDataset& data, std::size_t i, const ParamVector& w,
                               std::vector<double>& out) const override;

private:
    std::size_t d_;
    std::size_t hidden_;
    std::vector<double> signs_;
};

std::unique_ptr<Objective> make_objective(const std::string& kind, std::size_t d, std::size_t hidden,
                                          std::uint64_t sign_seed);

// Mean over clients of the local losses; the global gradient is computed as
// the client-mean of local gradients so aggregation linearity holds exactly.
double global_loss(const Objective& obj, const LabeledDataset& data, const ClientPartition& part,
                   const ParamVector& w);
ParamVector global_grad(const Objective& obj, const LabeledDataset& data, const ClientPartition& part,
                        const ParamVector& w);

// Mean of batch_size sampled single-draw terms; unbiased for local_grad and
// bit-reproducible given the sampler's stream identifier.
ParamVector stoch_grad(const Objective& obj, const LabeledDataset& data, const Shard& shard,
                       const ParamVector& w, const BatchSampler& sampler);

// Value/gradient closure over some function of a parameter point; the unit
// the probes and the GD baseline operate on.
struct ObjectiveBundle {
    std::size_t dim = 0;
    std::function<double(const ParamVector&)> loss;
    std::function<ParamVector(const ParamVector&)> grad;
};

ObjectiveBundle global_bundle(const Objective& obj, const LabeledDataset& data, const ClientPartition& part);
ObjectiveBundle local_bundle(const Objective& obj, const LabeledDataset& data, const Shard& shard);

// CSV import with mandatory header x_1,..,x_d,y.
LabeledDataset load_dataset_csv(const std::string& path);

} // namespace fedlab
