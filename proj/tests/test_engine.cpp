#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>

#include "fedlab/engine.hpp"
#include "fedlab/errors.hpp"
#include "fedlab/objectives.hpp"
#include "fedlab/planner.hpp"

using namespace fedlab;

namespace {

// one client at center 0: L(w) = 0.5 w^2
struct ScalarQuadratic {
    QuadraticObjective obj{1};
    LabeledDataset data{1, {0.0}, {0.0}};
    ClientPartition part{1, {{0}}};
};

FedConfig basic_config(std::size_t clients, std::size_t local_steps, double eta_l, double eta_g,
                       std::size_t rounds, bool full_batch = true, std::uint64_t seed = 1,
                       std::size_t batch = 1) {
    FedConfig cfg;
    cfg.clients = clients;
    cfg.local_steps = local_steps;
    cfg.eta_l = eta_l;
    cfg.eta_g = eta_g;
    cfg.rounds = rounds;
    cfg.batch_size = batch;
    cfg.master_seed = seed;
    cfg.full_batch = full_batch;
    return cfg;
}

} // namespace

TEST_CASE("client_update: two hand-unrolled full-batch steps") {
    ScalarQuadratic q;
    FedConfig cfg = basic_config(1, 2, 0.1, 1.0, 1);
    ClientResult res = client_update(q.obj, q.data, q.part.shard(0), 0, ParamVector({1.0}), cfg, 0);
    REQUIRE(res.iterates.size() == 3);
    CHECK(res.iterates[0][0] == doctest::Approx(1.0));
    CHECK(res.iterates[1][0] == doctest::Approx(0.9));
    CHECK(res.iterates[2][0] == doctest::Approx(0.81));
    CHECK(res.delta[0] == doctest::Approx(-0.19));
}

TEST_CASE("client_update: single step returns exactly -eta_l * grad") {
    ScalarQuadratic q;
    FedConfig cfg = basic_config(1, 1, 0.07, 1.0, 1);
    ParamVector u({0.6});
    ClientResult res = client_update(q.obj, q.data, q.part.shard(0), 0, u, cfg, 0);
    ParamVector g = q.obj.local_grad(q.data, q.part.shard(0), u);
    CHECK(res.delta == axpy(ParamVector::zeros(1), -cfg.eta_l, g));
}

TEST_CASE("client_update: stochastic K=3 matches a straight-line reference loop bitwise") {
    LinearLeastSquares obj(3);
    LabeledDataset data(3, {0.4, -0.1, 0.9, 1.2, 0.3, -0.7, -0.5, 0.8, 0.2, 0.6, -0.9, 0.1},
                        {0.5, -1.0, 0.25, 0.75});
    ClientPartition part(4, {{0, 1, 2, 3}});
    const Shard& shard = part.shard(0);
    FedConfig cfg = basic_config(1, 3, 0.05, 1.0, 1, /*full_batch=*/false, 99, /*batch=*/2);
    ParamVector u({0.1, -0.2, 0.3});

    // reference: the same update rule written out step by step
    ParamVector w = u;
    ParamVector delta = ParamVector::zeros(3);
    for (std::size_t k = 0; k < 3; ++k) {
        BatchSampler sampler(cfg.batch_size, cfg.master_seed, 0, 5, k);
        std::vector<std::size_t> idx = sampler.draw(shard);
        ParamVector acc = ParamVector::zeros(3);
        for (std::size_t i : idx) {
            acc = axpy(acc, 1.0, obj.sample_term(data, shard, i, w));
        }
        ParamVector g = axpy(ParamVector::zeros(3), 1.0 / static_cast<double>(idx.size()), acc);
        w = axpy(w, -cfg.eta_l, g);
        delta = axpy(delta, -cfg.eta_l, g);
    }

    ClientResult res = client_update(obj, data, shard, 0, u, cfg, 5);
    CHECK(res.delta == delta);
    CHECK(res.iterates.back() == w);
}

TEST_CASE("server_round") {
    ParamVector u({1.0, 2.0});
    CHECK(server_round(u, {ParamVector({0.5, -0.5})}, 1.0) == ParamVector({1.5, 1.5}));
    CHECK(server_round(u, {ParamVector::zeros(2), ParamVector::zeros(2)}, 3.0) == u);
    ParamVector two_client =
        server_round(u, {ParamVector({1.0, 0.0}), ParamVector({0.0, 1.0})}, 2.0);
    CHECK(two_client == ParamVector({2.0, 3.0}));
    CHECK_THROWS_AS(server_round(u, {}, 1.0), DimensionError);
    CHECK_THROWS_AS(server_round(u, {ParamVector({1.0})}, 1.0), DimensionError);
}

TEST_CASE("compute_drift") {
    SUBCASE("K=1 leaves xi_pre at exactly zero") {
        ScalarQuadratic q;
        FedConfig cfg = basic_config(1, 1, 0.1, 1.0, 1);
        ClientResult res = client_update(q.obj, q.data, q.part.shard(0), 0, ParamVector({1.0}), cfg, 0);
        auto [pre, post] = compute_drift({res}, ParamVector({1.0}));
        CHECK(pre == 0.0);
        CHECK(post > 0.0);
    }

    SUBCASE("zero-gradient local steps give zero drift") {
        ScalarQuadratic q;
        FedConfig cfg = basic_config(1, 3, 0.1, 1.0, 1);
        ClientResult res = client_update(q.obj, q.data, q.part.shard(0), 0, ParamVector({0.0}), cfg, 0);
        auto [pre, post] = compute_drift({res}, ParamVector({0.0}));
        CHECK(pre == 0.0);
        CHECK(post == 0.0);
    }

    SUBCASE("hand arithmetic: distances 0.1 and 0.19") {
        ClientResult res;
        res.iterates = {ParamVector({0.0}), ParamVector({0.1}), ParamVector({0.19})};
        res.delta = ParamVector({0.19});
        auto [pre, post] = compute_drift({res}, ParamVector({0.0}));
        CHECK(pre == doctest::Approx((0.0 + 0.01) / 2.0));
        CHECK(post == doctest::Approx(0.02305));
    }
}

TEST_CASE("run_gd on the scalar quadratic follows 0.9^t") {
    ScalarQuadratic q;
    ObjectiveBundle bundle = global_bundle(q.obj, q.data, q.part);
    Trajectory traj = run_gd(bundle, ParamVector({1.0}), 0.1, 10);
    double expected = 1.0;
    for (std::size_t t = 0; t < 10; ++t) {
        CHECK(traj.rounds[t].loss == doctest::Approx(0.5 * expected * expected).epsilon(1e-12));
        expected *= 0.9;
    }
    CHECK(traj.final_point[0] == doctest::Approx(std::pow(0.9, 10)).epsilon(1e-12));
}

TEST_CASE("run_gd with eta 0 is a constant trajectory") {
    ScalarQuadratic q;
    ObjectiveBundle bundle = global_bundle(q.obj, q.data, q.part);
    Trajectory traj = run_gd(bundle, ParamVector({0.7}), 0.0, 5);
    CHECK(traj.final_point == ParamVector({0.7}));
    for (const RoundRecord& r : traj.rounds) {
        CHECK(r.loss == traj.rounds[0].loss);
    }
}

TEST_CASE("run_gd on linear-ls matches a reference loop") {
    LinearLeastSquares obj(2);
    LabeledDataset data(2, {0.8, 0.1, -0.3, 0.5, 0.2, 0.9}, {0.4, -0.2, 0.6});
    ClientPartition part(3, {{0, 1}, {2}});
    ObjectiveBundle bundle = global_bundle(obj, data, part);
    ParamVector x({0.2, -0.1});
    Trajectory traj = run_gd(bundle, x, 0.3, 25);

    for (std::size_t t = 0; t < 25; ++t) {
        x = axpy(x, -0.3, bundle.grad(x));
    }
    CHECK(traj.final_point == x);
}

TEST_CASE("degeneracy: N=1, K=1 full-batch FedAvg is bitwise GD") {
    auto check_kind = [](const Objective& obj, const LabeledDataset& data, const ParamVector& init,
                         double eta_l, double eta_g) {
        ClientPartition part = ClientPartition::contiguous(data.n(), 1);
        ObjectiveBundle bundle = global_bundle(obj, data, part);
        FedConfig cfg = basic_config(1, 1, eta_l, eta_g, 100);
        Trajectory fed = run_fedavg(obj, data, part, init, cfg);
        Trajectory gd = run_gd(bundle, init, eta_l * eta_g, 100);
        REQUIRE(fed.rounds.size() == gd.rounds.size());
        for (std::size_t r = 0; r < fed.rounds.size(); ++r) {
            CHECK(fed.rounds[r].loss == gd.rounds[r].loss);
        }
        CHECK(fed.final_point == gd.final_point);
    };

    LabeledDataset qdata(2, {0.3, -0.4, 0.7, 0.2, -0.1, 0.5, 0.4, 0.4}, {0, 0, 0, 0});
    QuadraticObjective quad(2);
    check_kind(quad, qdata, ParamVector({1.0, -1.0}), 0.1, 1.0);
    // a power-of-two global rate scales exactly as well
    check_kind(quad, qdata, ParamVector({1.0, -1.0}), 0.1, 0.5);

    LabeledDataset ldata(2, {0.5, 0.1, -0.2, 0.4, 0.3, -0.6, 0.1, 0.8}, {0.3, -0.1, 0.2, 0.7});
    LinearLeastSquares lin(2);
    check_kind(lin, ldata, ParamVector({0.2, 0.1}), 0.05, 1.0);

    TwoLayerRelu relu(2, 3, 11);
    check_kind(relu, ldata, ParamVector({0.4, -0.3, 0.2, 0.5, -0.1, 0.3}), 0.02, 1.0);
}

TEST_CASE("run_fedavg: N=2, K=2 scalar quadratic matches a hand-unrolled reference") {
    QuadraticObjective obj(1);
    LabeledDataset data(1, {1.0, 3.0}, {0.0, 0.0});
    ClientPartition part(2, {{0}, {1}});
    double eta_l = 0.1, eta_g = 1.0;
    FedConfig cfg = basic_config(2, 2, eta_l, eta_g, 3);
    Trajectory traj = run_fedavg(obj, data, part, ParamVector({0.0}), cfg);

    double u = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
        double expected_loss = (0.5 * (u - 1.0) * (u - 1.0) + 0.5 * (u - 3.0) * (u - 3.0)) / 2.0;
        CHECK(traj.rounds[r].loss == doctest::Approx(expected_loss).epsilon(1e-12));
        double deltas[2];
        double centers[2] = {1.0, 3.0};
        for (int c = 0; c < 2; ++c) {
            double w = u;
            double s1 = -eta_l * (w - centers[c]);
            w += s1;
            double s2 = -eta_l * (w - centers[c]);
            deltas[c] = s1 + s2;
        }
        u += eta_g * ((deltas[0] + deltas[1]) / 2.0);
    }
    CHECK(traj.final_point[0] == doctest::Approx(u).epsilon(1e-12));
}

TEST_CASE("permuting client ids of identical shards keeps the full-batch loss sequence") {
    QuadraticObjective obj(1);
    LabeledDataset data(1, {2.0, 2.0}, {0.0, 0.0});
    ClientPartition p1(2, {{0}, {1}});
    ClientPartition p2(2, {{1}, {0}});
    FedConfig cfg = basic_config(2, 3, 0.1, 1.0, 5);
    Trajectory t1 = run_fedavg(obj, data, p1, ParamVector({0.0}), cfg);
    Trajectory t2 = run_fedavg(obj, data, p2, ParamVector({0.0}), cfg);
    for (std::size_t r = 0; r < 5; ++r) {
        CHECK(t1.rounds[r].loss == t2.rounds[r].loss);
    }
}

TEST_CASE("determinism: identical seeds agree bitwise, independent of thread cap") {
    QuadraticObjective obj(2);
    LabeledDataset data(2, {0.1, 0.0, 0.9, 0.2, -0.3, 0.4, 0.5, -0.5, 0.2, 0.8, -0.6, 0.3},
                        {0, 0, 0, 0, 0, 0});
    ClientPartition part = ClientPartition::contiguous(6, 3);
    FedConfig cfg = basic_config(3, 2, 0.05, 1.0, 8, /*full_batch=*/false, 7, /*batch=*/2);
    ParamVector init({0.5, 0.5});

    Trajectory t1 = run_fedavg(obj, data, part, init, cfg);
    setenv("FEDAVG_LAB_THREADS", "4", 1);
    Trajectory t2 = run_fedavg(obj, data, part, init, cfg);
    unsetenv("FEDAVG_LAB_THREADS");
    CHECK(t1.final_point == t2.final_point);
    for (std::size_t r = 0; r < t1.rounds.size(); ++r) {
        CHECK(t1.rounds[r].loss == t2.rounds[r].loss);
        CHECK(t1.rounds[r].xi_post == t2.rounds[r].xi_post);
    }

    FedConfig other = cfg;
    other.master_seed = 8;
    Trajectory t3 = run_fedavg(obj, data, part, init, other);
    CHECK(t3.final_point != t1.final_point);
}

TEST_CASE("proposition-1 contraction holds per GD step on the quadratic") {
    ScalarQuadratic q;
    ObjectiveBundle bundle = global_bundle(q.obj, q.data, q.part);
    AssumptionConstants constants{0.0, 0.5, 0.0, 1.0, std::sqrt(2.0), std::sqrt(2.0), 0.0};
    GdPlan plan = plan_gd(constants);
    CHECK(plan.eta == doctest::Approx(0.2));
    CHECK(plan.lambda == doctest::Approx(0.04));

    Trajectory traj = run_gd(bundle, ParamVector({1.0}), plan.eta, 100);
    std::vector<double> losses = traj.loss_series();
    for (std::size_t t = 0; t + 1 < losses.size(); ++t) {
        CHECK(losses[t + 1] <= (1.0 - plan.lambda) * losses[t] + 1e-9);
    }
}

TEST_CASE("local full-batch iterates are monotone under the proposition-1 step") {
    QuadraticObjective obj(1);
    LabeledDataset data(1, {1.0, 3.0}, {0.0, 0.0});
    ClientPartition part(2, {{0}, {1}});
    FedConfig cfg = basic_config(2, 6, 0.2, 1.0, 1);
    for (std::size_t c = 0; c < 2; ++c) {
        ClientResult res = client_update(obj, data, part.shard(c), c, ParamVector({0.0}), cfg, 0);
        double prev = obj.local_loss(data, part.shard(c), res.iterates[0]);
        for (std::size_t k = 1; k < res.iterates.size(); ++k) {
            double cur = obj.local_loss(data, part.shard(c), res.iterates[k]);
            CHECK(cur <= prev + 1e-12);
            prev = cur;
        }
    }
}

TEST_CASE("full-batch drift respects the tight bound every round") {
    QuadraticObjective obj(1);
    LabeledDataset data(1, {1.0, 3.0}, {0.0, 0.0});
    ClientPartition part(2, {{0}, {1}});
    double eta_l = 1.7677669529663689e-3, k_steps = 4;
    double tau2_sq = 2.0;
    FedConfig cfg = basic_config(2, 4, eta_l, 28.284271247461902, 20);
    Trajectory traj = run_fedavg(obj, data, part, ParamVector({0.0}), cfg);
    for (const RoundRecord& rec : traj.rounds) {
        double bound = (20.0 * eta_l * eta_l + 40.0 * k_steps * k_steps * eta_l * eta_l * tau2_sq) * rec.loss;
        CHECK(rec.xi_post <= bound + 1e-9);
    }
}

TEST_CASE("divergence is reported with client, round and step") {
    ScalarQuadratic q;
    FedConfig cfg = basic_config(1, 4, 1e200, 1.0, 3);
    try {
        run_fedavg(q.obj, q.data, q.part, ParamVector({1.0}), cfg);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        std::string msg = e.what();
        CHECK(msg.find("client 0") != std::string::npos);
        CHECK(msg.find("round") != std::string::npos);
        CHECK(msg.find("local step") != std::string::npos);
    }
}

TEST_CASE("config validation") {
    FedConfig cfg = basic_config(1, 1, 0.1, 1.0, 1);
    cfg.eta_l = -0.1;
    CHECK_THROWS_AS(cfg.check(), ConfigError);
    cfg = basic_config(0, 1, 0.1, 1.0, 1);
    CHECK_THROWS_AS(cfg.check(), ConfigError);
    cfg = basic_config(1, 1, 0.1, 1.0, 0);
    CHECK_THROWS_AS(cfg.check(), ConfigError);
}
