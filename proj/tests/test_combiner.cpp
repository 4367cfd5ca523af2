#include <catch2/catch.hpp>
#include <filesystem>

#include "lmn/combiner_train.hpp"

using namespace lmn;

TEST_CASE("combine mixes the two distributions") {
    Vec r{0.8, 0.2}, s{0.1, 0.9};
    SECTION("theta 0 returns the PCN scores exactly") {
        Vec p = combine(r, s, 0.0);
        CHECK(p == r);
    }
    SECTION("theta 1 returns the memory scores exactly") {
        Vec p = combine(r, s, 1.0);
        CHECK(p == s);
    }
    SECTION("constant theta 0.5 needs no renormalization") {
        Vec p = combine(r, s, 0.5);
        CHECK(p[0] == Approx(0.45).margin(1e-15));
        CHECK(p[1] == Approx(0.55).margin(1e-15));
    }
    SECTION("per-label theta renormalizes to a distribution") {
        Prng rng(5);
        for (int it = 0; it < 100; ++it) {
            Vec a = softmax({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
            Vec b = softmax({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
            Vec th{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
            Vec p = combine(a, b, th);
            double sum = 0.0;
            for (double x : p) {
                CHECK(x >= 0.0);
                sum += x;
            }
            CHECK(sum == Approx(1.0).margin(1e-12));
        }
    }
    SECTION("monotone gate effect: raising theta_y raises the unnormalized score when s_y > r_y") {
        // unnormalized u_y = (1-t) r_y + t s_y is affine in t with slope s_y - r_y > 0
        double r_y = 0.2, s_y = 0.9;
        double prev = -1.0;
        for (double t = 0.0; t <= 1.0; t += 0.1) {
            double u = (1.0 - t) * r_y + t * s_y;
            CHECK(u > prev);
            prev = u;
        }
    }
    SECTION("length mismatch") { CHECK_THROWS_AS(combine({0.5, 0.5}, {1.0}, 0.5), std::invalid_argument); }
}

TEST_CASE("gate_step") {
    SECTION("zero gate weights give theta = 0.5 for every label") {
        RnnCombiner c = RnnCombiner::create(4, 3, 7);
        for (double& x : c.params().value("combiner.Wt").a) x = 0.0;
        c.params().value("combiner.bt").a[0] = 0.0;
        ErrorIndicators ind;
        auto [th1, mu1] = c.gate_step(c.zero_state(), {0.1, 0.2, -0.3, 0.4}, ind, 0.5, 0.5);
        auto [th2, mu2] = c.gate_step(c.zero_state(), {-1.0, 0.0, 2.0, 0.3}, ind, 0.1, 0.9);
        CHECK(th1 == 0.5);
        CHECK(th2 == 0.5);
    }
    SECTION("identical inputs and states give identical theta: weights are shared") {
        RnnCombiner c = RnnCombiner::create(3, 4, 8);
        ErrorIndicators ind{1.0, 0.0};
        Vec h{0.3, -0.2, 0.5};
        auto a = c.gate_step(c.zero_state(), h, ind, 0.25, 0.3);
        auto b = c.gate_step(c.zero_state(), h, ind, 0.25, 0.3);
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
    }
    SECTION("hand-fixed weights match the scalar gate oracle") {
        RnnCombiner c = RnnCombiner::create(1, 2, 9);  // input dim 5, state 2
        auto& ps = c.params();
        auto set = [&](const char* name, std::initializer_list<double> vals) {
            auto& m = ps.value(name);
            size_t i = 0;
            for (double v : vals) m.a[i++] = v;
        };
        // 2x5 input weights, 2x2 recurrent weights, biases
        set("combiner.gru.Wz", {0.1, -0.2, 0.3, 0.0, 0.2, 0.4, 0.1, -0.1, 0.2, 0.0});
        set("combiner.gru.Uz", {0.2, -0.1, 0.0, 0.3});
        set("combiner.gru.bz", {0.01, -0.02});
        set("combiner.gru.Wr", {-0.3, 0.2, 0.1, 0.1, 0.0, 0.2, -0.2, 0.3, 0.1, 0.1});
        set("combiner.gru.Ur", {0.1, 0.2, -0.3, 0.1});
        set("combiner.gru.br", {0.0, 0.05});
        set("combiner.gru.Wc", {0.5, -0.4, 0.2, 0.1, 0.3, 0.2, 0.2, -0.5, 0.0, 0.4});
        set("combiner.gru.Uc", {0.3, -0.2, 0.1, 0.2});
        set("combiner.gru.bc", {0.02, -0.03});
        set("combiner.Wt", {0.7, -1.1});
        set("combiner.bt", {0.25});

        Vec h{0.6};
        ErrorIndicators ind{1.0, 0.0};
        Vec mu0{0.2, -0.4};

        // scalar oracle over the concatenated input [h, e_pcn, e_mem, r, s]
        Vec x{0.6, 1.0, 0.0, 0.3, 0.55};
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        Vec z(2), rr(2), rh(2), cc(2), mu(2);
        const auto& Wz = ps.value("combiner.gru.Wz");
        const auto& Uz = ps.value("combiner.gru.Uz");
        const auto& Wr = ps.value("combiner.gru.Wr");
        const auto& Ur = ps.value("combiner.gru.Ur");
        const auto& Wc = ps.value("combiner.gru.Wc");
        const auto& Uc = ps.value("combiner.gru.Uc");
        for (int i = 0; i < 2; ++i) {
            double az = ps.value("combiner.gru.bz").a[static_cast<size_t>(i)];
            double ar = ps.value("combiner.gru.br").a[static_cast<size_t>(i)];
            for (int j = 0; j < 5; ++j) {
                az += Wz.at(i, j) * x[static_cast<size_t>(j)];
                ar += Wr.at(i, j) * x[static_cast<size_t>(j)];
            }
            for (int j = 0; j < 2; ++j) {
                az += Uz.at(i, j) * mu0[static_cast<size_t>(j)];
                ar += Ur.at(i, j) * mu0[static_cast<size_t>(j)];
            }
            z[static_cast<size_t>(i)] = sig(az);
            rr[static_cast<size_t>(i)] = sig(ar);
            rh[static_cast<size_t>(i)] = rr[static_cast<size_t>(i)] * mu0[static_cast<size_t>(i)];
        }
        for (int i = 0; i < 2; ++i) {
            double ac = ps.value("combiner.gru.bc").a[static_cast<size_t>(i)];
            for (int j = 0; j < 5; ++j) ac += Wc.at(i, j) * x[static_cast<size_t>(j)];
            for (int j = 0; j < 2; ++j) ac += Uc.at(i, j) * rh[static_cast<size_t>(j)];
            cc[static_cast<size_t>(i)] = std::tanh(ac);
            mu[static_cast<size_t>(i)] = (1.0 - z[static_cast<size_t>(i)]) * mu0[static_cast<size_t>(i)] +
                                         z[static_cast<size_t>(i)] * cc[static_cast<size_t>(i)];
        }
        double theta_want = sig(0.7 * mu[0] - 1.1 * mu[1] + 0.25);

        auto [theta, mu_got] = c.gate_step(mu0, h, ind, 0.3, 0.55);
        CHECK(theta == Approx(theta_want).margin(1e-12));
        CHECK(mu_got[0] == Approx(mu[0]).margin(1e-12));
        CHECK(mu_got[1] == Approx(mu[1]).margin(1e-12));
    }
}

namespace {

// Task where the memory is right and the PCN is confidently wrong: a
// stateless PCN trained on permuted labels, evaluated on the true ones.
struct SwappedTask {
    PcnModel pcn;
    EpisodeDataset episodes;
    MemoryConfig mem_cfg;

    static SwappedTask make() {
        GeneratorSpec gs;
        gs.seed = 77;
        gs.seen = 3;
        gs.unseen = 0;
        gs.dim = 8;
        gs.episodes = 40;
        gs.train_episode_length = 20;
        gs.test_episodes = 12;
        gs.picks_per_episode = 3;
        gs.test_episode_length = 21;
        gs.spread = 0.2;
        LabelStream stream = gen_label_stream(gs);

        EpisodeDataset swapped = stream.train;
        for (auto& ep : swapped.episodes)
            for (int& y : ep.ys) y = (y + 1) % 3;

        SwappedTask task{PcnModel::make_stateless(3, 8, 8, 5), stream.test, {}};
        PcnTrainOptions opt;
        opt.epochs = 30;
        opt.lr = 1e-2;
        opt.seed = 5;
        task.pcn.train(swapped, opt);

        task.mem_cfg.labels = 3;
        task.mem_cfg.dim = 8;
        task.mem_cfg.cells_per_label = 2;
        return task;
    }
};

}  // namespace

TEST_CASE("combiner_train") {
    SECTION("lr = 0 leaves the combiner unchanged") {
        SwappedTask task = SwappedTask::make();
        RnnCombiner comb = RnnCombiner::create(task.pcn.hidden_dim, 4, 11);
        uint64_t before = comb.params().checksum();
        CombinerTrainOptions opt;
        opt.epochs = 1;
        opt.lr = 0.0;
        opt.seed = 11;
        combiner_train(task.pcn, comb, task.mem_cfg, task.episodes, opt);
        CHECK(comb.params().checksum() == before);
    }
    SECTION("learns to trust the memory when the PCN is always wrong") {
        SwappedTask task = SwappedTask::make();
        RnnCombiner comb = RnnCombiner::create(task.pcn.hidden_dim, 4, 13);
        CombinerTrainOptions opt;
        opt.epochs = 12;
        opt.lr = 1e-2;
        opt.seed = 13;
        auto trace = combiner_train(task.pcn, comb, task.mem_cfg, task.episodes, opt);
        CHECK(trace.back() < trace.front());

        // Replay the stream and inspect the realized gates from step 3 on.
        RunOptions ropt;
        ropt.mode = SessionMode::lmn;
        RunResult rr = run_stream(task.pcn, task.episodes, task.mem_cfg, ropt, nullptr, &comb);
        double theta_sum = 0.0;
        long n = 0;
        for (const auto& epi : rr.episodes)
            for (const auto& rec : epi)
                if (rec.t >= 3) {
                    theta_sum += rec.theta_mean;
                    ++n;
                }
        CHECK(theta_sum / static_cast<double>(n) > 0.9);
    }
    SECTION("empty episodes are rejected") {
        SwappedTask task = SwappedTask::make();
        RnnCombiner comb = RnnCombiner::create(task.pcn.hidden_dim, 4, 15);
        EpisodeDataset empty;
        CombinerTrainOptions opt;
        CHECK_THROWS_AS(combiner_train(task.pcn, comb, task.mem_cfg, empty, opt), std::invalid_argument);
    }
}

TEST_CASE("fixed theta grid search picks the best validation theta") {
    SwappedTask task = SwappedTask::make();
    FixedThetaFit fit = fit_fixed_theta(task.pcn, task.mem_cfg, task.episodes);
    REQUIRE(fit.grid.size() == 9);
    // The PCN is wrong by construction, so a high theta must win.
    CHECK(fit.combiner.theta >= 0.8);
    double best = 1e300;
    for (auto [th, nll] : fit.grid) best = std::min(best, nll);
    bool found = false;
    for (auto [th, nll] : fit.grid)
        if (th == fit.combiner.theta) {
            CHECK(nll == best);
            found = true;
        }
    CHECK(found);
}

TEST_CASE("combiner checkpoint round trip through the shared container") {
    namespace fs = std::filesystem;
    SwappedTask task = SwappedTask::make();
    RnnCombiner comb = RnnCombiner::create(task.pcn.hidden_dim, 4, 17);
    fs::path dir = fs::temp_directory_path() / "lmn_combiner_tests";
    fs::create_directories(dir);
    fs::path file = dir / "joint.lmn";
    comb.append_to_checkpoint(file, task.pcn);

    PcnModel pcn2 = PcnModel::load(file);
    CHECK(pcn2.checksum() == task.pcn.checksum());
    Checkpoint cp = checkpoint_load(file);
    RnnCombiner comb2 = RnnCombiner::from_checkpoint(cp);
    CHECK(comb2.params().checksum() == comb.params().checksum());
    CHECK(comb2.state_dim == comb.state_dim);
    CHECK(comb2.input_dim == comb.input_dim);
}
