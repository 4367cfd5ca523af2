#include <catch2/catch.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lmn/data.hpp"
#include "lmn/pcn.hpp"

using namespace lmn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path p = fs::temp_directory_path() / "lmn_pcn_tests";
    fs::create_directories(p);
    return p;
}

// Multinomial logistic regression trained by plain gradient descent; the
// independent check that the cluster task is linearly separable.
double logistic_regression_accuracy(const EpisodeDataset& train, const EpisodeDataset& test) {
    int classes = train.vocab, dim = train.dim;
    std::vector<Vec> w(static_cast<size_t>(classes), Vec(static_cast<size_t>(dim + 1), 0.0));
    for (int epoch = 0; epoch < 200; ++epoch) {
        for (const auto& ep : train.episodes)
            for (size_t i = 0; i < ep.ys.size(); ++i) {
                Vec logits(static_cast<size_t>(classes), 0.0);
                for (int c = 0; c < classes; ++c) {
                    double a = w[static_cast<size_t>(c)][static_cast<size_t>(dim)];
                    for (int j = 0; j < dim; ++j) a += w[static_cast<size_t>(c)][static_cast<size_t>(j)] * ep.xs[i][static_cast<size_t>(j)];
                    logits[static_cast<size_t>(c)] = a;
                }
                Vec p = softmax(logits);
                for (int c = 0; c < classes; ++c) {
                    double g = p[static_cast<size_t>(c)] - (c == ep.ys[i] ? 1.0 : 0.0);
                    for (int j = 0; j < dim; ++j) w[static_cast<size_t>(c)][static_cast<size_t>(j)] -= 0.1 * g * ep.xs[i][static_cast<size_t>(j)];
                    w[static_cast<size_t>(c)][static_cast<size_t>(dim)] -= 0.1 * g;
                }
            }
    }
    long ok = 0, n = 0;
    for (const auto& ep : test.episodes)
        for (size_t i = 0; i < ep.ys.size(); ++i) {
            Vec logits(static_cast<size_t>(classes), 0.0);
            for (int c = 0; c < classes; ++c) {
                double a = w[static_cast<size_t>(c)][static_cast<size_t>(dim)];
                for (int j = 0; j < dim; ++j) a += w[static_cast<size_t>(c)][static_cast<size_t>(j)] * ep.xs[i][static_cast<size_t>(j)];
                logits[static_cast<size_t>(c)] = a;
            }
            ok += argmax(logits) == ep.ys[i];
            ++n;
        }
    return static_cast<double>(ok) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("pcn_step scoring") {
    SECTION("zero beta scores uniformly") {
        PcnModel m = PcnModel::make_stateful(4, 3, 5, 1);
        auto r = m.step(m.initial_state(), 2);
        for (double x : r.scores) CHECK(x == Approx(0.25).margin(1e-15));
    }
    SECTION("identical beta rows score identically") {
        PcnModel m = PcnModel::make_stateful(3, 3, 4, 2);
        Matrix& beta = m.params().value("pcn.beta");
        for (int c = 0; c < 4; ++c) {
            beta.at(0, c) = 0.7 * c - 0.3;
            beta.at(1, c) = 0.7 * c - 0.3;
            beta.at(2, c) = 0.1 * c;
        }
        auto r = m.step(m.initial_state(), 0);
        CHECK(r.scores[0] == r.scores[1]);
    }
    SECTION("scores are softmax(beta h) with the documented constants") {
        Vec direct = softmax({1.0, 2.0});
        CHECK(direct[0] == Approx(0.26894).margin(1e-5));
        CHECK(direct[1] == Approx(0.73106).margin(1e-5));
        // A stateless model whose hidden layer saturates to h ~ [1, 1] and
        // beta = [[1,0],[0,1]] reproduces softmax(h) through the full path.
        PcnModel m = PcnModel::make_stateless(2, 2, 2, 3);
        Matrix& beta = m.params().value("pcn.beta");
        beta.a = {1.0, 0.0, 0.0, 1.0};
        Matrix& w1 = m.params().value("pcn.w1");
        w1.a = {0.0, 0.0, 0.0, 0.0};
        Matrix& b1 = m.params().value("pcn.b1");
        b1.a = {10.0, 10.0};
        auto r = m.step(m.initial_state(), Vec{0.0, 0.0});
        Vec expect = softmax({r.h[0], r.h[1]});
        CHECK(r.scores[0] == Approx(expect[0]).margin(1e-12));
        CHECK(r.scores[1] == Approx(expect[1]).margin(1e-12));
    }
    SECTION("r sums to one and argmax matches the logits") {
        PcnModel m = PcnModel::make_stateful(6, 4, 5, 7);
        Prng rng(9);
        Matrix& beta = m.params().value("pcn.beta");
        for (double& x : beta.a) x = rng.uniform(-1.0, 1.0);
        PcnState st = m.initial_state();
        for (int t = 0; t < 10; ++t) {
            auto r = m.step(st, rng.below(6));
            double sum = 0.0;
            for (double x : r.scores) sum += x;
            CHECK(sum == Approx(1.0).margin(1e-12));
            CHECK(argmax(r.scores) == argmax(matvec(beta, r.h)));
            st = r.state;
        }
    }
    SECTION("pure function of (model, state, input)") {
        PcnModel m = PcnModel::make_stateful(5, 3, 4, 11);
        PcnState st = m.initial_state();
        auto a = m.step(st, 3);
        auto b = m.step(st, 3);
        CHECK(a.h == b.h);
        CHECK(a.scores == b.scores);
    }
    SECTION("out-of-range token") {
        PcnModel m = PcnModel::make_stateful(4, 3, 5, 1);
        CHECK_THROWS_AS(m.step(m.initial_state(), 4), std::invalid_argument);
        CHECK_THROWS_AS(m.step(m.initial_state(), -1), std::invalid_argument);
    }
}

TEST_CASE("pcn_train") {
    SECTION("memorizes a repeated sequence") {
        EpisodeDataset ds;
        ds.kind = DatasetKind::token_sequences;
        for (int v = 0; v < 2; ++v) ds.intern(std::to_string(v));
        Episode ep;
        for (int t = 0; t < 24; ++t) ep.tokens.push_back(t % 2);
        ds.episodes.push_back(ep);
        PcnModel m = PcnModel::make_stateful(2, 4, 8, 5);
        PcnTrainOptions opt;
        opt.epochs = 60;
        opt.lr = 3e-2;
        opt.seed = 5;
        auto trace = m.train(ds, opt);
        CHECK(trace[1] < trace[0]);  // strictly decreasing over the first epoch
        // next-token accuracy on the training sequence
        PcnState st = m.initial_state();
        int ok = 0, n = 0;
        for (size_t t = 0; t + 1 < ep.tokens.size(); ++t) {
            auto r = m.step(st, ep.tokens[t]);
            ok += argmax(r.scores) == ep.tokens[t + 1];
            ++n;
            st = r.state;
        }
        CHECK(ok == n);
    }
    SECTION("lr = 0 leaves parameters bit-identical") {
        GeneratorSpec gs;
        gs.seed = 3;
        gs.vocab = 6;
        gs.episodes = 3;
        gs.mean_length = 10;
        gs.repeat_bias = 0.5;
        gs.home_set = 3;
        EpisodeDataset ds = gen_repeat_markov(gs);
        PcnModel m = PcnModel::make_stateful(6, 3, 4, 2);
        uint64_t before = m.checksum();
        PcnTrainOptions opt;
        opt.epochs = 2;
        opt.lr = 0.0;
        opt.seed = 4;
        m.train(ds, opt);
        CHECK(m.checksum() == before);
    }
    SECTION("separable clusters reach 95% held-out accuracy, like the logistic oracle") {
        GeneratorSpec gs;
        gs.seed = 11;
        gs.seen = 3;
        gs.unseen = 0;
        gs.dim = 16;
        gs.episodes = 30;
        gs.train_episode_length = 10;
        gs.test_episodes = 20;
        gs.picks_per_episode = 3;
        gs.test_episode_length = 10;
        gs.spread = 0.25;
        LabelStream stream = gen_label_stream(gs);
        double lr_acc = logistic_regression_accuracy(stream.train, stream.test);
        CHECK(lr_acc >= 0.95);  // the task is linearly separable
        PcnModel m = PcnModel::make_stateless(3, 16, 16, 21);
        PcnTrainOptions opt;
        opt.epochs = 20;
        opt.lr = 1e-2;
        opt.seed = 21;
        m.train(stream.train, opt);
        long ok = 0, n = 0;
        for (const auto& ep : stream.test.episodes)
            for (size_t i = 0; i < ep.ys.size(); ++i) {
                auto r = m.step(m.initial_state(), ep.xs[i]);
                ok += argmax(r.scores) == ep.ys[i];
                ++n;
            }
        CHECK(static_cast<double>(ok) / n >= 0.95);
    }
    SECTION("empty corpus") {
        EpisodeDataset ds;
        PcnModel m = PcnModel::make_stateful(3, 2, 2, 1);
        PcnTrainOptions opt;
        CHECK_THROWS_AS(m.train(ds, opt), std::invalid_argument);
    }
    SECTION("unseen beta rows receive no gradient in masked stateless training") {
        GeneratorSpec gs;
        gs.seed = 13;
        gs.seen = 3;
        gs.unseen = 2;
        gs.dim = 4;
        gs.episodes = 10;
        gs.test_episodes = 1;
        gs.picks_per_episode = 2;
        LabelStream stream = gen_label_stream(gs);
        PcnModel m = PcnModel::make_stateless(5, 4, 6, 31);
        PcnTrainOptions opt;
        opt.epochs = 3;
        opt.lr = 1e-2;
        opt.seed = 31;
        m.train(stream.train, opt);
        const Matrix& beta = m.params().value("pcn.beta");
        for (int row : {3, 4})
            for (int c = 0; c < 6; ++c) CHECK(beta.at(row, c) == 0.0);  // zero init, never touched
        double moved = 0.0;
        for (int row : {0, 1, 2})
            for (int c = 0; c < 6; ++c) moved += std::fabs(beta.at(row, c));
        CHECK(moved > 0.0);
    }
}

TEST_CASE("pcn checkpointing") {
    fs::path dir = temp_dir();
    SECTION("round trip is bit exact") {
        GeneratorSpec gs;
        gs.seed = 17;
        gs.vocab = 8;
        gs.episodes = 4;
        gs.mean_length = 12;
        gs.repeat_bias = 0.6;
        gs.home_set = 4;
        EpisodeDataset ds = gen_repeat_markov(gs);
        PcnModel m = PcnModel::make_stateful(8, 4, 6, 19);
        PcnTrainOptions opt;
        opt.epochs = 2;
        opt.seed = 19;
        m.train(ds, opt);
        fs::path file = dir / "round_trip.lmn";
        m.save(file);
        PcnModel loaded = PcnModel::load(file);
        CHECK(loaded.checksum() == m.checksum());
        CHECK(loaded.vocab == m.vocab);
        auto a = m.step(m.initial_state(), 3);
        auto b = loaded.step(loaded.initial_state(), 3);
        CHECK(a.scores == b.scores);
    }
    SECTION("truncated file raises a parse error with an offset") {
        PcnModel m = PcnModel::make_stateful(3, 2, 2, 1);
        fs::path file = temp_dir() / "trunc.lmn";
        m.save(file);
        auto size = fs::file_size(file);
        fs::resize_file(file, size / 2);
        try {
            PcnModel::load(file);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
    }
    SECTION("same seed reruns produce identical checkpoints") {
        GeneratorSpec gs;
        gs.seed = 7;
        gs.vocab = 5;
        gs.episodes = 3;
        gs.mean_length = 8;
        gs.repeat_bias = 0.4;
        gs.home_set = 3;
        auto run = [&](const fs::path& file) {
            EpisodeDataset ds = gen_repeat_markov(gs);
            PcnModel m = PcnModel::make_stateful(5, 3, 4, 7);
            PcnTrainOptions opt;
            opt.epochs = 3;
            opt.seed = 7;
            m.train(ds, opt);
            m.save(file);
        };
        fs::path f1 = temp_dir() / "seed7_a.lmn", f2 = temp_dir() / "seed7_b.lmn";
        run(f1);
        run(f2);
        std::ifstream a(f1, std::ios::binary), b(f2, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
        CHECK_FALSE(sa.empty());
    }
}
