#pragma once

#include <memory>

#include "lmn/checkpoint.hpp"
#include "lmn/data.hpp"
#include "lmn/gru.hpp"

namespace lmn {

enum class PcnMode { stateful, stateless };

struct PcnState {
    Vec hidden;  // length d, zeroed at each sequence start
};

struct PcnStepResult {
    Vec h;       // pre-softmax hidden vector h_t
    Vec scores;  // r_t = softmax(beta h_t)
    PcnState state;
};

struct PcnTrainOptions {
    int epochs = 20;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
};

// The batch-trained Primary Classification Network. Stateful mode is an
// embedding table plus GRU over token streams; stateless mode is a one
// hidden-layer tanh perceptron over feature vectors. Both end in
// r_t = softmax(beta h_t). After batch training the model is frozen; the
// online modules only ever read it (asserted via checksum).
class PcnModel {
public:
    PcnMode mode = PcnMode::stateful;
    int vocab = 0;      // V
    int embed_dim = 0;  // d_e (stateful) or input feature dim (stateless)
    int hidden_dim = 0; // d

    static PcnModel make_stateful(int vocab, int embed_dim, int hidden_dim, uint64_t seed) {
        PcnModel m;
        m.mode = PcnMode::stateful;
        m.vocab = vocab;
        m.embed_dim = embed_dim;
        m.hidden_dim = hidden_dim;
        Prng rng(seed);
        m.embedding_ = m.ps_.add_uniform("pcn.embed", vocab, embed_dim, rng, 0.1);
        m.gru_ = GruCell::create(m.ps_, "pcn.gru", embed_dim, hidden_dim, rng);
        m.beta_ = m.ps_.add("pcn.beta", vocab, hidden_dim);  // zero-init softmax layer
        return m;
    }

    static PcnModel make_stateless(int classes, int input_dim, int hidden_dim, uint64_t seed) {
        PcnModel m;
        m.mode = PcnMode::stateless;
        m.vocab = classes;
        m.embed_dim = input_dim;
        m.hidden_dim = hidden_dim;
        Prng rng(seed);
        m.w1_ = m.ps_.add_glorot("pcn.w1", hidden_dim, input_dim, rng);
        m.b1_ = m.ps_.add("pcn.b1", hidden_dim, 1);
        m.beta_ = m.ps_.add("pcn.beta", classes, hidden_dim);
        return m;
    }

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    uint64_t checksum() const { return ps_.checksum(); }
    PcnState initial_state() const { return PcnState{Vec(static_cast<size_t>(hidden_dim), 0.0)}; }

    // One scoring step. Pure: depends only on (model, state, input).
    PcnStepResult step(const PcnState& state, int token) const {
        require(mode == PcnMode::stateful, "pcn_step: token input requires stateful mode");
        require(token >= 0 && token < vocab, "pcn_step: token id out of range");
        require(state.hidden.size() == static_cast<size_t>(hidden_dim), "pcn_step: bad state length");
        const Matrix& emb = ps_.entry(embedding_).value;
        Vec x(emb.a.begin() + static_cast<size_t>(token) * embed_dim,
              emb.a.begin() + static_cast<size_t>(token + 1) * embed_dim);
        PcnStepResult out;
        out.h = gru_step(ps_, gru_, x, state.hidden);
        out.scores = softmax(matvec(ps_.entry(beta_).value, out.h));
        out.state.hidden = out.h;
        return out;
    }

    PcnStepResult step(const PcnState& state, const Vec& x) const {
        require(mode == PcnMode::stateless, "pcn_step: vector input requires stateless mode");
        require(static_cast<int>(x.size()) == embed_dim, "pcn_step: feature length mismatch");
        Vec a = matvec(ps_.entry(w1_).value, x);
        const Matrix& b1 = ps_.entry(b1_).value;
        PcnStepResult out;
        out.h.resize(static_cast<size_t>(hidden_dim));
        for (int i = 0; i < hidden_dim; ++i) out.h[static_cast<size_t>(i)] = std::tanh(a[static_cast<size_t>(i)] + b1.a[static_cast<size_t>(i)]);
        out.scores = softmax(matvec(ps_.entry(beta_).value, out.h));
        out.state = state;  // stateless: state passes through
        return out;
    }

    // Teacher-forced mean cross-entropy of a dataset under the current
    // parameters (no gradients). Also the independent oracle for the
    // pcn_only online log-perplexity.
    double mean_cross_entropy(const EpisodeDataset& ds) const {
        double total = 0.0;
        long count = 0;
        for (const auto& ep : ds.episodes) {
            PcnState st = initial_state();
            for (int t = 0; t < ep.steps(ds.kind); ++t) {
                PcnStepResult r = ds.kind == DatasetKind::token_sequences
                                      ? step(st, ep.tokens[static_cast<size_t>(t)])
                                      : step(st, ep.xs[static_cast<size_t>(t)]);
                int label = ds.kind == DatasetKind::token_sequences ? ep.tokens[static_cast<size_t>(t) + 1]
                                                                    : ep.ys[static_cast<size_t>(t)];
                total += -safe_log(r.scores[static_cast<size_t>(label)]);
                st = r.state;
                ++count;
            }
        }
        require(count > 0, "mean_cross_entropy: dataset has no prediction steps");
        return total / static_cast<double>(count);
    }

    // Batch training. Stateful mode: next-token prediction with teacher
    // forcing. Stateless mode: classification restricted to the dataset's
    // seen labels (unseen beta rows receive no gradient and stay at their
    // zero init). Returns the loss trace: entry 0 is the pre-training mean
    // cross-entropy, entry e >= 1 the mean after epoch e.
    std::vector<double> train(const EpisodeDataset& corpus, const PcnTrainOptions& opt) {
        require(!corpus.episodes.empty(), "pcn_train: empty corpus");
        if (mode == PcnMode::stateless) require(corpus.kind == DatasetKind::labeled_vectors, "pcn_train: dataset kind mismatch");
        else require(corpus.kind == DatasetKind::token_sequences, "pcn_train: dataset kind mismatch");

        std::vector<int> seen(corpus.seen_labels.begin(), corpus.seen_labels.end());
        std::span<const int> mask;
        if (mode == PcnMode::stateless && static_cast<int>(seen.size()) < vocab && !seen.empty())
            mask = std::span<const int>(seen.data(), seen.size());

        Prng rng(opt.seed);
        std::vector<double> trace{mean_cross_entropy(corpus)};
        std::vector<int> order(corpus.episodes.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

        Tape tape(ps_);
        for (int epoch = 0; epoch < opt.epochs; ++epoch) {
            rng.shuffle(order);
            for (int idx : order) {
                const Episode& ep = corpus.episodes[static_cast<size_t>(idx)];
                int n = ep.steps(corpus.kind);
                if (n == 0) continue;
                tape.clear();
                int loss = -1;
                if (mode == PcnMode::stateful) {
                    Vec zeros(static_cast<size_t>(hidden_dim), 0.0);
                    int h = tape.leaf(zeros);
                    for (int t = 0; t < n; ++t) {
                        int x = tape.embed_row(embedding_, ep.tokens[static_cast<size_t>(t)]);
                        h = gru_step(tape, gru_, x, h);
                        int logits = tape.matvec(beta_, h);
                        int ce = tape.softmax_ce(logits, ep.tokens[static_cast<size_t>(t) + 1]);
                        loss = loss < 0 ? ce : tape.add(loss, ce);
                    }
                } else {
                    for (int t = 0; t < n; ++t) {
                        int x = tape.leaf(ep.xs[static_cast<size_t>(t)]);
                        int h = tape.tanh_(tape.add_bias(tape.matvec(w1_, x), b1_));
                        int logits = tape.matvec(beta_, h);
                        int ce = tape.softmax_ce(logits, ep.ys[static_cast<size_t>(t)], mask);
                        loss = loss < 0 ? ce : tape.add(loss, ce);
                    }
                }
                tape.backward(loss, 1.0 / n);
                ps_.adam_step(opt.lr, opt.beta1, opt.beta2, opt.adam_eps);
            }
            trace.push_back(mean_cross_entropy(corpus));
        }
        return trace;
    }

    void save(const std::filesystem::path& path) const {
        CheckpointHeader hdr;
        hdr.mode = mode == PcnMode::stateful ? 0 : 1;
        hdr.vocab = static_cast<uint32_t>(vocab);
        hdr.embed_dim = static_cast<uint32_t>(embed_dim);
        hdr.hidden_dim = static_cast<uint32_t>(hidden_dim);
        checkpoint_save(path, hdr, ps_);
    }

    static PcnModel load(const std::filesystem::path& path) {
        Checkpoint cp = checkpoint_load(path);
        return from_checkpoint(cp);
    }

    static PcnModel from_checkpoint(const Checkpoint& cp) {
        PcnModel m;
        m.mode = cp.header.mode == 0 ? PcnMode::stateful : PcnMode::stateless;
        m.vocab = static_cast<int>(cp.header.vocab);
        m.embed_dim = static_cast<int>(cp.header.embed_dim);
        m.hidden_dim = static_cast<int>(cp.header.hidden_dim);
        for (const auto& [name, mat] : cp.blocks) {
            if (name.rfind("pcn.", 0) != 0) continue;  // combiner blocks live in the same file
            int id = m.ps_.add(name, mat.rows, mat.cols);
            m.ps_.entry(id).value = mat;
        }
        auto expect = [&](const char* name, int rows, int cols) {
            if (!m.ps_.has(name)) throw ParseError(std::string("missing parameter block '") + name + "'", 0);
            const Matrix& v = m.ps_.value(name);
            if (v.rows != rows || v.cols != cols)
                throw ParseError(std::string("dimension mismatch in block '") + name + "'", 0);
        };
        if (m.mode == PcnMode::stateful) {
            expect("pcn.embed", m.vocab, m.embed_dim);
            expect("pcn.gru.Wz", m.hidden_dim, m.embed_dim);
            m.embedding_ = m.ps_.id("pcn.embed");
            m.gru_ = GruCell::attach(m.ps_, "pcn.gru");
        } else {
            expect("pcn.w1", m.hidden_dim, m.embed_dim);
            expect("pcn.b1", m.hidden_dim, 1);
            m.w1_ = m.ps_.id("pcn.w1");
            m.b1_ = m.ps_.id("pcn.b1");
        }
        expect("pcn.beta", m.vocab, m.hidden_dim);
        m.beta_ = m.ps_.id("pcn.beta");
        return m;
    }

private:
    ParamStore ps_;
    int embedding_ = -1;
    GruCell gru_;
    int w1_ = -1, b1_ = -1;
    int beta_ = -1;
};

}  // namespace lmn
