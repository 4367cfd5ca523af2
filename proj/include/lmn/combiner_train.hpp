#pragma once

#include "lmn/online.hpp"

namespace lmn {

struct CombinerTrainOptions {
    int epochs = 3;
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    int bptt_limit = 256;   // episodes longer than this are trained in chunks
    int bptt_chunk = 64;
};

// Trains the gating RNN to minimize the mean -log P_t(y_t) over all steps of
// all episodes, with the PCN frozen (checksum-asserted). Gradients flow only
// through the gate path: r_t and s_t enter the mixture as constants, and
// nothing propagates into memory contents or the write algorithm. Every
// label's state advances every step, matching the literal per-label update.
// The per-episode memory is rebuilt from empty at each episode start.
// Returns the per-epoch mean training loss.
inline std::vector<double> combiner_train(const PcnModel& pcn, RnnCombiner& comb,
                                          const MemoryConfig& mem_cfg, const EpisodeDataset& episodes,
                                          const CombinerTrainOptions& opt) {
    require(!episodes.episodes.empty(), "combiner_train: empty episodes");
    uint64_t frozen = pcn.checksum();
    int v = pcn.vocab;
    require(mem_cfg.labels == v, "combiner_train: memory labels must match PCN classes");

    Prng rng(opt.seed);
    std::vector<int> order(episodes.episodes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    Tape tape(comb.params());
    std::vector<double> trace;
    std::vector<int> mu_node(static_cast<size_t>(v));
    std::vector<int> theta_node(static_cast<size_t>(v));
    Vec r_prev, s_prev, theta_val(static_cast<size_t>(v));

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long epoch_steps = 0;

        for (int idx : order) {
            const Episode& ep = episodes.episodes[static_cast<size_t>(idx)];
            int n = ep.steps(episodes.kind);
            if (n == 0) continue;
            int chunk = n <= opt.bptt_limit ? n : opt.bptt_chunk;

            PcnState pcn_state = pcn.initial_state();
            LabeledMemory memory(mem_cfg);
            ErrorIndicators ind;
            r_prev.assign(static_cast<size_t>(v), 1.0 / v);
            s_prev.assign(static_cast<size_t>(v), 1.0 / v);
            Vec mu_carry;  // state values carried across truncation boundaries

            int t = 0;
            while (t < n) {
                int span = std::min(chunk, n - t);
                tape.clear();
                int zero_state = tape.leaf(comb.zero_state());
                if (t == 0) {
                    for (int y = 0; y < v; ++y) mu_node[static_cast<size_t>(y)] = zero_state;
                } else {
                    // Stop-gradient across the chunk boundary: re-enter values as leaves.
                    for (int y = 0; y < v; ++y)
                        mu_node[static_cast<size_t>(y)] = tape.leaf(
                            std::span<const double>(mu_carry.data() + static_cast<size_t>(y) * comb.state_dim,
                                                    static_cast<size_t>(comb.state_dim)));
                }

                int loss = -1;
                for (int k = 0; k < span; ++k, ++t) {
                    PcnStepResult step = episodes.kind == DatasetKind::token_sequences
                                             ? pcn.step(pcn_state, ep.tokens[static_cast<size_t>(t)])
                                             : pcn.step(pcn_state, ep.xs[static_cast<size_t>(t)]);
                    int y_true = episodes.kind == DatasetKind::token_sequences
                                     ? ep.tokens[static_cast<size_t>(t) + 1]
                                     : ep.ys[static_cast<size_t>(t)];
                    Vec s = memory.scores(step.h);

                    for (int y = 0; y < v; ++y) {
                        int x = tape.leaf(comb.gate_input(step.h, ind, r_prev[static_cast<size_t>(y)],
                                                          s_prev[static_cast<size_t>(y)]));
                        int mu = gru_step(tape, comb.gru(), x, mu_node[static_cast<size_t>(y)]);
                        mu_node[static_cast<size_t>(y)] = mu;
                        int th = tape.sigmoid_(tape.add_bias(tape.matvec(comb.w_theta(), mu), comb.b_theta()));
                        theta_node[static_cast<size_t>(y)] = th;
                        theta_val[static_cast<size_t>(y)] = tape.value0(th);
                    }

                    int nll = tape.mix_nll(theta_node, step.scores, s, y_true);
                    loss = loss < 0 ? nll : tape.add(loss, nll);
                    epoch_loss += tape.value0(nll);
                    ++epoch_steps;

                    // Value-path adaptation: the write and the next step's
                    // indicators use the current mixture, outside the tape.
                    Vec p = combine(step.scores, s, theta_val);
                    ind.pcn = argmax(step.scores) != y_true ? 1.0 : 0.0;
                    ind.mem = argmax(s) != y_true ? 1.0 : 0.0;
                    memory.write(step.h, y_true, p);
                    r_prev = step.scores;
                    s_prev = s;
                    pcn_state = std::move(step.state);
                }

                tape.backward(loss, 1.0 / span);
                if (t < n) {
                    mu_carry.resize(static_cast<size_t>(v) * comb.state_dim);
                    for (int y = 0; y < v; ++y) {
                        Vec mv = tape.value(mu_node[static_cast<size_t>(y)]);
                        std::copy(mv.begin(), mv.end(), mu_carry.begin() + static_cast<size_t>(y) * comb.state_dim);
                    }
                }
                comb.params().adam_step(opt.lr, opt.beta1, opt.beta2, opt.adam_eps);
            }
        }
        trace.push_back(epoch_loss / static_cast<double>(epoch_steps));
    }

    if (pcn.checksum() != frozen)
        throw ContractError("combiner_train: frozen PCN parameters changed during combiner training");
    return trace;
}

struct FixedThetaFit {
    FixedCombiner combiner;
    std::vector<std::pair<double, double>> grid;  // (theta, mean nll)
};

// LMN-fixed hyperparameter search: evaluates theta in {0.1, ..., 0.9} on the
// given episodes and keeps the best mean NLL (lowest theta wins ties).
inline FixedThetaFit fit_fixed_theta(const PcnModel& pcn, const MemoryConfig& mem_cfg,
                                     const EpisodeDataset& validation, int threads = 1) {
    FixedThetaFit fit;
    double best = 1e300;
    for (int i = 1; i <= 9; ++i) {
        FixedCombiner cand{i / 10.0};
        RunOptions opt;
        opt.mode = SessionMode::lmn_fixed;
        opt.threads = threads;
        RunResult rr = run_stream(pcn, validation, mem_cfg, opt, &cand);
        double total = 0.0;
        long steps = 0;
        for (const auto& epi : rr.episodes)
            for (const auto& rec : epi) {
                total += rec.nll;
                ++steps;
            }
        double mean = total / static_cast<double>(steps);
        fit.grid.emplace_back(cand.theta, mean);
        if (mean < best) {
            best = mean;
            fit.combiner = cand;
        }
    }
    return fit;
}

}  // namespace lmn
