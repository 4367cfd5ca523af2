#pragma once

#include <atomic>
#include <thread>

#include "lmn/combiner.hpp"

namespace lmn {

enum class SessionMode { pcn_only, memory_only, lmn_fixed, lmn };

inline const char* to_string(SessionMode m) {
    switch (m) {
        case SessionMode::pcn_only: return "pcn_only";
        case SessionMode::memory_only: return "memory_only";
        case SessionMode::lmn_fixed: return "lmn_fixed";
        default: return "lmn";
    }
}

inline const char* to_string(WritePolicy p) {
    return p == WritePolicy::label_partitioned ? "label_partitioned" : "write_always_global_lru";
}

struct StepRecord {
    int t = 0;  // 1-based step index within the episode
    int y_true = -1;
    int y_pred = -1;
    double nll = 0.0;
    int rank = 1;
    double theta_mean = 0.0;
    WriteOutcome write;
};

// One online episode: strict predict -> observe alternation over a frozen
// PCN, a session-local memory, and session-local combiner state. The
// prediction never sees y_t; all adaptation happens in observe().
class Session {
public:
    Session(const PcnModel& pcn, SessionMode mode, const MemoryConfig& mem_cfg,
            WritePolicy policy = WritePolicy::label_partitioned,
            const FixedCombiner* fixed = nullptr, const RnnCombiner* rnn = nullptr)
        : pcn_(&pcn),
          mode_(mode),
          policy_(policy),
          fixed_(fixed),
          rnn_(rnn),
          memory_(mem_cfg),
          pcn_state_(pcn.initial_state()),
          r_prev_(static_cast<size_t>(pcn.vocab), 1.0 / pcn.vocab),
          s_prev_(static_cast<size_t>(pcn.vocab), 1.0 / pcn.vocab) {
        require(mem_cfg.labels == pcn.vocab, "Session: memory labels must match PCN classes");
        if (mode == SessionMode::lmn_fixed) require(fixed != nullptr, "Session: lmn_fixed needs a FixedCombiner");
        if (mode == SessionMode::lmn) {
            require(rnn != nullptr, "Session: lmn needs an RnnCombiner");
            mu_.assign(static_cast<size_t>(pcn.vocab), Vec());
        }
    }

    // Swap in a carried-over memory (cross-episode persistence).
    void adopt_memory(LabeledMemory mem) { memory_ = std::move(mem); }
    const LabeledMemory& memory() const { return memory_; }
    LabeledMemory take_memory() && { return std::move(memory_); }

    const std::vector<StepRecord>& trace() const { return trace_; }

    Vec predict(int token) {
        require(pcn_->mode == PcnMode::stateful, "session_predict: token input requires stateful PCN");
        return predict_impl(pcn_->step(pcn_state_, token));
    }

    Vec predict(const Vec& x) {
        require(pcn_->mode == PcnMode::stateless, "session_predict: vector input requires stateless PCN");
        return predict_impl(pcn_->step(pcn_state_, x));
    }

    StepRecord observe(int y_true) {
        if (phase_ != Phase::observe) throw ContractError("session_observe: no pending prediction");
        require(y_true >= 0 && y_true < pcn_->vocab, "session_observe: unknown label");
        phase_ = Phase::predict;
        ++t_;

        StepRecord rec;
        rec.t = t_;
        rec.y_true = y_true;
        rec.y_pred = argmax(p_t_);
        rec.nll = -safe_log(p_t_[static_cast<size_t>(y_true)]);
        rec.rank = rank_of(p_t_, y_true);
        rec.theta_mean = theta_mean_;

        if (mode_ != SessionMode::pcn_only) {
            // Indicators and previous-step score vectors feed the next gate step.
            ind_.pcn = argmax(r_t_) != y_true ? 1.0 : 0.0;
            ind_.mem = argmax(s_t_) != y_true ? 1.0 : 0.0;
            if (mode_ == SessionMode::lmn)
                for (int y = 0; y < pcn_->vocab; ++y) mu_[static_cast<size_t>(y)] = std::move(mu_pending_[static_cast<size_t>(y)]);
            rec.write = memory_.write_with_policy(h_t_, y_true, p_t_, policy_);
            r_prev_ = r_t_;
            s_prev_ = s_t_;
        }
        if (pcn_->mode == PcnMode::stateful) pcn_state_ = std::move(pending_state_);
        trace_.push_back(rec);
        return rec;
    }

private:
    enum class Phase { predict, observe };

    Vec predict_impl(PcnStepResult&& step) {
        if (phase_ != Phase::predict) throw ContractError("session_predict: previous step not yet observed");
        phase_ = Phase::observe;
        h_t_ = std::move(step.h);
        r_t_ = std::move(step.scores);
        pending_state_ = std::move(step.state);

        switch (mode_) {
            case SessionMode::pcn_only:
                p_t_ = r_t_;
                theta_mean_ = 0.0;
                break;
            case SessionMode::memory_only:
                s_t_ = memory_.scores(h_t_);
                p_t_ = s_t_;
                theta_mean_ = 1.0;
                break;
            case SessionMode::lmn_fixed:
                s_t_ = memory_.scores(h_t_);
                p_t_ = combine(r_t_, s_t_, fixed_->theta);
                theta_mean_ = fixed_->theta;
                break;
            case SessionMode::lmn: {
                s_t_ = memory_.scores(h_t_);
                int v = pcn_->vocab;
                Vec theta(static_cast<size_t>(v));
                mu_pending_.assign(static_cast<size_t>(v), Vec());
                double sum = 0.0;
                for (int y = 0; y < v; ++y) {
                    const Vec& prev = mu_[static_cast<size_t>(y)].empty() ? rnn_->zero_state() : mu_[static_cast<size_t>(y)];
                    auto [th, mu] = rnn_->gate_step(prev, h_t_, ind_, r_prev_[static_cast<size_t>(y)],
                                                    s_prev_[static_cast<size_t>(y)]);
                    theta[static_cast<size_t>(y)] = th;
                    mu_pending_[static_cast<size_t>(y)] = std::move(mu);
                    sum += th;
                }
                p_t_ = combine(r_t_, s_t_, theta);
                theta_mean_ = sum / v;
                break;
            }
        }
        return p_t_;
    }

    const PcnModel* pcn_;
    SessionMode mode_;
    WritePolicy policy_;
    const FixedCombiner* fixed_;
    const RnnCombiner* rnn_;
    LabeledMemory memory_;
    PcnState pcn_state_;
    Vec r_prev_, s_prev_;
    ErrorIndicators ind_;
    std::vector<Vec> mu_, mu_pending_;
    Phase phase_ = Phase::predict;
    int t_ = 0;
    Vec h_t_, r_t_, s_t_, p_t_;
    PcnState pending_state_;
    double theta_mean_ = 0.0;
    std::vector<StepRecord> trace_;
};

struct RunOptions {
    SessionMode mode = SessionMode::lmn_fixed;
    WritePolicy policy = WritePolicy::label_partitioned;
    bool persist_memory = false;  // carry memory across episodes
    int threads = 1;
    uint64_t seed = 0;
};

struct RunResult {
    std::vector<std::vector<StepRecord>> episodes;  // one trace per episode
};

// Runs every episode of `ds` through a fresh Session (shared frozen PCN and
// combiner weights; per-episode memory and states). The freezing contract is
// asserted by checksum. Episodes are independent, so thread-parallel
// execution with ordered collection is bit-identical to sequential.
inline RunResult run_stream(const PcnModel& pcn, const EpisodeDataset& ds, const MemoryConfig& mem_cfg,
                            const RunOptions& opt, const FixedCombiner* fixed = nullptr,
                            const RnnCombiner* rnn = nullptr) {
    require(!ds.episodes.empty(), "run_stream: empty dataset");
    uint64_t before = pcn.checksum();

    RunResult out;
    out.episodes.resize(ds.episodes.size());

    auto run_episode = [&](size_t idx, LabeledMemory* carried) {
        Session sess(pcn, opt.mode, mem_cfg, opt.policy, fixed, rnn);
        if (carried) sess.adopt_memory(std::move(*carried));
        const Episode& ep = ds.episodes[idx];
        int n = ep.steps(ds.kind);
        for (int t = 0; t < n; ++t) {
            if (ds.kind == DatasetKind::token_sequences) {
                sess.predict(ep.tokens[static_cast<size_t>(t)]);
                sess.observe(ep.tokens[static_cast<size_t>(t) + 1]);
            } else {
                sess.predict(ep.xs[static_cast<size_t>(t)]);
                sess.observe(ep.ys[static_cast<size_t>(t)]);
            }
        }
        out.episodes[idx] = sess.trace();
        if (carried) *carried = std::move(sess).take_memory();
    };

    if (opt.persist_memory) {
        LabeledMemory carried(mem_cfg);
        for (size_t i = 0; i < ds.episodes.size(); ++i) run_episode(i, &carried);
    } else if (opt.threads <= 1) {
        for (size_t i = 0; i < ds.episodes.size(); ++i) run_episode(i, nullptr);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        int nthreads = std::min<int>(opt.threads, static_cast<int>(ds.episodes.size()));
        for (int w = 0; w < nthreads; ++w)
            pool.emplace_back([&]() {
                for (size_t i = next.fetch_add(1); i < ds.episodes.size(); i = next.fetch_add(1))
                    run_episode(i, nullptr);
            });
        for (auto& th : pool) th.join();
    }

    if (pcn.checksum() != before)
        throw ContractError("run_stream: frozen PCN parameters changed during online deployment");
    return out;
}

}  // namespace lmn
