#pragma once

#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "lmn/online.hpp"

namespace lmn {

struct EpisodeMetrics {
    double nll_sum = 0.0;
    double rr_sum = 0.0;  // sum of 1/rank
    long counted = 0;
    long correct = 0;
    long seen_counted = 0, seen_correct = 0;
    long unseen_counted = 0, unseen_correct = 0;
};

// Aggregate metrics over an online run: mean -log P (log-perplexity, nats),
// MRR, and accuracy split by seen/unseen true labels. With the
// second-occurrence flag only the second within-episode appearance of each
// label is counted, the online analog of one-shot evaluation.
struct MetricReport {
    double log_perplexity = 0.0;
    double mrr = 0.0;
    double accuracy = 0.0;
    double accuracy_seen = 0.0;
    double accuracy_unseen = 0.0;
    long steps = 0;
    long seen_steps = 0;
    long unseen_steps = 0;
    long write_count = 0;
    bool second_occurrence_only = false;
    std::vector<EpisodeMetrics> per_episode;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["log_perplexity_nats"] = log_perplexity;
        j["mrr"] = mrr;
        j["accuracy"] = accuracy;
        j["accuracy_seen"] = accuracy_seen;
        j["accuracy_unseen"] = accuracy_unseen;
        j["steps"] = steps;
        j["seen_steps"] = seen_steps;
        j["unseen_steps"] = unseen_steps;
        j["writes"] = write_count;
        j["second_occurrence_only"] = second_occurrence_only;
        j["episodes"] = nlohmann::json::array();
        for (const auto& e : per_episode) {
            j["episodes"].push_back({{"steps", e.counted},
                                     {"nll_sum", e.nll_sum},
                                     {"rr_sum", e.rr_sum},
                                     {"correct", e.correct}});
        }
        return j;
    }

    std::string to_text() const {
        std::ostringstream os;
        os << "log_perplexity_nats: " << format(log_perplexity) << "\n";
        os << "mrr: " << format(mrr) << "\n";
        os << "accuracy: " << format(accuracy) << "\n";
        os << "accuracy_seen: " << format(accuracy_seen) << "\n";
        os << "accuracy_unseen: " << format(accuracy_unseen) << "\n";
        os << "steps: " << steps << "\n";
        os << "seen_steps: " << seen_steps << "\n";
        os << "unseen_steps: " << unseen_steps << "\n";
        os << "writes: " << write_count << "\n";
        os << "second_occurrence_only: " << (second_occurrence_only ? 1 : 0) << "\n";
        return os.str();
    }

    static std::string format(double x) {
        char buf[32];
        snprintf(buf, sizeof(buf), "%.6f", x);
        return buf;
    }
};

// Pure fold over the step traces. Permuting episodes permutes the
// per-episode breakdown but leaves every aggregate unchanged.
inline MetricReport compute_metrics(const std::vector<std::vector<StepRecord>>& episodes,
                                    bool second_occurrence_only = false,
                                    const std::set<int>& seen_labels = {}) {
    MetricReport rep;
    rep.second_occurrence_only = second_occurrence_only;
    long total_counted = 0;
    bool any = false;
    for (const auto& trace : episodes) {
        EpisodeMetrics em;
        std::unordered_map<int, int> occurrences;
        for (const auto& rec : trace) {
            any = true;
            if (!rec.write.gated && (rec.write.merged || rec.write.installed)) ++rep.write_count;
            int occ = ++occurrences[rec.y_true];
            if (second_occurrence_only && occ != 2) continue;
            ++em.counted;
            em.nll_sum += rec.nll;
            em.rr_sum += 1.0 / rec.rank;
            bool hit = rec.y_pred == rec.y_true;
            em.correct += hit;
            if (seen_labels.count(rec.y_true)) {
                ++em.seen_counted;
                em.seen_correct += hit;
            } else {
                ++em.unseen_counted;
                em.unseen_correct += hit;
            }
        }
        rep.steps += em.counted;
        rep.seen_steps += em.seen_counted;
        rep.unseen_steps += em.unseen_counted;
        total_counted += em.counted;
        rep.per_episode.push_back(em);
    }
    require(any, "compute_metrics: empty trace");
    if (total_counted > 0) {
        double nll = 0.0, rr = 0.0;
        long ok = 0, sok = 0, uok = 0;
        for (const auto& e : rep.per_episode) {
            nll += e.nll_sum;
            rr += e.rr_sum;
            ok += e.correct;
            sok += e.seen_correct;
            uok += e.unseen_correct;
        }
        rep.log_perplexity = nll / static_cast<double>(total_counted);
        rep.mrr = rr / static_cast<double>(total_counted);
        rep.accuracy = static_cast<double>(ok) / static_cast<double>(total_counted);
        rep.accuracy_seen = rep.seen_steps ? static_cast<double>(sok) / static_cast<double>(rep.seen_steps) : 0.0;
        rep.accuracy_unseen = rep.unseen_steps ? static_cast<double>(uok) / static_cast<double>(rep.unseen_steps) : 0.0;
    }
    return rep;
}

struct AblationCell {
    SessionMode mode;
    WritePolicy policy;
    MetricReport report;
};

struct AblationTable {
    std::vector<AblationCell> cells;

    const AblationCell* find(SessionMode m, WritePolicy p) const {
        for (const auto& c : cells)
            if (c.mode == m && c.policy == p) return &c;
        return nullptr;
    }

    // Aligned text table with deltas against the pcn_only baseline when present.
    std::string to_text() const {
        const AblationCell* base = nullptr;
        for (const auto& c : cells)
            if (c.mode == SessionMode::pcn_only) {
                base = &c;
                break;
            }
        std::ostringstream os;
        os << std::left << std::setw(14) << "mode" << std::setw(26) << "policy" << std::right
           << std::setw(10) << "logppl" << std::setw(10) << "mrr" << std::setw(10) << "acc"
           << std::setw(10) << "acc_seen" << std::setw(12) << "acc_unseen";
        if (base) os << std::setw(12) << "d_logppl" << std::setw(10) << "d_mrr";
        os << "\n";
        for (const auto& c : cells) {
            os << std::left << std::setw(14) << to_string(c.mode) << std::setw(26) << to_string(c.policy)
               << std::right << std::setw(10) << MetricReport::format(c.report.log_perplexity)
               << std::setw(10) << MetricReport::format(c.report.mrr) << std::setw(10)
               << MetricReport::format(c.report.accuracy) << std::setw(10)
               << MetricReport::format(c.report.accuracy_seen) << std::setw(12)
               << MetricReport::format(c.report.accuracy_unseen);
            if (base)
                os << std::setw(12) << MetricReport::format(c.report.log_perplexity - base->report.log_perplexity)
                   << std::setw(10) << MetricReport::format(c.report.mrr - base->report.mrr);
            os << "\n";
        }
        return os.str();
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "mode,policy,logppl,mrr,acc,acc_seen,acc_unseen\n";
        for (const auto& c : cells)
            os << to_string(c.mode) << ',' << to_string(c.policy) << ','
               << MetricReport::format(c.report.log_perplexity) << ',' << MetricReport::format(c.report.mrr)
               << ',' << MetricReport::format(c.report.accuracy) << ','
               << MetricReport::format(c.report.accuracy_seen) << ','
               << MetricReport::format(c.report.accuracy_unseen) << "\n";
        return os.str();
    }
};

// Runs one run_stream per (mode, policy) cell with a shared seed and dataset.
inline AblationTable ablate(const PcnModel& pcn, const EpisodeDataset& ds, const MemoryConfig& mem_cfg,
                            const std::vector<SessionMode>& modes, const std::vector<WritePolicy>& policies,
                            const RunOptions& base_opt, bool second_occurrence,
                            const FixedCombiner* fixed = nullptr, const RnnCombiner* rnn = nullptr) {
    AblationTable table;
    for (SessionMode m : modes)
        for (WritePolicy p : policies) {
            RunOptions opt = base_opt;
            opt.mode = m;
            opt.policy = p;
            RunResult rr = run_stream(pcn, ds, mem_cfg, opt, fixed, rnn);
            table.cells.push_back({m, p, compute_metrics(rr.episodes, second_occurrence, ds.seen_labels)});
        }
    return table;
}

// Trace file: one line per step, tab-separated.
inline void write_trace(const RunResult& rr, std::ostream& os) {
    os << "episode\tt\ty_true\ty_pred\tnll\trank\ttheta_mean\tgated\treplaced\n";
    for (size_t e = 0; e < rr.episodes.size(); ++e)
        for (const auto& rec : rr.episodes[e]) {
            os << e << '\t' << rec.t << '\t' << rec.y_true << '\t' << rec.y_pred << '\t'
               << MetricReport::format(rec.nll) << '\t' << rec.rank << '\t'
               << MetricReport::format(rec.theta_mean) << '\t' << (rec.write.gated ? 1 : 0) << '\t'
               << (rec.write.replaced_cell_index ? std::to_string(*rec.write.replaced_cell_index) : std::string("-"))
               << '\n';
        }
}

}  // namespace lmn
