#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>

#include "lmn/numcore.hpp"

namespace lmn {

// One memory cell: class label, stored content vector, nonnegative weight.
struct MemoryCell {
    int label = -1;
    Vec content;
    double alpha = 0.0;
};

struct MemoryConfig {
    int labels = 0;            // number of addressable labels (V)
    int dim = 0;               // content dimension (d)
    int cells_per_label = 1;   // T
    double lambda = 10.0;      // kernel sharpness
    double delta = 0.5;        // strength exponent on alpha
    double margin = 0.5;       // write gate, in log-probability units
    double decay = 0.99;       // alpha decay on merge
    int total_capacity = 0;    // N, for the global-LRU ablation; 0 = labels*T

    void validate() const {
        require(labels >= 1, "MemoryConfig: labels must be >= 1");
        require(dim >= 1, "MemoryConfig: dim must be >= 1");
        require(cells_per_label >= 1, "MemoryConfig: cells_per_label must be >= 1");
        require(lambda > 0.0, "MemoryConfig: lambda must be positive");
        require(delta >= 0.0, "MemoryConfig: delta must be nonnegative");
        require(margin >= 0.0, "MemoryConfig: margin must be nonnegative");
        require(decay > 0.0 && decay <= 1.0, "MemoryConfig: decay must be in (0,1]");
    }
};

struct ReadResult {
    Vec content;         // M_ty
    double alpha = 0.0;  // alpha_ty
    Vec weights;         // w_tm over the label's stored cells
};

struct WriteOutcome {
    double loss = 0.0;
    bool gated = false;     // true: margin satisfied, nothing written
    bool merged = false;    // existing same-label cells received a share of h
    bool installed = false; // a new cell was appended
    std::optional<int> replaced_cell_index;  // label-local index that was evicted
};

enum class WritePolicy {
    label_partitioned,
    write_always_global_lru,
};

// Label-addressed kernel memory. Cells are partitioned by label with at most
// T per label; only stored (non-empty) cells are kept. Reads average within
// a label (kernel-ratio weights); scores form a kernel classifier across
// labels; writes are margin-gated with merge, alpha decay, and
// least-alpha-within-label replacement.
class LabeledMemory {
public:
    explicit LabeledMemory(MemoryConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        if (cfg_.total_capacity <= 0) cfg_.total_capacity = cfg_.labels * cfg_.cells_per_label;
        cells_.resize(static_cast<size_t>(cfg_.labels));
        stamps_.resize(static_cast<size_t>(cfg_.labels));
    }

    const MemoryConfig& config() const { return cfg_; }
    const std::vector<MemoryCell>& cells(int label) const {
        check_label(label);
        return cells_[static_cast<size_t>(label)];
    }
    int total_cells() const {
        int n = 0;
        for (const auto& v : cells_) n += static_cast<int>(v.size());
        return n;
    }

    // Kernel value K(h, v) = exp(lambda * cosine(h, v)).
    double kernel(const Vec& h, const Vec& v) const { return std::exp(cfg_.lambda * cosine(h, v)); }

    // Direct cell injection, bypassing the gate (warm starts and tests).
    void seed_cell(int label, Vec content, double alpha) {
        check_label(label);
        require(static_cast<int>(content.size()) == cfg_.dim, "seed_cell: dimension mismatch");
        require(alpha >= 0.0, "seed_cell: alpha must be nonnegative");
        require(static_cast<int>(cells_[static_cast<size_t>(label)].size()) < cfg_.cells_per_label,
                "seed_cell: label at capacity");
        cells_[static_cast<size_t>(label)].push_back(MemoryCell{label, std::move(content), alpha});
        stamps_[static_cast<size_t>(label)].push_back(++clock_);
    }

    // Soft read over the stored cells of one label. An empty label reads as
    // (zero vector, 0, no weights).
    ReadResult read(const Vec& h, int label) const {
        check_label(label);
        require(static_cast<int>(h.size()) == cfg_.dim, "mem_read: dimension mismatch");
        const auto& cs = cells_[static_cast<size_t>(label)];
        ReadResult out;
        out.content.assign(static_cast<size_t>(cfg_.dim), 0.0);
        if (cs.empty()) return out;
        out.weights = merge_weights(h, cs);
        for (size_t m = 0; m < cs.size(); ++m) {
            double w = out.weights[m];
            for (int i = 0; i < cfg_.dim; ++i) out.content[static_cast<size_t>(i)] += w * cs[m].content[static_cast<size_t>(i)];
            out.alpha += w * cs[m].alpha;
        }
        return out;
    }

    // s_ty proportional to alpha_ty^delta * K(h, M_ty) over labels with at
    // least one stored cell; empty labels score 0. A fully empty memory
    // scores uniformly.
    Vec scores(const Vec& h) const {
        require(static_cast<int>(h.size()) == cfg_.dim, "mem_scores: dimension mismatch");
        Vec logit(static_cast<size_t>(cfg_.labels), 0.0);
        std::vector<char> live(static_cast<size_t>(cfg_.labels), 0);
        int nlive = 0;
        for (int y = 0; y < cfg_.labels; ++y) {
            const auto& cs = cells_[static_cast<size_t>(y)];
            if (cs.empty()) continue;
            ReadResult r = read(h, y);
            // alpha^delta * exp(lambda cos) computed in log space.
            logit[static_cast<size_t>(y)] = cfg_.delta * safe_log(r.alpha) + cfg_.lambda * cosine(h, r.content);
            live[static_cast<size_t>(y)] = 1;
            ++nlive;
        }
        Vec s(static_cast<size_t>(cfg_.labels), 0.0);
        if (nlive == 0) {
            for (double& x : s) x = 1.0 / cfg_.labels;
            return s;
        }
        double mx = -1e300;
        for (int y = 0; y < cfg_.labels; ++y)
            if (live[static_cast<size_t>(y)]) mx = std::max(mx, logit[static_cast<size_t>(y)]);
        double sum = 0.0;
        for (int y = 0; y < cfg_.labels; ++y)
            if (live[static_cast<size_t>(y)]) {
                s[static_cast<size_t>(y)] = std::exp(logit[static_cast<size_t>(y)] - mx);
                sum += s[static_cast<size_t>(y)];
            }
        for (double& x : s) x /= sum;
        return s;
    }

    // Margin-gated write. Steps, in order:
    //   1. loss = -min(0, log P(y_t) - log P(runner-up) - margin); loss == 0 gates.
    //   2. j = least-alpha stored cell of y_t, taken before the merge.
    //   3. merge h into stored cells of y_t: v += w*h, alpha = alpha*decay + w,
    //      w = softmax(lambda * cosine(h, v)) over those cells.
    //   4. on misprediction, add (y_t, h, 1): into a free slot while the label
    //      is below T, else replacing cell j (requires > 1 stored cells).
    //   5. a label with no stored cell installs (y_t, h, 1) on any loss.
    WriteOutcome write(const Vec& h, int label, const Vec& p) {
        check_label(label);
        require(static_cast<int>(h.size()) == cfg_.dim, "mem_write: dimension mismatch");
        require(p.size() == static_cast<size_t>(cfg_.labels), "mem_write: distribution length mismatch");

        WriteOutcome out;
        int predicted = argmax(p);
        int runner_up = argmax_excluding(p, label);
        out.loss = -std::min(0.0, safe_log(p[static_cast<size_t>(label)]) -
                                      safe_log(p[static_cast<size_t>(runner_up)]) - cfg_.margin);
        if (out.loss == 0.0) {
            out.gated = true;
            return out;
        }

        auto& cs = cells_[static_cast<size_t>(label)];
        if (cs.empty()) {
            install(label, h);
            out.installed = true;
            return out;
        }

        int least = 0;  // pre-merge argmin alpha, lowest index on ties
        for (int m = 1; m < static_cast<int>(cs.size()); ++m)
            if (cs[static_cast<size_t>(m)].alpha < cs[static_cast<size_t>(least)].alpha) least = m;

        Vec w = merge_weights(h, cs);
        for (size_t m = 0; m < cs.size(); ++m) {
            for (int i = 0; i < cfg_.dim; ++i) cs[m].content[static_cast<size_t>(i)] += w[m] * h[static_cast<size_t>(i)];
            cs[m].alpha = cs[m].alpha * cfg_.decay + w[m];
        }
        out.merged = true;

        if (label != predicted) {
            if (static_cast<int>(cs.size()) < cfg_.cells_per_label) {
                install(label, h);
                out.installed = true;
            } else if (cs.size() > 1) {
                cs[static_cast<size_t>(least)] = MemoryCell{label, h, 1.0};
                touch(label, least);
                out.replaced_cell_index = least;
            }
        }
        return out;
    }

    // Ablation policies. label_partitioned delegates to write(); the MANN
    // contrast policy writes every step and evicts the least recently used
    // cell across all labels once total capacity N is exceeded. "Used" means
    // written, or read as part of the predicted label's score.
    WriteOutcome write_with_policy(const Vec& h, int label, const Vec& p, WritePolicy policy) {
        if (policy == WritePolicy::label_partitioned) return write(h, label, p);
        check_label(label);
        require(static_cast<int>(h.size()) == cfg_.dim, "mem_write: dimension mismatch");
        require(p.size() == static_cast<size_t>(cfg_.labels), "mem_write: distribution length mismatch");

        WriteOutcome out;
        int predicted = argmax(p);
        int runner_up = argmax_excluding(p, label);
        out.loss = -std::min(0.0, safe_log(p[static_cast<size_t>(label)]) -
                                      safe_log(p[static_cast<size_t>(runner_up)]) - cfg_.margin);

        auto& pred_cells = cells_[static_cast<size_t>(predicted)];
        for (int m = 0; m < static_cast<int>(pred_cells.size()); ++m) touch(predicted, m);

        auto& cs = cells_[static_cast<size_t>(label)];
        cs.push_back(MemoryCell{label, h, 1.0});
        stamps_[static_cast<size_t>(label)].push_back(++clock_);
        out.installed = true;

        if (total_cells() > cfg_.total_capacity) {
            int ey = -1, em = -1;
            uint64_t oldest = UINT64_MAX;
            for (int y = 0; y < cfg_.labels; ++y)
                for (int m = 0; m < static_cast<int>(stamps_[static_cast<size_t>(y)].size()); ++m)
                    if (stamps_[static_cast<size_t>(y)][static_cast<size_t>(m)] < oldest) {
                        oldest = stamps_[static_cast<size_t>(y)][static_cast<size_t>(m)];
                        ey = y;
                        em = m;
                    }
            cells_[static_cast<size_t>(ey)].erase(cells_[static_cast<size_t>(ey)].begin() + em);
            stamps_[static_cast<size_t>(ey)].erase(stamps_[static_cast<size_t>(ey)].begin() + em);
            if (ey == label) out.replaced_cell_index = em;
        }
        return out;
    }

    // Debug dump: one record per stored cell, label-major, index-minor.
    void dump(std::ostream& os) const {
        for (int y = 0; y < cfg_.labels; ++y)
            for (const auto& c : cells_[static_cast<size_t>(y)]) {
                os << y << '\t' << format_double(c.alpha) << '\t';
                for (size_t i = 0; i < c.content.size(); ++i) {
                    if (i) os << ' ';
                    os << format_double(c.content[i]);
                }
                os << '\n';
            }
    }

private:
    MemoryConfig cfg_;
    std::vector<std::vector<MemoryCell>> cells_;
    std::vector<std::vector<uint64_t>> stamps_;  // last-use clocks, ablation only
    uint64_t clock_ = 0;

    void check_label(int label) const {
        require(label >= 0 && label < cfg_.labels, "memory: unknown label");
    }

    // w = softmax(lambda * cosine(h, v_m)), identical to the kernel-ratio
    // read weights since K = exp(lambda cos).
    Vec merge_weights(const Vec& h, const std::vector<MemoryCell>& cs) const {
        Vec logits(cs.size());
        for (size_t m = 0; m < cs.size(); ++m) logits[m] = cfg_.lambda * cosine(h, cs[m].content);
        return softmax(logits);
    }

    void install(int label, const Vec& h) {
        cells_[static_cast<size_t>(label)].push_back(MemoryCell{label, h, 1.0});
        stamps_[static_cast<size_t>(label)].push_back(++clock_);
    }

    void touch(int label, int idx) {
        stamps_[static_cast<size_t>(label)][static_cast<size_t>(idx)] = ++clock_;
    }

    static std::string format_double(double x) {
        char buf[32];
        snprintf(buf, sizeof(buf), "%.17g", x);
        return buf;
    }
};

}  // namespace lmn
