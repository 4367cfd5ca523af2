#pragma once

#include <unordered_map>

#include "lmn/memory.hpp"
#include "lmn/pcn.hpp"

namespace lmn {

// P(y) proportional to (1-theta_y) r_y + theta_y s_y, renormalized.
inline Vec combine(const Vec& r, const Vec& s, const Vec& theta) {
    require(r.size() == s.size() && r.size() == theta.size(), "combine: length mismatch");
    Vec p(r.size());
    double z = 0.0;
    for (size_t y = 0; y < r.size(); ++y) {
        p[y] = (1.0 - theta[y]) * r[y] + theta[y] * s[y];
        z += p[y];
    }
    for (double& x : p) x /= z;
    return p;
}

inline Vec combine(const Vec& r, const Vec& s, double theta) {
    return combine(r, s, Vec(r.size(), theta));
}

// LMN-fixed: a single mixing weight for all steps and labels.
struct FixedCombiner {
    double theta = 0.5;
};

// Binary indicators of the previous step's errors, both 0 at t = 1.
struct ErrorIndicators {
    double pcn = 0.0;
    double mem = 0.0;
};

// Per-label gating RNN (shared weights, label-local state):
//   mu_ty  = GRU(mu_{t-1,y}, [h_t, e_pcn, e_mem, r_{t-1,y}, s_{t-1,y}])
//   theta_ty = sigmoid(W_theta mu_ty + b_theta)
// States are materialized lazily as zero vectors on first touch.
class RnnCombiner {
public:
    int state_dim = 0;  // k
    int input_dim = 0;  // d + 4

    static RnnCombiner create(int pcn_hidden_dim, int state_dim, uint64_t seed) {
        RnnCombiner c;
        c.state_dim = state_dim;
        c.input_dim = pcn_hidden_dim + 4;
        Prng rng(seed);
        c.gru_ = GruCell::create(c.ps_, "combiner.gru", c.input_dim, state_dim, rng);
        c.w_theta_ = c.ps_.add_glorot("combiner.Wt", 1, state_dim, rng);
        c.b_theta_ = c.ps_.add("combiner.bt", 1, 1);
        return c;
    }

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    const GruCell& gru() const { return gru_; }
    int w_theta() const { return w_theta_; }
    int b_theta() const { return b_theta_; }

    Vec gate_input(const Vec& h, const ErrorIndicators& ind, double r_prev_y, double s_prev_y) const {
        Vec x;
        x.reserve(h.size() + 4);
        x.insert(x.end(), h.begin(), h.end());
        x.push_back(ind.pcn);
        x.push_back(ind.mem);
        x.push_back(r_prev_y);
        x.push_back(s_prev_y);
        return x;
    }

    // One gate step for one label. Returns theta and the advanced state;
    // the caller decides when to commit the state.
    std::pair<double, Vec> gate_step(const Vec& mu_prev, const Vec& h, const ErrorIndicators& ind,
                                     double r_prev_y, double s_prev_y) const {
        Vec mu = lmn::gru_step(ps_, gru_, gate_input(h, ind, r_prev_y, s_prev_y), mu_prev);
        double a = dot(ps_.value("combiner.Wt").a, mu) + ps_.value("combiner.bt").a[0];
        return {sigmoid(a), mu};
    }

    Vec zero_state() const { return Vec(static_cast<size_t>(state_dim), 0.0); }

    // Appended to a PCN checkpoint under combiner.* block names.
    void append_to_checkpoint(const std::filesystem::path& path, const PcnModel& pcn) const {
        CheckpointHeader hdr;
        hdr.mode = pcn.mode == PcnMode::stateful ? 0 : 1;
        hdr.vocab = static_cast<uint32_t>(pcn.vocab);
        hdr.embed_dim = static_cast<uint32_t>(pcn.embed_dim);
        hdr.hidden_dim = static_cast<uint32_t>(pcn.hidden_dim);
        ParamStore merged;
        auto copy_all = [&merged](const ParamStore& src) {
            for (size_t e = 0; e < src.count(); ++e) {
                const auto& entry = src.entry(static_cast<int>(e));
                int id = merged.add(entry.name, entry.value.rows, entry.value.cols);
                merged.entry(id).value = entry.value;
            }
        };
        copy_all(pcn.params());
        copy_all(ps_);
        checkpoint_save(path, hdr, merged);
    }

    static RnnCombiner from_checkpoint(const Checkpoint& cp) {
        RnnCombiner c;
        for (const auto& [name, mat] : cp.blocks) {
            if (name.rfind("combiner.", 0) != 0 || name == "combiner.theta") continue;
            int id = c.ps_.add(name, mat.rows, mat.cols);
            c.ps_.entry(id).value = mat;
        }
        if (!c.ps_.has("combiner.Wt")) throw ParseError("missing combiner blocks", 0);
        c.gru_ = GruCell::attach(c.ps_, "combiner.gru");
        c.w_theta_ = c.ps_.id("combiner.Wt");
        c.b_theta_ = c.ps_.id("combiner.bt");
        c.state_dim = c.ps_.value("combiner.Wt").cols;
        c.input_dim = c.gru_.input_dim;
        return c;
    }

private:
    ParamStore ps_;
    GruCell gru_;
    int w_theta_ = -1, b_theta_ = -1;
};

}  // namespace lmn
