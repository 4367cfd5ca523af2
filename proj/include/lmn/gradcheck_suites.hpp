#pragma once

#include "lmn/gradcheck.hpp"
#include "lmn/gru.hpp"

namespace lmn {

struct SuiteResult {
    std::string component;
    double max_rel_err = 0.0;
    int instances = 0;
    bool pass = true;
};

// The registered gradient-check suites: every analytic gradient the library
// uses, exercised on randomized small instances against central differences.
inline std::vector<SuiteResult> run_gradcheck_suites(uint64_t seed, int instances, double eps, double tol) {
    std::vector<SuiteResult> results;

    auto run = [&](const char* name, auto&& make_case) {
        SuiteResult sr;
        sr.component = name;
        sr.instances = instances;
        for (int i = 0; i < instances; ++i) {
            Prng rng(seed * 7919 + static_cast<uint64_t>(i) * 104729 + std::hash<std::string>{}(name));
            ParamStore ps;
            std::function<int(Tape&)> build = make_case(ps, rng);
            BackpropReport rep = backprop_check(ps, build, eps, tol);
            sr.max_rel_err = std::max(sr.max_rel_err, rep.max_rel_err);
            sr.pass = sr.pass && rep.pass;
        }
        results.push_back(sr);
    };

    // Softmax cross-entropy over a logit parameter vector.
    run("softmax_ce", [](ParamStore& ps, Prng& rng) {
        int v = 3 + rng.below(5);
        ps.add_uniform("logits", v, 1, rng, 2.0);
        int target = rng.below(v);
        int id = ps.id("logits");
        return std::function<int(Tape&)>([id, target](Tape& tp) {
            return tp.softmax_ce(tp.param(id), target);
        });
    });

    // GRU + softmax + cross-entropy over a short token sequence (the
    // stateful PCN training graph).
    run("gru_sequence", [](ParamStore& ps, Prng& rng) {
        int d_e = 2 + rng.below(3), d = 2 + rng.below(3), v = 3 + rng.below(3);
        GruCell cell = GruCell::create(ps, "gru", d_e, d, rng);
        int emb = ps.add_uniform("embed", v, d_e, rng, 0.5);
        int beta = ps.add_uniform("beta", v, d, rng, 0.5);
        std::vector<int> tokens;
        for (int t = 0; t < 4; ++t) tokens.push_back(rng.below(v));
        return std::function<int(Tape&)>([cell, emb, beta, tokens, d](Tape& tp) {
            Vec zeros(static_cast<size_t>(d), 0.0);
            int h = tp.leaf(zeros);
            int loss = -1;
            for (size_t t = 0; t + 1 < tokens.size(); ++t) {
                h = gru_step(tp, cell, tp.embed_row(emb, tokens[t]), h);
                int ce = tp.softmax_ce(tp.matvec(beta, h), tokens[t + 1]);
                loss = loss < 0 ? ce : tp.add(loss, ce);
            }
            return tp.affine(loss, 1.0 / static_cast<double>(tokens.size() - 1), 0.0);
        });
    });

    // Stateless tanh perceptron with a masked cross-entropy (the seen-label
    // restriction of batch training).
    run("stateless_mlp", [](ParamStore& ps, Prng& rng) {
        int in = 2 + rng.below(3), d = 2 + rng.below(3), v = 4 + rng.below(3);
        int w1 = ps.add_glorot("w1", d, in, rng);
        int b1 = ps.add("b1", d, 1);
        int beta = ps.add_uniform("beta", v, d, rng, 0.5);
        Vec x(static_cast<size_t>(in));
        for (double& e : x) e = rng.uniform(-1.0, 1.0);
        std::vector<int> mask{0, 1, 2};
        int target = rng.below(3);
        return std::function<int(Tape&)>([w1, b1, beta, x, mask, target](Tape& tp) {
            int h = tp.tanh_(tp.add_bias(tp.matvec(w1, tp.leaf(x)), b1));
            return tp.softmax_ce(tp.matvec(beta, h), target, mask);
        });
    });

    // Combiner gate: per-label GRU chain, sigmoid gate, mixture NLL over two
    // steps so the recurrent path is exercised.
    run("combiner_gate", [](ParamStore& ps, Prng& rng) {
        int d = 2 + rng.below(3), k = 2 + rng.below(3), v = 2 + rng.below(2);
        GruCell cell = GruCell::create(ps, "cgru", d + 4, k, rng);
        int wt = ps.add_glorot("Wt", 1, k, rng);
        int bt = ps.add("bt", 1, 1);
        std::vector<Vec> inputs;
        std::vector<Vec> rs, ss;
        std::vector<int> targets;
        for (int t = 0; t < 2; ++t) {
            Vec x(static_cast<size_t>(d + 4));
            for (double& e : x) e = rng.uniform(-1.0, 1.0);
            inputs.push_back(x);
            Vec logit_r(static_cast<size_t>(v)), logit_s(static_cast<size_t>(v));
            for (double& e : logit_r) e = rng.uniform(-1.5, 1.5);
            for (double& e : logit_s) e = rng.uniform(-1.5, 1.5);
            rs.push_back(softmax(logit_r));
            ss.push_back(softmax(logit_s));
            targets.push_back(rng.below(v));
        }
        return std::function<int(Tape&)>([cell, wt, bt, inputs, rs, ss, targets, k, v](Tape& tp) {
            Vec zeros(static_cast<size_t>(k), 0.0);
            std::vector<int> mu(static_cast<size_t>(v), tp.leaf(zeros));
            int loss = -1;
            for (size_t t = 0; t < inputs.size(); ++t) {
                std::vector<int> thetas;
                for (int y = 0; y < v; ++y) {
                    mu[static_cast<size_t>(y)] = gru_step(tp, cell, tp.leaf(inputs[t]), mu[static_cast<size_t>(y)]);
                    thetas.push_back(tp.sigmoid_(tp.add_bias(tp.matvec(wt, mu[static_cast<size_t>(y)]), bt)));
                }
                int nll = tp.mix_nll(thetas, rs[t], ss[t], targets[t]);
                loss = loss < 0 ? nll : tp.add(loss, nll);
            }
            return tp.affine(loss, 0.5, 0.0);
        });
    });

    return results;
}

}  // namespace lmn
