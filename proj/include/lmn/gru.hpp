#pragma once

#include <string>

#include "lmn/tape.hpp"

namespace lmn {

// GRU cell: z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
// c = tanh(Wc x + Uc (r*h) + bc), h' = (1-z)*h + z*c.
// Parameters live in a ParamStore under `<prefix>.{Wz,Uz,bz,Wr,Ur,br,Wc,Uc,bc}`.
struct GruCell {
    int input_dim = 0;
    int hidden_dim = 0;
    int Wz = -1, Uz = -1, bz = -1;
    int Wr = -1, Ur = -1, br = -1;
    int Wc = -1, Uc = -1, bc = -1;

    static GruCell create(ParamStore& ps, const std::string& prefix, int input_dim, int hidden_dim,
                          Prng& rng) {
        GruCell c;
        c.input_dim = input_dim;
        c.hidden_dim = hidden_dim;
        c.Wz = ps.add_glorot(prefix + ".Wz", hidden_dim, input_dim, rng);
        c.Uz = ps.add_glorot(prefix + ".Uz", hidden_dim, hidden_dim, rng);
        c.bz = ps.add(prefix + ".bz", hidden_dim, 1);
        c.Wr = ps.add_glorot(prefix + ".Wr", hidden_dim, input_dim, rng);
        c.Ur = ps.add_glorot(prefix + ".Ur", hidden_dim, hidden_dim, rng);
        c.br = ps.add(prefix + ".br", hidden_dim, 1);
        c.Wc = ps.add_glorot(prefix + ".Wc", hidden_dim, input_dim, rng);
        c.Uc = ps.add_glorot(prefix + ".Uc", hidden_dim, hidden_dim, rng);
        c.bc = ps.add(prefix + ".bc", hidden_dim, 1);
        return c;
    }

    // Rebind to parameters already present in `ps` (e.g. after checkpoint load).
    static GruCell attach(const ParamStore& ps, const std::string& prefix) {
        GruCell c;
        c.Wz = ps.id(prefix + ".Wz");
        c.Uz = ps.id(prefix + ".Uz");
        c.bz = ps.id(prefix + ".bz");
        c.Wr = ps.id(prefix + ".Wr");
        c.Ur = ps.id(prefix + ".Ur");
        c.br = ps.id(prefix + ".br");
        c.Wc = ps.id(prefix + ".Wc");
        c.Uc = ps.id(prefix + ".Uc");
        c.bc = ps.id(prefix + ".bc");
        c.hidden_dim = ps.entry(c.Wz).value.rows;
        c.input_dim = ps.entry(c.Wz).value.cols;
        return c;
    }
};

// Inference-path step (no tape).
inline Vec gru_step(const ParamStore& ps, const GruCell& g, const Vec& x, const Vec& h_prev) {
    require(static_cast<int>(x.size()) == g.input_dim, "gru_step: input dimension mismatch");
    require(static_cast<int>(h_prev.size()) == g.hidden_dim, "gru_step: hidden dimension mismatch");
    const Matrix& bz = ps.entry(g.bz).value;
    const Matrix& br = ps.entry(g.br).value;
    const Matrix& bc = ps.entry(g.bc).value;
    Vec az = matvec(ps.entry(g.Wz).value, x), azh = matvec(ps.entry(g.Uz).value, h_prev);
    Vec ar = matvec(ps.entry(g.Wr).value, x), arh = matvec(ps.entry(g.Ur).value, h_prev);
    int n = g.hidden_dim;
    Vec z(static_cast<size_t>(n)), r(static_cast<size_t>(n)), rh(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        z[static_cast<size_t>(i)] = sigmoid(az[static_cast<size_t>(i)] + azh[static_cast<size_t>(i)] + bz.a[static_cast<size_t>(i)]);
        r[static_cast<size_t>(i)] = sigmoid(ar[static_cast<size_t>(i)] + arh[static_cast<size_t>(i)] + br.a[static_cast<size_t>(i)]);
        rh[static_cast<size_t>(i)] = r[static_cast<size_t>(i)] * h_prev[static_cast<size_t>(i)];
    }
    Vec ac = matvec(ps.entry(g.Wc).value, x), ach = matvec(ps.entry(g.Uc).value, rh);
    Vec h(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double c = std::tanh(ac[static_cast<size_t>(i)] + ach[static_cast<size_t>(i)] + bc.a[static_cast<size_t>(i)]);
        double zi = z[static_cast<size_t>(i)];
        h[static_cast<size_t>(i)] = (1.0 - zi) * h_prev[static_cast<size_t>(i)] + zi * c;
    }
    return h;
}

// Training-path step: same arithmetic expressed as tape nodes so the
// backward pass is recorded. Returns the new hidden-state node.
inline int gru_step(Tape& tp, const GruCell& g, int x_node, int h_prev_node) {
    int z = tp.sigmoid_(tp.add_bias(tp.add(tp.matvec(g.Wz, x_node), tp.matvec(g.Uz, h_prev_node)), g.bz));
    int r = tp.sigmoid_(tp.add_bias(tp.add(tp.matvec(g.Wr, x_node), tp.matvec(g.Ur, h_prev_node)), g.br));
    int rh = tp.mul(r, h_prev_node);
    int c = tp.tanh_(tp.add_bias(tp.add(tp.matvec(g.Wc, x_node), tp.matvec(g.Uc, rh)), g.bc));
    // h + z*(c - h) == (1-z)*h + z*c
    return tp.add(h_prev_node, tp.mul(z, tp.sub(c, h_prev_node)));
}

}  // namespace lmn
