#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "lmn/numcore.hpp"
#include "lmn/param_store.hpp"

namespace lmn {

// Reverse-mode tape over a fixed op set. Nodes evaluate eagerly; backward()
// walks the tape in reverse and accumulates parameter gradients into the
// ParamStore. Values and adjoints live in flat slabs so an episode-sized
// graph allocates nothing after the first pass.
//
// Op set: leaf, param (whole entry as a vector), matvec, embedded row,
// add / sub / elementwise mul, bias add, scalar affine, sigmoid, tanh, dot,
// fused softmax cross-entropy (optionally over a class subset), and the
// fused two-expert mixture NLL used by the combiner loss.
class Tape {
public:
    enum class Op : uint8_t {
        Leaf,
        Param,
        Matvec,
        EmbedRow,
        Add,
        Sub,
        Mul,
        AddBias,
        Affine,
        Sigmoid,
        Tanh,
        Dot,
        SoftmaxCe,
        MixNll,
    };

    explicit Tape(ParamStore& ps) : ps_(&ps) {}

    void clear() {
        nodes_.clear();
        val_.clear();
        grd_.clear();
        ints_.clear();
        consts_.clear();
    }

    size_t size() const { return nodes_.size(); }

    int leaf(std::span<const double> x) {
        int id = push(Op::Leaf, -1, -1, -1, static_cast<int>(x.size()));
        std::copy(x.begin(), x.end(), out(id));
        return id;
    }

    int leaf(const Vec& x) { return leaf(std::span<const double>(x.data(), x.size())); }

    // Whole parameter entry, flattened. Gradient flows back into the entry.
    int param(int entry) {
        const auto& e = ps_->entry(entry);
        int id = push(Op::Param, -1, -1, entry, static_cast<int>(e.value.size()));
        std::copy(e.value.a.begin(), e.value.a.end(), out(id));
        return id;
    }

    // W x for parameter matrix W.
    int matvec(int w_entry, int x) {
        const Matrix& w = ps_->entry(w_entry).value;
        require(w.cols == len(x), "tape matvec: dimension mismatch");
        int id = push(Op::Matvec, x, -1, w_entry, w.rows);
        const double* xv = out_c(x);
        double* y = out(id);
        for (int r = 0; r < w.rows; ++r) {
            const double* row = &w.a[static_cast<size_t>(r) * w.cols];
            double s = 0.0;
            for (int c = 0; c < w.cols; ++c) s += row[c] * xv[c];
            y[r] = s;
        }
        return id;
    }

    // Row `row` of an embedding-table parameter.
    int embed_row(int e_entry, int row) {
        const Matrix& e = ps_->entry(e_entry).value;
        require(row >= 0 && row < e.rows, "tape embed_row: row out of range");
        int id = push(Op::EmbedRow, -1, -1, e_entry, e.cols);
        id_aux(id).aux0 = row;
        std::copy_n(&e.a[static_cast<size_t>(row) * e.cols], e.cols, out(id));
        return id;
    }

    int add(int a, int b) { return binary(Op::Add, a, b); }
    int sub(int a, int b) { return binary(Op::Sub, a, b); }
    int mul(int a, int b) { return binary(Op::Mul, a, b); }

    // x + b for parameter vector b (rows x 1).
    int add_bias(int x, int b_entry) {
        const Matrix& b = ps_->entry(b_entry).value;
        require(static_cast<int>(b.size()) == len(x), "tape add_bias: dimension mismatch");
        int id = push(Op::AddBias, x, -1, b_entry, len(x));
        const double* xv = out_c(x);
        double* y = out(id);
        for (int i = 0; i < len(x); ++i) y[i] = xv[i] + b.a[static_cast<size_t>(i)];
        return id;
    }

    // k0 * x + k1, elementwise.
    int affine(int x, double k0, double k1) {
        int id = push(Op::Affine, x, -1, -1, len(x));
        id_aux(id).k0 = k0;
        id_aux(id).k1 = k1;
        const double* xv = out_c(x);
        double* y = out(id);
        for (int i = 0; i < len(x); ++i) y[i] = k0 * xv[i] + k1;
        return id;
    }

    int sigmoid_(int x) {
        int id = push(Op::Sigmoid, x, -1, -1, len(x));
        const double* xv = out_c(x);
        double* y = out(id);
        for (int i = 0; i < len(x); ++i) y[i] = sigmoid(xv[i]);
        return id;
    }

    int tanh_(int x) {
        int id = push(Op::Tanh, x, -1, -1, len(x));
        const double* xv = out_c(x);
        double* y = out(id);
        for (int i = 0; i < len(x); ++i) y[i] = std::tanh(xv[i]);
        return id;
    }

    int dot_(int a, int b) {
        require(len(a) == len(b), "tape dot: length mismatch");
        int id = push(Op::Dot, a, b, -1, 1);
        const double *av = out_c(a), *bv = out_c(b);
        double s = 0.0;
        for (int i = 0; i < len(a); ++i) s += av[i] * bv[i];
        *out(id) = s;
        return id;
    }

    // -log softmax(logits)[target]; `classes` optionally restricts the
    // softmax support (used to withhold gradient from unseen-label rows).
    int softmax_ce(int logits, int target, std::span<const int> classes = {}) {
        int id = push(Op::SoftmaxCe, logits, -1, -1, 1);
        auto& nx = id_aux(id);
        nx.aux0 = target;
        if (classes.empty()) {
            nx.aux1 = -1;
        } else {
            nx.aux1 = static_cast<int>(ints_.size());
            nx.aux2 = static_cast<int>(classes.size());
            ints_.insert(ints_.end(), classes.begin(), classes.end());
        }
        *out(id) = ce_forward(nx, out_c(logits), len(logits), nullptr);
        return id;
    }

    // -log P(target) for the mixture P(y) proportional to
    // (1-theta_y) r_y + theta_y s_y, with one scalar theta node per label.
    // r and s are constants.
    int mix_nll(std::span<const int> theta_nodes, const Vec& r, const Vec& s, int target) {
        size_t n = theta_nodes.size();
        require(n == r.size() && n == s.size(), "tape mix_nll: length mismatch");
        int id = push(Op::MixNll, -1, -1, -1, 1);
        auto& nx = id_aux(id);
        nx.aux0 = target;
        nx.aux1 = static_cast<int>(ints_.size());
        nx.aux2 = static_cast<int>(n);
        for (int t : theta_nodes) {
            require(len(t) == 1, "tape mix_nll: theta nodes must be scalars");
            ints_.push_back(t);
        }
        nx.aux3 = static_cast<int>(consts_.size());
        consts_.insert(consts_.end(), r.begin(), r.end());
        consts_.insert(consts_.end(), s.begin(), s.end());
        *out(id) = mix_forward(nx, nullptr);
        return id;
    }

    int len(int id) const { return nodes_[static_cast<size_t>(id)].len; }
    double value0(int id) const { return val_[static_cast<size_t>(nodes_[static_cast<size_t>(id)].off)]; }
    Vec value(int id) const {
        const auto& n = nodes_[static_cast<size_t>(id)];
        return Vec(val_.begin() + n.off, val_.begin() + n.off + n.len);
    }

    // Reverse pass seeding d(loss)/d(loss) = seed. Parameter gradients
    // accumulate into the ParamStore (they are not cleared here).
    void backward(int loss, double seed = 1.0) {
        require(len(loss) == 1, "tape backward: loss must be scalar");
        grd_.assign(val_.size(), 0.0);
        grd_[static_cast<size_t>(nodes_[static_cast<size_t>(loss)].off)] = seed;
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) backstep(id);
    }

private:
    struct Node {
        Op op;
        int a = -1, b = -1;
        int param = -1;
        int off = 0, len = 0;
        int aux0 = -1, aux1 = -1, aux2 = -1, aux3 = -1;
        double k0 = 0.0, k1 = 0.0;
    };

    ParamStore* ps_;
    std::vector<Node> nodes_;
    std::vector<double> val_, grd_;
    std::vector<int> ints_;
    std::vector<double> consts_;

    Node& id_aux(int id) { return nodes_[static_cast<size_t>(id)]; }

    int push(Op op, int a, int b, int param, int n) {
        Node nd;
        nd.op = op;
        nd.a = a;
        nd.b = b;
        nd.param = param;
        nd.off = static_cast<int>(val_.size());
        nd.len = n;
        nodes_.push_back(nd);
        val_.resize(val_.size() + static_cast<size_t>(n), 0.0);
        return static_cast<int>(nodes_.size()) - 1;
    }

    double* out(int id) { return &val_[static_cast<size_t>(nodes_[static_cast<size_t>(id)].off)]; }
    const double* out_c(int id) const { return &val_[static_cast<size_t>(nodes_[static_cast<size_t>(id)].off)]; }
    double* adj(int id) { return &grd_[static_cast<size_t>(nodes_[static_cast<size_t>(id)].off)]; }

    int binary(Op op, int a, int b) {
        require(len(a) == len(b), "tape binary op: length mismatch");
        int id = push(op, a, b, -1, len(a));
        const double *av = out_c(a), *bv = out_c(b);
        double* y = out(id);
        for (int i = 0; i < len(a); ++i) {
            switch (op) {
                case Op::Add: y[i] = av[i] + bv[i]; break;
                case Op::Sub: y[i] = av[i] - bv[i]; break;
                default: y[i] = av[i] * bv[i]; break;
            }
        }
        return id;
    }

    // Shared softmax-CE forward; writes class probabilities into `probs`
    // (dense over the full logit vector) when non-null.
    double ce_forward(const Node& n, const double* logits, int nlogits, Vec* probs) const {
        const int* cls = nullptr;
        int ncls = nlogits;
        if (n.aux1 >= 0) {
            cls = &ints_[static_cast<size_t>(n.aux1)];
            ncls = n.aux2;
        }
        auto logit_at = [&](int i) { return logits[cls ? cls[i] : i]; };
        double mx = logit_at(0);
        for (int i = 1; i < ncls; ++i) mx = std::max(mx, logit_at(i));
        double sum = 0.0;
        for (int i = 0; i < ncls; ++i) sum += std::exp(logit_at(i) - mx);
        if (probs) {
            probs->assign(static_cast<size_t>(nlogits), 0.0);
            for (int i = 0; i < ncls; ++i)
                (*probs)[static_cast<size_t>(cls ? cls[i] : i)] = std::exp(logit_at(i) - mx) / sum;
        }
        int target = n.aux0;
        bool in_support = !cls;
        if (cls)
            for (int i = 0; i < ncls; ++i)
                if (cls[i] == target) in_support = true;
        require(in_support, "tape softmax_ce: target outside class subset");
        return -(logits[target] - mx - std::log(sum));
    }

    double mix_forward(const Node& n, Vec* mixed) const {
        int nlab = n.aux2;
        const double* r = &consts_[static_cast<size_t>(n.aux3)];
        const double* s = r + nlab;
        double z = 0.0, uy = 0.0;
        for (int y = 0; y < nlab; ++y) {
            double th = val_[static_cast<size_t>(nodes_[static_cast<size_t>(ints_[static_cast<size_t>(n.aux1 + y)])].off)];
            double u = (1.0 - th) * r[y] + th * s[y];
            if (mixed) (*mixed)[static_cast<size_t>(y)] = u;
            z += u;
            if (y == n.aux0) uy = u;
        }
        return -(safe_log(uy) - safe_log(z));
    }

    void backstep(int id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        const double* g = &grd_[static_cast<size_t>(n.off)];
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Param: {
                auto& e = ps_->entry(n.param);
                for (int i = 0; i < n.len; ++i) e.grad[static_cast<size_t>(i)] += g[i];
                break;
            }
            case Op::Matvec: {
                auto& e = ps_->entry(n.param);
                const Matrix& w = e.value;
                const double* xv = out_c(n.a);
                double* gx = adj(n.a);
                for (int r = 0; r < w.rows; ++r) {
                    double gr = g[r];
                    if (gr == 0.0) continue;
                    const double* row = &w.a[static_cast<size_t>(r) * w.cols];
                    double* grow = &e.grad[static_cast<size_t>(r) * w.cols];
                    for (int c = 0; c < w.cols; ++c) {
                        grow[c] += gr * xv[c];
                        gx[c] += gr * row[c];
                    }
                }
                break;
            }
            case Op::EmbedRow: {
                auto& e = ps_->entry(n.param);
                double* grow = &e.grad[static_cast<size_t>(n.aux0) * n.len];
                for (int i = 0; i < n.len; ++i) grow[i] += g[i];
                break;
            }
            case Op::Add: {
                double *ga = adj(n.a), *gb = adj(n.b);
                for (int i = 0; i < n.len; ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                double *ga = adj(n.a), *gb = adj(n.b);
                for (int i = 0; i < n.len; ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                const double *av = out_c(n.a), *bv = out_c(n.b);
                double *ga = adj(n.a), *gb = adj(n.b);
                for (int i = 0; i < n.len; ++i) {
                    ga[i] += g[i] * bv[i];
                    gb[i] += g[i] * av[i];
                }
                break;
            }
            case Op::AddBias: {
                auto& e = ps_->entry(n.param);
                double* ga = adj(n.a);
                for (int i = 0; i < n.len; ++i) {
                    ga[i] += g[i];
                    e.grad[static_cast<size_t>(i)] += g[i];
                }
                break;
            }
            case Op::Affine: {
                double* ga = adj(n.a);
                for (int i = 0; i < n.len; ++i) ga[i] += g[i] * n.k0;
                break;
            }
            case Op::Sigmoid: {
                const double* y = out_c(id);
                double* ga = adj(n.a);
                for (int i = 0; i < n.len; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                break;
            }
            case Op::Tanh: {
                const double* y = out_c(id);
                double* ga = adj(n.a);
                for (int i = 0; i < n.len; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Op::Dot: {
                const double *av = out_c(n.a), *bv = out_c(n.b);
                double *ga = adj(n.a), *gb = adj(n.b);
                double g0 = g[0];
                for (int i = 0; i < len(n.a); ++i) {
                    ga[i] += g0 * bv[i];
                    gb[i] += g0 * av[i];
                }
                break;
            }
            case Op::SoftmaxCe: {
                // d/dlogit_i = p_i - [i == target] over the class subset.
                Vec probs;
                ce_forward(n, out_c(n.a), len(n.a), &probs);
                double* ga = adj(n.a);
                double g0 = g[0];
                if (n.aux1 < 0) {
                    for (int i = 0; i < len(n.a); ++i) ga[i] += g0 * (probs[static_cast<size_t>(i)] - (i == n.aux0 ? 1.0 : 0.0));
                } else {
                    for (int k = 0; k < n.aux2; ++k) {
                        int i = ints_[static_cast<size_t>(n.aux1 + k)];
                        ga[i] += g0 * (probs[static_cast<size_t>(i)] - (i == n.aux0 ? 1.0 : 0.0));
                    }
                }
                break;
            }
            case Op::MixNll: {
                // u_y = (1-theta_y) r_y + theta_y s_y, Z = sum u.
                // dloss/du_y = 1/Z - [y == target]/u_target; du/dtheta_y = s_y - r_y.
                int nlab = n.aux2;
                const double* r = &consts_[static_cast<size_t>(n.aux3)];
                const double* s = r + nlab;
                Vec u(static_cast<size_t>(nlab));
                mix_forward(n, &u);
                double z = 0.0;
                for (double x : u) z += x;
                double uy = std::max(u[static_cast<size_t>(n.aux0)], 2.2250738585072014e-308);
                double g0 = g[0];
                for (int y = 0; y < nlab; ++y) {
                    double dl_du = 1.0 / z - (y == n.aux0 ? 1.0 / uy : 0.0);
                    int tnode = ints_[static_cast<size_t>(n.aux1 + y)];
                    grd_[static_cast<size_t>(nodes_[static_cast<size_t>(tnode)].off)] += g0 * dl_du * (s[y] - r[y]);
                }
                break;
            }
        }
    }
};

}  // namespace lmn
