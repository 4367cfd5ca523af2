#pragma once

#include <algorithm>
#include <cmath>

#include "lmn/common.hpp"

namespace lmn {

// Numerically stable softmax (max-subtraction). Output entries are in (0,1]
// and sum to 1 within 1e-12.
inline Vec softmax(const Vec& logits) {
    require(!logits.empty(), "softmax: empty input");
    require(all_finite(logits), "softmax: non-finite entry");
    double mx = *std::max_element(logits.begin(), logits.end());
    Vec out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

// Cosine similarity in [-1,1]. A near-zero-norm operand (norm < 1e-12) yields
// 0 so empty memory cells cannot poison scores.
inline double cosine(const Vec& a, const Vec& b) {
    require(a.size() == b.size(), "cosine: length mismatch");
    double na = norm(a), nb = norm(b);
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

// y = W x
inline Vec matvec(const Matrix& w, const Vec& x) {
    require(static_cast<size_t>(w.cols) == x.size(), "matvec: dimension mismatch");
    Vec y(static_cast<size_t>(w.rows), 0.0);
    for (int r = 0; r < w.rows; ++r) {
        const double* row = &w.a[static_cast<size_t>(r) * w.cols];
        double s = 0.0;
        for (int c = 0; c < w.cols; ++c) s += row[c] * x[static_cast<size_t>(c)];
        y[static_cast<size_t>(r)] = s;
    }
    return y;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(p) guarded against p == 0 so margin arithmetic stays finite.
inline double safe_log(double p) {
    return std::log(std::max(p, 2.2250738585072014e-308));
}

// Rank of `label` under scores `p` with deterministic tie-breaking: a tie is
// won by the lower label id. Rank is 1-based.
inline int rank_of(const Vec& p, int label) {
    double py = p[static_cast<size_t>(label)];
    int r = 1;
    for (int z = 0; z < static_cast<int>(p.size()); ++z) {
        if (z == label) continue;
        double pz = p[static_cast<size_t>(z)];
        if (pz > py || (pz == py && z < label)) ++r;
    }
    return r;
}

// Argmax with lowest-index tie-breaking.
inline int argmax(const Vec& p) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(p.size()); ++i)
        if (p[static_cast<size_t>(i)] > p[static_cast<size_t>(best)]) best = i;
    return best;
}

// Argmax excluding one index, lowest-index tie-breaking.
inline int argmax_excluding(const Vec& p, int skip) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(p.size()); ++i) {
        if (i == skip) continue;
        if (best < 0 || p[static_cast<size_t>(i)] > p[static_cast<size_t>(best)]) best = i;
    }
    return best;
}

}  // namespace lmn
