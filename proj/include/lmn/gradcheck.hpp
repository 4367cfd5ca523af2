#pragma once

#include <functional>

#include "lmn/tape.hpp"

namespace lmn {

struct BackpropReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int worst_index = -1;
    int entries_checked = 0;
    bool pass = false;
};

// Checks every parameter entry of `ps` against central differences
// (f(p+eps) - f(p-eps)) / (2 eps). `build_loss` must construct the scalar
// loss on the given tape and return its node; it is re-run for each
// perturbed evaluation, so it must be a pure function of the ParamStore.
inline BackpropReport backprop_check(ParamStore& ps, const std::function<int(Tape&)>& build_loss,
                                     double eps, double tol) {
    ps.zero_grad();
    Tape tape(ps);
    int loss = build_loss(tape);
    require(std::isfinite(tape.value0(loss)), "backprop_check: non-finite loss");
    tape.backward(loss);

    // Snapshot analytic gradients before the perturbation runs disturb them.
    std::vector<Vec> analytic(ps.count());
    for (size_t e = 0; e < ps.count(); ++e) analytic[e] = ps.entry(static_cast<int>(e)).grad;

    auto eval = [&]() {
        Tape t(ps);
        double v = t.value0(build_loss(t));
        if (!std::isfinite(v)) throw std::runtime_error("backprop_check: non-finite loss during perturbation");
        return v;
    };

    BackpropReport rep;
    for (size_t e = 0; e < ps.count(); ++e) {
        auto& entry = ps.entry(static_cast<int>(e));
        for (size_t i = 0; i < entry.value.size(); ++i) {
            double saved = entry.value.a[i];
            entry.value.a[i] = saved + eps;
            double fp = eval();
            entry.value.a[i] = saved - eps;
            double fm = eval();
            entry.value.a[i] = saved;
            double numeric = (fp - fm) / (2.0 * eps);
            double a = analytic[e][i];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
            double rel = std::fabs(a - numeric) / denom;
            ++rep.entries_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = entry.name;
                rep.worst_index = static_cast<int>(i);
            }
        }
    }
    ps.zero_grad();
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace lmn
