#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ncdlab/autograd.hpp"
#include "ncdlab/errors.hpp"

namespace ncdlab {

/// A differentiable scalar-valued test function: given a tape and leaf values
/// (one per input tensor, in order), builds a graph and returns the root.
using ScalarFn = std::function<Value(Tape<double>&, const std::vector<Value>&)>;

/// Compares reverse-mode gradients against central finite differences.
/// Runs entirely in double: the production engine is float, but the backward
/// formulas are shared through the template, so checking them at full
/// precision keeps the tolerance sharp without false failures.
///
/// Returns the max over all input coordinates of
///   |g_fd - g_ad| / max(|g_fd|, |g_ad|, 1e-8).
inline double grad_check(const ScalarFn& fn, const std::vector<Tensor<double>*>& inputs,
                         double eps = 1e-3) {
    if (eps < 1e-5 || eps > 1e-2) throw argument_error("grad_check eps must be in [1e-5, 1e-2]");
    if (inputs.empty()) throw argument_error("grad_check needs at least one input");

    auto eval = [&]() -> double {
        Tape<double> tape;
        std::vector<Value> vals;
        vals.reserve(inputs.size());
        for (auto* t : inputs) vals.push_back(tape.leaf(*t));
        Value root = fn(tape, vals);
        const Tensor<double>& out = tape.value(root);
        if (out.numel() != 1) throw shape_error("grad_check fn must return a scalar");
        if (!std::isfinite(out.data[0])) throw numeric_error("grad_check fn output is not finite");
        return out.data[0];
    };

    // reverse-mode pass
    std::vector<std::vector<double>> ad;
    {
        Tape<double> tape;
        std::vector<Value> vals;
        for (auto* t : inputs) {
            t->set_requires_grad(true);
            vals.push_back(tape.leaf(*t));
        }
        Value root = fn(tape, vals);
        if (tape.value(root).numel() != 1) throw shape_error("grad_check fn must return a scalar");
        if (!std::isfinite(tape.value(root).data[0]))
            throw numeric_error("grad_check fn output is not finite");
        tape.backward(root);
        for (auto* t : inputs) ad.push_back(t->grad);
    }

    double max_err = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Tensor<double>& x = *inputs[t];
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double saved = x.data[i];
            x.data[i] = saved + eps;
            const double fp = eval();
            x.data[i] = saved - eps;
            const double fm = eval();
            x.data[i] = saved;
            const double g_fd = (fp - fm) / (2.0 * eps);
            const double g_ad = ad[t][i];
            const double denom = std::max({std::fabs(g_fd), std::fabs(g_ad), 1e-8});
            max_err = std::max(max_err, std::fabs(g_fd - g_ad) / denom);
        }
    }
    return max_err;
}

struct CheckReport {
    std::string name;
    double max_err = 0.0;
    bool passed(double tol = 1e-4) const { return max_err < tol; }
};

}  // namespace ncdlab
