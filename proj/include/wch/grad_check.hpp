#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wch/tensor.hpp"

namespace wch {

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t worst_input = -1;    // which input tensor
    int64_t worst_coord = -1;    // flat coordinate within it
    double analytic = 0.0;
    double numeric = 0.0;

    bool pass(double tol) const { return max_rel_err <= tol; }
};

// Central-difference check of a scalar-valued function of several tensors.
// f must rebuild its graph from the inputs on every call and return a scalar.
// Uses Richardson extrapolation over step sizes eps and 2*eps, which removes
// the eps^2 truncation term and leaves only roundoff noise.
// Relative error per coordinate: |a - n| / max(1e-12, |a| + |n|).
inline GradCheckResult grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    std::vector<Tensor<double>> inputs, double eps = 1e-5) {
    for (auto& in : inputs) in.set_requires_grad(true);

    Tensor<double> out = f(inputs);
    if (out.size() != 1)
        throw DimensionError("grad_check: function must return a scalar, got " +
                             shape_str(out.shape()));
    for (auto& in : inputs) in.zero_grad();
    out.backward();

    GradCheckResult res;
    for (size_t t = 0; t < inputs.size(); ++t) {
        Tensor<double>& in = inputs[t];
        const std::vector<double> analytic =
            in.has_grad() ? in.grad() : std::vector<double>(in.size(), 0.0);
        for (int64_t i = 0; i < in.size(); ++i) {
            const double orig = in.values()[i];
            const auto at = [&](double x) {
                in.values()[i] = x;
                return f(inputs).item();
            };
            const double d1 = (at(orig + eps) - at(orig - eps)) / (2.0 * eps);
            const double d2 =
                (at(orig + 2 * eps) - at(orig - 2 * eps)) / (4.0 * eps);
            in.values()[i] = orig;
            const double numeric = (4.0 * d1 - d2) / 3.0;
            const double a = analytic[i];
            if (!std::isfinite(a) || !std::isfinite(numeric))
                throw NumericError(
                    "grad_check: non-finite derivative at input " +
                    std::to_string(t) + " coord " + std::to_string(i));
            const double rel = std::abs(a - numeric) /
                               std::max(1e-12, std::abs(a) + std::abs(numeric));
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_input = static_cast<int64_t>(t);
                res.worst_coord = i;
                res.analytic = a;
                res.numeric = numeric;
            }
        }
    }
    return res;
}

}  // namespace wch
