#pragma once

// Central finite-difference gradient checker. Test-side oracle, independent
// of the backward implementations it verifies.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <vitas/core/autodiff.hpp>

namespace testsupport {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;
    bool ok(double tol = 1e-3) const { return max_rel_err < tol; }
};

// f builds a fresh graph from the current leaf values and returns a scalar.
inline GradCheckResult gradcheck(
    const std::function<vitas::Var()>& f,
    const std::vector<std::pair<std::string, vitas::Var>>& leaves, double h = 1e-6) {
    using namespace vitas;
    GradCheckResult res;

    Var loss = f();
    for (const auto& [name, leaf] : leaves) leaf->ensure_grad();
    for (const auto& [name, leaf] : leaves)
        std::fill(leaf->grad.data.begin(), leaf->grad.data.end(), 0.0);
    backward(loss);

    for (const auto& [name, leaf] : leaves) {
        for (std::size_t i = 0; i < leaf->value.numel(); ++i) {
            double orig = leaf->value.data[i];
            double step = h * std::max(1.0, std::abs(orig));
            leaf->value.data[i] = orig + step;
            double fp = f()->value.data[0];
            leaf->value.data[i] = orig - step;
            double fm = f()->value.data[0];
            leaf->value.data[i] = orig;
            double numeric = (fp - fm) / (2.0 * step);
            double analytic = leaf->grad.data[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
            double rel = std::abs(numeric - analytic) / denom;
            // both effectively zero: fine
            if (std::abs(numeric) < 1e-10 && std::abs(analytic) < 1e-10) rel = 0.0;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = name + "[" + std::to_string(i) + "] analytic=" +
                            std::to_string(analytic) + " numeric=" + std::to_string(numeric);
            }
        }
    }
    return res;
}

} // namespace testsupport
