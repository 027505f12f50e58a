// Central finite-difference gradient checker. Lives in test code so the
// analytic path it verifies never feeds back into it.
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "deper/nn/autograd.hpp"

namespace deper::testing {

struct GradCheckResult {
    bool ok = true;
    double max_rel_err = 0.0;
    std::string worst;
    int checked = 0;
};

// build_loss must construct a fresh graph over the given parameter leaves on
// every call. Elementwise pass rule: |analytic - numeric| <=
// max(tol * max(|analytic|, |numeric|), abs_floor); the floor only forgives
// discrepancies below central-difference resolution.
inline GradCheckResult grad_check(const std::function<nn::Var()>& build_loss,
                                  const std::vector<std::pair<std::string, nn::Var>>& params,
                                  double step = 1e-3, double tol = 1e-4,
                                  double abs_floor = 1e-7) {
    for (const auto& [name, p] : params) {
        (void)name;
        const_cast<nn::Var&>(p).zero_grad();
    }
    nn::Var loss = build_loss();
    nn::backward(loss);
    std::vector<nn::Mat> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        (void)name;
        analytic.push_back(p.grad());
    }

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        nn::Var p = params[pi].second;
        for (Eigen::Index i = 0; i < p.value().size(); ++i) {
            const double saved = p.value()(i);
            p.value()(i) = saved + step;
            const double f_plus = build_loss().item();
            p.value()(i) = saved - step;
            const double f_minus = build_loss().item();
            p.value()(i) = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double a = analytic[pi](i);
            const double diff = std::abs(a - numeric);
            const double scale = std::max(std::abs(a), std::abs(numeric));
            const double rel = diff / std::max(scale, 1e-12);
            if (scale > 0.0 && rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst = params[pi].first + "[" + std::to_string(i) + "]";
            }
            if (diff > std::max(tol * scale, abs_floor)) {
                result.ok = false;
            }
            ++result.checked;
        }
    }
    return result;
}

}  // namespace deper::testing
