#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fame/tensor.hpp"

namespace fame {

struct GradCheckWorst {
    std::string tensor;
    size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t checked = 0;
    bool pass = false;
    GradCheckWorst worst;
};

/// Central finite differences against the tape gradient for a scalar loss.
/// `f` rebuilds the loss from the (shared) parameter tensors; it is called
/// with a tape once for the analytic pass and tape-free for each probe.
/// Relative error uses max(|analytic|, |fd|, 1e-6) as denominator so that
/// exactly-masked (zero on both sides) coordinates do not divide by zero.
inline GradCheckReport grad_check(const std::function<Tensor(Tape*)>& f,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double eps, double tol) {
    if (!(eps >= 1e-6 && eps <= 1e-3)) {
        throw ConfigError("grad_check: eps must lie in [1e-6, 1e-3]");
    }
    for (const auto& [name, p] : params) {
        Tensor handle = p;
        handle.zero_grad();
    }

    Tape tape;
    Tensor loss = f(&tape);
    if (!std::isfinite(loss.item())) {
        throw EvalError("grad_check: loss is not finite at the given parameters");
    }
    tape.backward(loss);

    GradCheckReport report;
    for (const auto& [name, p] : params) {
        Tensor param = p;
        const std::vector<double> analytic =
            param.has_grad() ? param.grad() : std::vector<double>(param.size(), 0.0);
        for (size_t i = 0; i < param.size(); ++i) {
            const double saved = param.at(i);
            param.at(i) = saved + eps;
            const double up = f(nullptr).item();
            param.at(i) = saved - eps;
            const double down = f(nullptr).item();
            param.at(i) = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw EvalError("grad_check: loss not finite while probing " + name);
            }
            const double fd = (up - down) / (2.0 * eps);
            const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-6});
            const double rel = std::abs(analytic[i] - fd) / denom;
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {name, i, analytic[i], fd, rel};
            }
        }
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace fame
