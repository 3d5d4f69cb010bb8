#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "seg/tape.hpp"

namespace seg {

struct NamedMatrix {
    std::string name;
    Matrix value;
};

struct GradCheckReport {
    struct ParamResult {
        std::string name;
        double max_rel_error = 0.0;
        std::size_t worst_index = 0;
        std::size_t checked = 0;
        std::size_t excluded_at_kink = 0;
    };

    std::vector<ParamResult> params;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t excluded_at_kink = 0;
    bool non_finite = false;
    std::string failure;  // which parameter/direction produced a non-finite value
    double tolerance = 0.0;

    bool passed() const { return !non_finite && max_rel_error <= tolerance; }
};

// Builds a scalar on the given tape from leaves holding the parameter values.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Relative error with a small absolute floor so that coordinates whose true
// derivative is zero are judged on absolute agreement.
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-6) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

// Compares tape gradients with central finite differences for every
// coordinate of every parameter. A coordinate whose perturbation changes the
// side of any ReLU/LeakyReLU/abs kink is excluded rather than failed.
inline GradCheckReport check_gradients(const ScalarFn& f, std::vector<NamedMatrix> params, double step, double tol,
                                       double floor = 1e-6) {
    if (!(step >= 1e-7 && step <= 1e-3)) throw std::invalid_argument("check_gradients: step must be in [1e-7, 1e-3]");

    auto evaluate = [&](std::vector<NamedMatrix>& ps, bool want_grad, std::vector<Matrix>* grads,
                        std::uint64_t* kink) -> double {
        Tape tape;
        tape.track_kinks(true);
        std::vector<Var> leaves;
        leaves.reserve(ps.size());
        for (auto& p : ps) leaves.push_back(tape.param(p.value, p.name));
        Var out = f(tape, leaves);
        if (out.value().rows() != 1 || out.value().cols() != 1)
            throw DimensionError("check_gradients: function must return a scalar, got " + out.value().shape());
        if (kink) *kink = tape.kink_signature();
        if (want_grad) {
            tape.backward(out);
            grads->clear();
            for (const Var& l : leaves) grads->push_back(l.grad());
        }
        return out.value()[0];
    };

    GradCheckReport report;
    report.tolerance = tol;
    std::vector<Matrix> analytic;
    std::uint64_t base_sig = 0;
    const double f0 = evaluate(params, true, &analytic, &base_sig);
    if (!std::isfinite(f0)) {
        report.non_finite = true;
        report.failure = "non-finite value at the unperturbed point";
        return report;
    }

    for (std::size_t p = 0; p < params.size(); ++p) {
        GradCheckReport::ParamResult pr;
        pr.name = params[p].name;
        for (std::size_t i = 0; i < params[p].value.size(); ++i) {
            const double orig = params[p].value[i];
            std::uint64_t sig_plus = 0, sig_minus = 0;
            params[p].value[i] = orig + step;
            const double fp = evaluate(params, false, nullptr, &sig_plus);
            params[p].value[i] = orig - step;
            const double fm = evaluate(params, false, nullptr, &sig_minus);
            params[p].value[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                report.non_finite = true;
                report.failure = "non-finite value perturbing " + pr.name + "[" + std::to_string(i) + "] " +
                                 (std::isfinite(fp) ? "downward" : "upward");
                report.params.push_back(pr);
                return report;
            }
            if (sig_plus != base_sig || sig_minus != base_sig) {
                ++pr.excluded_at_kink;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * step);
            const double err = grad_rel_error(analytic[p][i], numeric, floor);
            ++pr.checked;
            if (err > pr.max_rel_error) {
                pr.max_rel_error = err;
                pr.worst_index = i;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, pr.max_rel_error);
        report.checked += pr.checked;
        report.excluded_at_kink += pr.excluded_at_kink;
        report.params.push_back(pr);
    }
    return report;
}

}  // namespace seg
