// Central finite-difference verification of analytic gradients.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "fea/graph.hpp"
#include "fea/matrix.hpp"

namespace fea {

struct GradCheckReport {
    std::string op_name;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool passed = false;
    std::string note;
};

// Builds a scalar-valued graph from one variable matrix.
using ScalarBuilder = std::function<Var(Graph&, Var)>;

// Compares the analytic gradient of f at `point` against central differences
// (f(x+d) - f(x-d)) / 2d, coordinate by coordinate. Coordinates whose
// absolute error is within abs_floor count as exact; the rest must meet
// rel_tol. f must be deterministic.
inline GradCheckReport finite_diff_check(const std::string& name, const ScalarBuilder& f,
                                         const Matrix& point, double step = 1e-4,
                                         double rel_tol = 1e-3, double abs_floor = 1e-6) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be positive");
    GradCheckReport report;
    report.op_name = name;

    Matrix analytic;
    {
        Graph g;
        Var x = g.param(point);
        Var root = f(g, x);
        if (root->rows() != 1 || root->cols() != 1)
            throw std::invalid_argument("finite_diff_check: builder must return a scalar node");
        g.backward(root);
        analytic = x->grad;
    }

    auto value_at = [&f](const Matrix& p) {
        Graph g;
        Var x = g.param(p);
        return f(g, x)->data(0, 0);
    };

    Matrix probe = point;
    for (std::size_t idx = 0; idx < probe.size(); ++idx) {
        const double saved = probe.vec()[idx];
        probe.vec()[idx] = saved + step;
        const double fp = value_at(probe);
        probe.vec()[idx] = saved - step;
        const double fm = value_at(probe);
        probe.vec()[idx] = saved;

        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            report.passed = false;
            report.note = "non-finite value while probing coordinate " + std::to_string(idx);
            report.max_rel_error = std::numeric_limits<double>::infinity();
            report.max_abs_error = std::numeric_limits<double>::infinity();
            return report;
        }

        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic.vec()[idx];
        const double abs_err = std::abs(a - numeric);
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        if (abs_err > abs_floor) {
            const double rel = abs_err / std::max(std::abs(a), std::abs(numeric));
            report.max_rel_error = std::max(report.max_rel_error, rel);
        }
    }
    report.passed = report.max_rel_error <= rel_tol || report.max_abs_error <= abs_floor;
    return report;
}

} // namespace fea
