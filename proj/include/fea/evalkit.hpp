// Evaluation machinery: minimum-cost Hungarian assignment with lexicographic
// tie-breaking, per-session permutation fixing for novel clusters, accuracy
// matrix bookkeeping, and the continual metrics derived from it.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fea/matrix.hpp"

namespace fea {

struct Assignment {
    std::vector<int> perm; // perm[row] = assigned column
    double cost = 0.0;
};

namespace detail {

// Classic potentials-and-augmenting-paths solver, O(n^3), square matrices.
// Returns perm[row] = col of a minimum-total-cost perfect assignment.
inline std::vector<int> hungarian_core(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> perm(n, -1);
    for (int j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
    return perm;
}

inline double assignment_total(const Matrix& cost, const std::vector<int>& perm) {
    double total = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) total += cost(i, perm[i]);
    return total;
}

} // namespace detail

// Minimum-total-cost perfect assignment. Among all optimal assignments the
// lexicographically smallest permutation is returned, found by fixing rows
// in order to the smallest column that still admits an optimal completion.
inline Assignment hungarian_assign(const Matrix& cost) {
    if (cost.rows() != cost.cols())
        throw std::invalid_argument("hungarian_assign: non-square matrix " + cost.shape_str());
    const std::size_t n = cost.rows();
    if (n == 0) throw std::invalid_argument("hungarian_assign: empty matrix");
    if (!cost.all_finite())
        throw std::invalid_argument("hungarian_assign: non-finite cost entries");

    const double best = detail::assignment_total(cost, detail::hungarian_core(cost));
    const double tol = 1e-9 * (1.0 + std::abs(best));

    std::vector<int> perm(n, -1);
    std::vector<char> col_used(n, 0);
    double prefix = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<int> free_cols;
        for (std::size_t j = 0; j < n; ++j)
            if (!col_used[j]) free_cols.push_back(static_cast<int>(j));
        bool fixed = false;
        for (int j : free_cols) {
            double completion = 0.0;
            const std::size_t rem = n - i - 1;
            if (rem > 0) {
                Matrix sub(rem, rem);
                std::size_t cj = 0;
                for (int jj : free_cols) {
                    if (jj == j) continue;
                    for (std::size_t ri = 0; ri < rem; ++ri) sub(ri, cj) = cost(i + 1 + ri, jj);
                    ++cj;
                }
                completion = detail::assignment_total(sub, detail::hungarian_core(sub));
            }
            if (prefix + cost(i, j) + completion <= best + tol) {
                perm[i] = j;
                col_used[j] = 1;
                prefix += cost(i, j);
                fixed = true;
                break;
            }
        }
        if (!fixed) throw std::logic_error("hungarian_assign: no optimal completion found");
    }
    const double total = detail::assignment_total(cost, perm);
    return {std::move(perm), total};
}

// Frozen mapping from a session's cluster indices to ground-truth class ids.
struct AssignmentPermutation {
    int session = 0;
    std::size_t block_begin = 0;          // first classifier row of the novel block
    std::vector<int> cluster_to_class;    // relative cluster index -> class id
};

// Builds the |C^t| x |C^t| overlap-count matrix between cluster predictions
// (absolute indices inside the novel block) and ground-truth labels from the
// session's class set, then maximizes matched count via hungarian_assign on
// the negated counts.
inline AssignmentPermutation fix_permutation(const std::vector<int>& preds,
                                             const std::vector<int>& truths, int session,
                                             std::size_t block_begin,
                                             const std::vector<int>& novel_class_ids) {
    if (preds.size() != truths.size())
        throw std::invalid_argument("fix_permutation: preds/truths size mismatch");
    const std::size_t k = novel_class_ids.size();
    if (k == 0) throw std::invalid_argument("fix_permutation: empty novel class set");
    Matrix overlap(k, k, 0.0);
    auto truth_index = [&](int label) {
        for (std::size_t g = 0; g < k; ++g)
            if (novel_class_ids[g] == label) return static_cast<int>(g);
        throw std::invalid_argument("fix_permutation: truth label " + std::to_string(label) +
                                    " not in the session class set");
    };
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int rel = preds[i] - static_cast<int>(block_begin);
        if (rel < 0 || rel >= static_cast<int>(k))
            throw std::invalid_argument("fix_permutation: prediction index " +
                                        std::to_string(preds[i]) +
                                        " outside the novel block");
        overlap(rel, truth_index(truths[i])) += 1.0;
    }
    Matrix negated(k, k);
    for (std::size_t i = 0; i < k * k; ++i) negated.vec()[i] = -overlap.vec()[i];
    Assignment a = hungarian_assign(negated);
    AssignmentPermutation perm;
    perm.session = session;
    perm.block_begin = block_begin;
    perm.cluster_to_class.resize(k);
    for (std::size_t c = 0; c < k; ++c) perm.cluster_to_class[c] = novel_class_ids[a.perm[c]];
    return perm;
}

// Maps absolute classifier-row predictions into ground-truth-aligned class
// ids: base rows map through the base class order, novel blocks through
// their frozen permutations.
class LabelSpace {
public:
    void set_base(const std::vector<int>& base_class_ids) { row_to_class_ = base_class_ids; }

    void append_session(const AssignmentPermutation& perm) {
        if (perm.block_begin != row_to_class_.size())
            throw std::invalid_argument("LabelSpace: permutation block begins at " +
                                        std::to_string(perm.block_begin) + ", expected " +
                                        std::to_string(row_to_class_.size()));
        for (int cls : perm.cluster_to_class) row_to_class_.push_back(cls);
    }

    int map_row(int row) const {
        if (row < 0 || static_cast<std::size_t>(row) >= row_to_class_.size())
            throw std::out_of_range("LabelSpace: row " + std::to_string(row) + " unmapped");
        return row_to_class_[static_cast<std::size_t>(row)];
    }

    std::size_t size() const { return row_to_class_.size(); }
    const std::vector<int>& rows() const { return row_to_class_; }

private:
    std::vector<int> row_to_class_;
};

// Predictions and truths for one class group's test set.
struct GroupEval {
    std::vector<int> truths;    // ground-truth class ids
    std::vector<int> raw_preds; // absolute classifier-row argmax
};

struct SessionEval {
    std::vector<double> acc_per_group; // a_{t,j} percentages, j = 0..t
    double overall = 0.0;              // sample-weighted micro accuracy
    Matrix confusion;                  // class_order x class_order counts
    std::vector<int> class_order;      // ground-truth-aligned axis labels
};

// Standard accuracy per class group after mapping raw predictions through
// the frozen permutations, plus the confusion matrix over all seen classes.
inline SessionEval evaluate_session(const std::vector<GroupEval>& groups, const LabelSpace& space,
                                    const std::vector<int>& class_order) {
    SessionEval out;
    out.class_order = class_order;
    out.confusion = Matrix(class_order.size(), class_order.size(), 0.0);
    auto class_pos = [&](int cls) {
        for (std::size_t p = 0; p < class_order.size(); ++p)
            if (class_order[p] == cls) return p;
        throw std::invalid_argument("evaluate_session: class id " + std::to_string(cls) +
                                    " not in class order");
    };
    std::size_t total = 0, total_correct = 0;
    for (const auto& grp : groups) {
        if (grp.truths.size() != grp.raw_preds.size())
            throw std::invalid_argument("evaluate_session: preds/truths size mismatch");
        std::size_t correct = 0;
        for (std::size_t i = 0; i < grp.truths.size(); ++i) {
            const int mapped = space.map_row(grp.raw_preds[i]);
            if (mapped == grp.truths[i]) ++correct;
            out.confusion(class_pos(grp.truths[i]), class_pos(mapped)) += 1.0;
        }
        out.acc_per_group.push_back(grp.truths.empty()
                                        ? 0.0
                                        : 100.0 * static_cast<double>(correct) /
                                              static_cast<double>(grp.truths.size()));
        total += grp.truths.size();
        total_correct += correct;
    }
    out.overall =
        total == 0 ? 0.0 : 100.0 * static_cast<double>(total_correct) / static_cast<double>(total);
    return out;
}

// Accuracy matrix a_{t,j} (percent) plus everything reported from it.
struct MetricsLedger {
    std::vector<std::vector<double>> a;            // a[t][j], defined for j <= t
    std::vector<double> overall;                   // per-session overall accuracy
    std::vector<AssignmentPermutation> permutations; // sessions 1..T in order

    void append_row(const std::vector<double>& row, double overall_acc) {
        if (row.size() != a.size() + 1)
            throw std::invalid_argument("MetricsLedger: row " + std::to_string(a.size()) +
                                        " must have " + std::to_string(a.size() + 1) +
                                        " entries, got " + std::to_string(row.size()));
        a.push_back(row);
        overall.push_back(overall_acc);
    }
};

// F_t = (1/t) sum_{j=0}^{t-1} (max_{l in [j, t-1]} a_{l,j} - a_{t,j}).
inline double avg_forgetting(const MetricsLedger& ledger, std::size_t t) {
    if (t == 0) throw std::invalid_argument("avg_forgetting: t must be >= 1");
    if (ledger.a.size() <= t) throw std::invalid_argument("avg_forgetting: ledger incomplete");
    double total = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t l = j; l < t; ++l) best = std::max(best, ledger.a[l][j]);
        total += best - ledger.a[t][j];
    }
    return total / static_cast<double>(t);
}

// D_t = (1/t) sum_{j=1}^{t} a_{t,j}.
inline double avg_discovery(const MetricsLedger& ledger, std::size_t t) {
    if (t == 0) throw std::invalid_argument("avg_discovery: t must be >= 1");
    if (ledger.a.size() <= t) throw std::invalid_argument("avg_discovery: ledger incomplete");
    double total = 0.0;
    for (std::size_t j = 1; j <= t; ++j) total += ledger.a[t][j];
    return total / static_cast<double>(t);
}

// Mean of the T+1 per-session overall accuracies.
inline double avg_accuracy(const MetricsLedger& ledger, std::size_t t_final) {
    if (ledger.overall.size() != t_final + 1 || ledger.a.size() != t_final + 1)
        throw std::invalid_argument("avg_accuracy: ledger incomplete for T = " +
                                    std::to_string(t_final));
    double total = 0.0;
    for (std::size_t t = 0; t <= t_final; ++t) total += ledger.overall[t];
    return total / static_cast<double>(t_final + 1);
}

// ---------------------------------------------------------------------------
// Metrics document (stable key schema, deterministic formatting).
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    return buf;
}

} // namespace detail

inline std::string render_metrics_document(const MetricsLedger& ledger,
                                           const std::string& run_id) {
    std::string doc;
    doc += "fea.metrics.v1\n";
    doc += "run_id=" + run_id + "\n";
    const std::size_t sessions = ledger.a.size();
    doc += "sessions=" + std::to_string(sessions) + "\n";
    for (std::size_t t = 0; t < sessions; ++t)
        for (std::size_t j = 0; j <= t; ++j)
            doc += "a[" + std::to_string(t) + "," + std::to_string(j) +
                   "]=" + detail::fmt6(ledger.a[t][j]) + "\n";
    for (std::size_t t = 0; t < sessions; ++t)
        doc += "overall[" + std::to_string(t) + "]=" + detail::fmt6(ledger.overall[t]) + "\n";
    for (std::size_t t = 1; t < sessions; ++t)
        doc += "F[" + std::to_string(t) + "]=" + detail::fmt6(avg_forgetting(ledger, t)) + "\n";
    for (std::size_t t = 1; t < sessions; ++t)
        doc += "D[" + std::to_string(t) + "]=" + detail::fmt6(avg_discovery(ledger, t)) + "\n";
    if (sessions > 0)
        doc += "avg_accuracy=" + detail::fmt6(avg_accuracy(ledger, sessions - 1)) + "\n";
    for (const auto& perm : ledger.permutations) {
        doc += "perm[" + std::to_string(perm.session) + "]=";
        for (std::size_t c = 0; c < perm.cluster_to_class.size(); ++c) {
            if (c) doc += ",";
            doc += std::to_string(perm.block_begin + c) + "->" +
                   std::to_string(perm.cluster_to_class[c]);
        }
        doc += "\n";
    }
    return doc;
}

inline std::string render_confusion_csv(const Matrix& confusion) {
    std::string out;
    for (std::size_t i = 0; i < confusion.rows(); ++i) {
        for (std::size_t j = 0; j < confusion.cols(); ++j) {
            if (j) out += ",";
            out += std::to_string(static_cast<long long>(confusion(i, j)));
        }
        out += "\n";
    }
    return out;
}

} // namespace fea
