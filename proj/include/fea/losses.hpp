// The full training loss stack, expressed as differentiable graph ops:
// cross-entropy, pseudo-rehearsal, feature distillation, old-knowledge,
// self-supervised contrastive, guide-to-novel KL term, centroid-to-samples
// similarity constraint (CSS), boundary-aware prototype constraint (BAP),
// and the warm-up-weighted total.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fea/graph.hpp"
#include "fea/matrix.hpp"
#include "fea/model.hpp"
#include "fea/protomem.hpp"

namespace fea {

// Uniform prior over the current novel block: zero mass on known classes,
// 1/|C^t| on each novel class.
struct PriorDistribution {
    std::size_t n_known = 0;
    std::size_t n_novel = 0;
    std::vector<double> p;

    PriorDistribution(std::size_t known, std::size_t novel) : n_known(known), n_novel(novel) {
        if (novel == 0) throw std::invalid_argument("PriorDistribution: need >= 1 novel class");
        p.assign(known + novel, 0.0);
        for (std::size_t i = known; i < known + novel; ++i)
            p[i] = 1.0 / static_cast<double>(novel);
    }

    Matrix as_row() const {
        Matrix m(1, p.size());
        for (std::size_t i = 0; i < p.size(); ++i) m(0, i) = p[i];
        return m;
    }
};

// -Σ_j target_j log(predicted_j) for a pair of probability row vectors.
inline Var loss_ce(Var target, Var predicted) {
    if (target->rows() != 1 || predicted->rows() != 1 || target->cols() != predicted->cols())
        throw std::invalid_argument("loss_ce: length mismatch (" + target->data.shape_str() +
                                    " vs " + predicted->data.shape_str() + ")");
    return scalar_mul(sum(mul(target, log_clamped(predicted))), -1.0);
}

// Mean over rows of -Σ_j target_ij log(predicted_ij).
inline Var cross_entropy_rows_mean(Var targets, Var predicted) {
    if (!targets->data.same_shape(predicted->data))
        throw std::invalid_argument("cross_entropy: shape mismatch (" +
                                    targets->data.shape_str() + " vs " +
                                    predicted->data.shape_str() + ")");
    const double inv_n = 1.0 / static_cast<double>(targets->rows());
    return scalar_mul(sum(mul(targets, log_clamped(predicted))), -inv_n);
}

// Mean squared distance between row-l2-normalized teacher and student
// features, averaged over rows and dimensions.
inline Var loss_fd(Var teacher_features, Var student_features) {
    if (!teacher_features->data.same_shape(student_features->data))
        throw std::invalid_argument("loss_fd: shape mismatch (" +
                                    teacher_features->data.shape_str() + " vs " +
                                    student_features->data.shape_str() + ")");
    Var diff = sub(l2norm_rows(teacher_features), l2norm_rows(student_features));
    return mean(mul(diff, diff));
}

struct PseudoRehearsalLoss {
    Var value = nullptr;
    Var pseudo_features = nullptr; // the constant leaf holding the sampled rows
    bool empty_store = false;      // base session: no prototypes yet, loss is 0
};

// Pseudo rehearsal: per known class, n_p Gaussian pseudo features classified
// against one-hot targets. Pseudo features enter as constants, so only the
// classifier learns from this term.
inline PseudoRehearsalLoss loss_pr(Graph& g, const PrototypeStore& store,
                                   const CosineClassifier& clf, Binder& bind, std::size_t n_p,
                                   std::uint64_t seed) {
    if (store.empty()) return {g.scalar(0.0), nullptr, true};
    if (n_p == 0) throw std::invalid_argument("loss_pr: n_p must be >= 1");
    auto [pseudo, row_class] = store.sample_batch(n_p, seed);
    Matrix onehot(pseudo.rows(), clf.n_classes(), 0.0);
    for (std::size_t r = 0; r < pseudo.rows(); ++r) {
        if (row_class[r] < 0 || static_cast<std::size_t>(row_class[r]) >= clf.n_classes())
            throw std::out_of_range("loss_pr: stored class id " + std::to_string(row_class[r]) +
                                    " outside classifier range");
        onehot(r, static_cast<std::size_t>(row_class[r])) = 1.0;
    }
    Var h = g.constant(pseudo);
    Var probs = softmax_rows(clf.classify(h, bind));
    return {cross_entropy_rows_mean(g.constant(onehot), probs), h, false};
}

struct OldKnowledgeLoss {
    Var value = nullptr;
    Var rehearsal = nullptr;
    Var distillation = nullptr;    // already includes the lambda weight
    Var pseudo_features = nullptr; // constant leaf from loss_pr, null when empty
    bool empty_store = false;
};

// L_pr plus lambda-weighted feature distillation between the frozen teacher
// and the current encoder on the unlabeled batch.
inline OldKnowledgeLoss loss_old(Graph& g, Var teacher_features, Var student_features,
                                 const PrototypeStore& store, const CosineClassifier& clf,
                                 Binder& bind, double lambda, std::size_t n_p,
                                 std::uint64_t seed) {
    auto pr = loss_pr(g, store, clf, bind, n_p, seed);
    Var fd = scalar_mul(loss_fd(teacher_features, student_features), lambda);
    return {add(pr.value, fd), pr.value, fd, pr.pseudo_features, pr.empty_store};
}

namespace detail {

// Shared contrastive core: anchors A (rows, raw), positives B (same shape,
// raw), optional extra negatives N (raw). Rows are l2-normalized inside.
// Returns mean over rows i of
//   logsumexp_j([A.N^T | A.A^T | A.B^T]) - (A_i . B_i),
// i.e. -log of exp(a_i.b_i) over the summed exponentials.
inline Var info_nce(Var raw_a, Var raw_b, Var raw_negatives, bool exclude_self) {
    if (!raw_a->data.same_shape(raw_b->data))
        throw std::invalid_argument("contrastive loss: view shape mismatch (" +
                                    raw_a->data.shape_str() + " vs " + raw_b->data.shape_str() +
                                    ")");
    if (raw_a->rows() == 0) throw std::invalid_argument("contrastive loss: empty batch");
    Var a = l2norm_rows(raw_a);
    Var b = l2norm_rows(raw_b);
    Var sim_aa = matmul(a, transpose(a));
    if (exclude_self) {
        Matrix mask(sim_aa->rows(), sim_aa->cols(), 0.0);
        for (std::size_t i = 0; i < mask.rows(); ++i) mask(i, i) = -1e30;
        sim_aa = add(sim_aa, raw_a->graph->constant(mask));
    }
    Var blocks = concat_cols(sim_aa, matmul(a, transpose(b)));
    if (raw_negatives != nullptr) {
        if (raw_negatives->cols() != raw_a->cols())
            throw std::invalid_argument("contrastive loss: negative block dimension mismatch");
        blocks = concat_cols(blocks, matmul(a, transpose(l2norm_rows(raw_negatives))));
    }
    return mean(sub(logsumexp_rows(blocks), rowdot(a, b)));
}

} // namespace detail

// Self-supervised contrastive loss over two projected views of a batch.
inline Var loss_cl(Var z_a, Var z_b, bool exclude_self = false) {
    return detail::info_nce(z_a, z_b, nullptr, exclude_self);
}

// Guide-to-novel term: KL(prior || mean predicted distribution), with
// 0 log 0 = 0 on the known block and the denominator clamped at 1e-12.
inline Var guide_term(Var p_a, Var p_b, const PriorDistribution& prior) {
    if (!p_a->data.same_shape(p_b->data))
        throw std::invalid_argument("guide_term: view shape mismatch");
    if (p_a->cols() != prior.p.size())
        throw std::invalid_argument("guide_term: prior has " + std::to_string(prior.p.size()) +
                                    " entries for " + std::to_string(p_a->cols()) + " classes");
    Graph& g = *p_a->graph;
    const double inv = 1.0 / (2.0 * static_cast<double>(p_a->rows()));
    Var p_bar = scalar_mul(add(colsum(p_a), colsum(p_b)), inv);
    // Σ p^r log p^r over the novel block only (the known block is 0 log 0).
    const double self_entropy_term =
        -std::log(static_cast<double>(prior.n_novel)); // n * (1/n) log(1/n)
    Var cross = sum(mul(g.constant(prior.as_row()), log_clamped(p_bar)));
    return sub(g.scalar(self_entropy_term), cross);
}

// View-consistency cross-entropy (p^a in the target slot, no gradient stop)
// plus the epsilon-weighted prior-alignment KL.
inline Var loss_guide(Var p_a, Var p_b, const PriorDistribution& prior, double epsilon,
                      bool symmetrize = false) {
    Var ce = cross_entropy_rows_mean(p_a, p_b);
    if (symmetrize)
        ce = scalar_mul(add(ce, cross_entropy_rows_mean(p_b, p_a)), 0.5);
    return add(ce, scalar_mul(guide_term(p_a, p_b, prior), epsilon));
}

struct GuideNovelLoss {
    Var guide = nullptr;   // CE(p^a, p^b) mean + epsilon * D_g
    Var d_g = nullptr;     // the KL term alone
    Var cl = nullptr;      // contrastive part
    Var novel = nullptr;   // cl + guide
};

// Novel-knowledge loss: the guide term plus the contrastive loss.
inline GuideNovelLoss loss_guide_novel(Var p_a, Var p_b, Var z_a, Var z_b,
                                       const PriorDistribution& prior, double epsilon,
                                       bool symmetrize = false, bool exclude_self = false) {
    GuideNovelLoss out;
    out.d_g = guide_term(p_a, p_b, prior);
    out.guide = loss_guide(p_a, p_b, prior, epsilon, symmetrize);
    out.cl = loss_cl(z_a, z_b, exclude_self);
    out.novel = add(out.cl, out.guide);
    return out;
}

// Centroid-to-samples similarity constraint. For each novel class k, the
// similarity profile s_k^v is the vector of cosine similarities between
// centroid w_k and every sample of view v; profiles of the same class across
// views attract, profiles of different classes repel.
inline Var loss_css(Var classifier_w, std::size_t novel_begin, std::size_t novel_end, Var h_a,
                    Var h_b, bool exclude_self = false) {
    if (novel_begin >= novel_end || novel_end > classifier_w->rows())
        throw std::invalid_argument("loss_css: empty or invalid novel class range");
    if (h_a->rows() == 0) throw std::invalid_argument("loss_css: empty batch");
    Var w_novel = slice_rows(classifier_w, novel_begin, novel_end);
    Var s_a = cosine_similarity(w_novel, h_a); // |C^t| x |B|
    Var s_b = cosine_similarity(w_novel, h_b);
    for (std::size_t k = 0; k < s_a->rows(); ++k) {
        double na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < s_a->cols(); ++i) {
            na += s_a->data(k, i) * s_a->data(k, i);
            nb += s_b->data(k, i) * s_b->data(k, i);
        }
        if (na == 0.0 || nb == 0.0)
            throw std::domain_error("loss_css: zero-norm similarity profile for novel class " +
                                    std::to_string(novel_begin + k));
    }
    return detail::info_nce(s_a, s_b, nullptr, exclude_self);
}

// Projected prototypes feeding the BAP term. rho_* rows exist only for novel
// classes with at least one predicted sample in the batch; nu holds the
// projected known-class prototypes (may be null when no classes are known).
struct ProjectedPrototypeSet {
    Var rho_a = nullptr;
    Var rho_b = nullptr;
    Var nu_known = nullptr;
    std::vector<int> present_classes;
};

struct BapLoss {
    Var value = nullptr;
    bool skipped = false; // no novel class present in the batch
};

// Boundary-aware prototype constraint: novel prototypes agree across views
// while repelling projected known prototypes and each other.
inline BapLoss loss_bap(Graph& g, const ProjectedPrototypeSet& protos) {
    if (protos.rho_a == nullptr || protos.rho_a->rows() == 0) return {g.scalar(0.0), true};
    return {detail::info_nce(protos.rho_a, protos.rho_b, protos.nu_known,
                             /*exclude_self=*/false),
            false};
}

// Warm-up weight for the BAP term: omega * min(tau / e, 1).
inline double warmup_alpha(std::size_t tau, double omega, std::size_t e) {
    if (e == 0) throw std::invalid_argument("warmup_alpha: e must be >= 1");
    const double frac = static_cast<double>(tau) / static_cast<double>(e);
    return omega * (frac < 1.0 ? frac : 1.0);
}

struct TotalLossParts {
    Var old_knowledge = nullptr;
    Var novel = nullptr;
    Var css = nullptr; // may be null when disabled
    Var bap = nullptr; // may be null when disabled
    double alpha = 0.0;
    double css_weight = 1.0;
};

struct TotalLoss {
    Var framework = nullptr;
    Var total = nullptr;
};

inline TotalLoss loss_total(const TotalLossParts& parts) {
    auto check_finite = [](Var v, const char* name) {
        if (v != nullptr && !std::isfinite(v->data(0, 0)))
            throw std::runtime_error(std::string("loss_total: non-finite constituent ") + name);
    };
    check_finite(parts.old_knowledge, "L_old");
    check_finite(parts.novel, "L_novel");
    check_finite(parts.css, "L_css");
    check_finite(parts.bap, "L_bap");
    TotalLoss out;
    out.framework = add(parts.old_knowledge, parts.novel);
    out.total = out.framework;
    if (parts.css != nullptr && parts.css_weight != 0.0)
        out.total = add(out.total, scalar_mul(parts.css, parts.css_weight));
    if (parts.bap != nullptr && parts.alpha != 0.0)
        out.total = add(out.total, scalar_mul(parts.bap, parts.alpha));
    return out;
}

// Row-averaging routing matrix: out[g][i] = 1/n_g when row i belongs to
// present group g (groups without members are dropped). Used to form the
// per-class means behind the BAP prototypes; the routing itself is constant.
struct GroupMeans {
    Matrix weights; // n_present x n_rows
    std::vector<int> present; // group ids, ascending
};

inline GroupMeans group_mean_matrix(const std::vector<int>& group_of_row, int n_groups) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_groups), 0);
    for (int id : group_of_row) {
        if (id < 0 || id >= n_groups)
            throw std::out_of_range("group_mean_matrix: group id " + std::to_string(id) +
                                    " out of range");
        ++counts[static_cast<std::size_t>(id)];
    }
    GroupMeans out;
    for (int gid = 0; gid < n_groups; ++gid)
        if (counts[static_cast<std::size_t>(gid)] > 0) out.present.push_back(gid);
    out.weights = Matrix(out.present.size(), group_of_row.size(), 0.0);
    for (std::size_t r = 0; r < out.present.size(); ++r) {
        const int gid = out.present[r];
        const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(gid)]);
        for (std::size_t i = 0; i < group_of_row.size(); ++i)
            if (group_of_row[i] == gid) out.weights(r, i) = inv;
    }
    return out;
}

} // namespace fea
