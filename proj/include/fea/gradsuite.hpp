// Finite-difference verification of every training loss, on randomized small
// instances. Shared by the gradcheck CLI subcommand and the acceptance suite.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fea/gradcheck.hpp"
#include "fea/losses.hpp"
#include "fea/model.hpp"
#include "fea/protomem.hpp"
#include "fea/rng.hpp"

namespace fea {

struct GradSuiteConfig {
    std::size_t instances = 20;
    double step = 1e-4;
    double rel_tol = 1e-3;
    double abs_floor = 1e-6;
    std::uint64_t seed = 7;
};

namespace gradsuite_detail {

inline Matrix rand_mat(Rng& rng, std::size_t n, std::size_t m, double lo = -2.0,
                       double hi = 2.0) {
    Matrix out(n, m);
    for (double& x : out.vec()) x = lo + (hi - lo) * rng.uniform01();
    return out;
}

inline Matrix rand_probs(Rng& rng, std::size_t n, std::size_t m) {
    Matrix out = rand_mat(rng, n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = out(i, 0);
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, out(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            out(i, j) = std::exp(out(i, j) - mx);
            z += out(i, j);
        }
        for (std::size_t j = 0; j < m; ++j) out(i, j) /= z;
    }
    return out;
}

inline std::size_t rand_in(Rng& rng, std::size_t lo, std::size_t hi) { // inclusive
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline PrototypeStore rand_store(Rng& rng, std::size_t n_classes, std::size_t d) {
    PrototypeStore store;
    for (std::size_t c = 0; c < n_classes; ++c) {
        PrototypeEntry e;
        e.class_id = static_cast<int>(c);
        e.mu = rand_mat(rng, 1, d);
        e.variance = rand_mat(rng, 1, d, 0.0, 1.0);
        e.n = 3;
        store.add(std::move(e));
    }
    return store;
}

struct Instance {
    ScalarBuilder builder;
    Matrix point;
};

using InstanceMaker = Instance (*)(Rng&);

inline Instance make_ce(Rng& rng) {
    const std::size_t m = rand_in(rng, 2, 6);
    Matrix target = rand_probs(rng, 1, m);
    Instance inst;
    inst.point = rand_mat(rng, 1, m);
    inst.builder = [target](Graph& g, Var x) {
        return loss_ce(g.constant(target), softmax_rows(x));
    };
    return inst;
}

inline Instance make_pr(Rng& rng) {
    const std::size_t d = rand_in(rng, 2, 8);
    const std::size_t known = rand_in(rng, 1, 4);
    const std::size_t total = known + rand_in(rng, 1, 2);
    PrototypeStore store = rand_store(rng, known, d);
    const std::uint64_t pseudo_seed = rng.next_u64();
    Instance inst;
    inst.point = rand_mat(rng, total, d);
    inst.builder = [store, pseudo_seed](Graph& g, Var x) {
        CosineClassifier clf(x->data, 5.0);
        Binder bind(g, false);
        bind.alias("classifier.w", x);
        return loss_pr(g, store, clf, bind, 2, pseudo_seed).value;
    };
    return inst;
}

inline Instance make_fd(Rng& rng) {
    const std::size_t n = rand_in(rng, 1, 8), d = rand_in(rng, 2, 16);
    Matrix teacher = rand_mat(rng, n, d);
    Instance inst;
    inst.point = rand_mat(rng, n, d);
    inst.builder = [teacher](Graph& g, Var x) { return loss_fd(g.constant(teacher), x); };
    return inst;
}

inline Instance make_old(Rng& rng) {
    const std::size_t n = rand_in(rng, 1, 6), d = rand_in(rng, 2, 8);
    const std::size_t known = rand_in(rng, 1, 3);
    Matrix teacher = rand_mat(rng, n, d);
    Matrix w = rand_mat(rng, known + 2, d);
    PrototypeStore store = rand_store(rng, known, d);
    const std::uint64_t pseudo_seed = rng.next_u64();
    Instance inst;
    inst.point = rand_mat(rng, n, d);
    inst.builder = [teacher, w, store, pseudo_seed](Graph& g, Var x) {
        CosineClassifier clf(w, 5.0);
        Binder bind(g, false);
        return loss_old(g, g.constant(teacher), x, store, clf, bind, 0.37, 2, pseudo_seed).value;
    };
    return inst;
}

inline Instance make_cl(Rng& rng) {
    const std::size_t n = rand_in(rng, 1, 8), d = rand_in(rng, 2, 16);
    Matrix z_b = rand_mat(rng, n, d);
    Instance inst;
    inst.point = rand_mat(rng, n, d);
    inst.builder = [z_b](Graph& g, Var x) { return loss_cl(x, g.constant(z_b)); };
    return inst;
}

inline Instance make_dg(Rng& rng) {
    const std::size_t known = rand_in(rng, 0, 3), novel = rand_in(rng, 2, 4);
    const std::size_t n = rand_in(rng, 1, 8);
    Matrix p_b = rand_probs(rng, n, known + novel);
    Instance inst;
    inst.point = rand_mat(rng, n, known + novel);
    inst.builder = [p_b, known, novel](Graph& g, Var x) {
        return guide_term(softmax_rows(x), g.constant(p_b), PriorDistribution(known, novel));
    };
    return inst;
}

inline Instance make_guide(Rng& rng) {
    const std::size_t known = rand_in(rng, 1, 3), novel = rand_in(rng, 2, 3);
    const std::size_t n = rand_in(rng, 1, 8);
    Matrix p_b = rand_probs(rng, n, known + novel);
    Instance inst;
    inst.point = rand_mat(rng, n, known + novel);
    inst.builder = [p_b, known, novel](Graph& g, Var x) {
        return loss_guide(softmax_rows(x), g.constant(p_b), PriorDistribution(known, novel), 0.1,
                          false);
    };
    return inst;
}

inline Instance make_css(Rng& rng) {
    const std::size_t n = rand_in(rng, 2, 8), d = rand_in(rng, 2, 8);
    const std::size_t known = rand_in(rng, 0, 2), novel = rand_in(rng, 2, 4);
    Matrix w = rand_mat(rng, known + novel, d);
    Matrix h_b = rand_mat(rng, n, d);
    Instance inst;
    inst.point = rand_mat(rng, n, d);
    inst.builder = [w, h_b, known, novel](Graph& g, Var x) {
        return loss_css(g.constant(w), known, known + novel, x, g.constant(h_b));
    };
    return inst;
}

inline Instance make_bap(Rng& rng) {
    const std::size_t k = rand_in(rng, 1, 4), d = rand_in(rng, 2, 8);
    const std::size_t known = rand_in(rng, 0, 3);
    Matrix rho_b = rand_mat(rng, k, d);
    Matrix nu = known > 0 ? rand_mat(rng, known, d) : Matrix();
    Instance inst;
    inst.point = rand_mat(rng, k, d);
    inst.builder = [rho_b, nu](Graph& g, Var x) {
        ProjectedPrototypeSet pset;
        pset.rho_a = x;
        pset.rho_b = g.constant(rho_b);
        if (!nu.empty()) pset.nu_known = g.constant(nu);
        return loss_bap(g, pset).value;
    };
    return inst;
}

// Full composite loss differentiated through the first student encoder
// weight; everything else is constant.
inline Instance make_fea_total(Rng& rng) {
    const std::size_t d_in = rand_in(rng, 2, 5), d_f = rand_in(rng, 3, 6);
    const std::size_t n = rand_in(rng, 2, 5);
    const std::size_t known = rand_in(rng, 1, 3), novel = rand_in(rng, 2, 3);

    Matrix batch = rand_mat(rng, n, d_in);
    Matrix view_a = rand_mat(rng, n, d_in);
    Matrix view_b = rand_mat(rng, n, d_in);
    Matrix teacher_w = rand_mat(rng, d_in, d_f);
    Matrix teacher_b = rand_mat(rng, 1, d_f, -0.2, 0.2);
    Matrix student_w = rand_mat(rng, d_in, d_f); // shadowed by the alias below
    Matrix student_b = rand_mat(rng, 1, d_f, -0.2, 0.2);
    Matrix clf_w = rand_mat(rng, known + novel, d_f);
    PrototypeStore store = rand_store(rng, known, d_f);
    const std::uint64_t pseudo_seed = rng.next_u64();

    // Two-layer projection heads with constant random parameters.
    const std::size_t hidden = d_f + 2;
    Matrix cl_w1 = rand_mat(rng, d_f, hidden, -0.7, 0.7), cl_b1 = rand_mat(rng, 1, hidden);
    Matrix cl_w2 = rand_mat(rng, hidden, d_f, -0.7, 0.7), cl_b2 = rand_mat(rng, 1, d_f);
    Matrix bp_w1 = rand_mat(rng, d_f, hidden, -0.7, 0.7), bp_b1 = rand_mat(rng, 1, hidden);
    Matrix bp_w2 = rand_mat(rng, hidden, d_f, -0.7, 0.7), bp_b2 = rand_mat(rng, 1, d_f);

    std::vector<int> routing(n);
    for (std::size_t i = 0; i < n; ++i)
        routing[i] = static_cast<int>(rng.below(novel));

    Instance inst;
    inst.point = rand_mat(rng, d_in, d_f);
    inst.builder = [=](Graph& g, Var x) {
        Binder bind(g, false);
        bind.alias("w0", x);
        auto dense = [&bind](Var input, const Matrix& w, const Matrix& b,
                             const std::string& prefix) {
            Var wn = bind(prefix + ".w", const_cast<Matrix&>(w));
            Var bn = bind(prefix + ".b", const_cast<Matrix&>(b));
            return add_rowvec(matmul(input, wn), bn);
        };
        auto head = [&](Var input, const Matrix& w1, const Matrix& b1, const Matrix& w2,
                        const Matrix& b2, const std::string& p) {
            return dense(relu(dense(input, w1, b1, p + "1")), w2, b2, p + "2");
        };
        auto encode = [&](Var input) {
            return add_rowvec(matmul(input, bind("w0", const_cast<Matrix&>(student_w))),
                              bind("b0", const_cast<Matrix&>(student_b)));
        };
        Var h_raw = encode(g.constant(batch));
        Var h_a = encode(g.constant(view_a));
        Var h_b = encode(g.constant(view_b));
        Var t_raw = dense(g.constant(batch), teacher_w, teacher_b, "teacher");

        CosineClassifier clf(clf_w, 5.0);
        auto old_loss =
            loss_old(g, t_raw, h_raw, store, clf, bind, 0.25, 2, pseudo_seed);
        Var p_a = softmax_rows(clf.classify(h_a, bind));
        Var p_b = softmax_rows(clf.classify(h_b, bind));
        Var z_a = head(h_a, cl_w1, cl_b1, cl_w2, cl_b2, "cl");
        Var z_b = head(h_b, cl_w1, cl_b1, cl_w2, cl_b2, "cl");
        PriorDistribution prior(known, novel);
        auto novel_loss = loss_guide_novel(p_a, p_b, z_a, z_b, prior, 0.1);

        Var w_node = bind("classifier.w", const_cast<Matrix&>(clf.weights()));
        Var css = loss_css(w_node, known, known + novel, h_a, h_b);

        GroupMeans gm = group_mean_matrix(routing, static_cast<int>(novel));
        ProjectedPrototypeSet pset;
        pset.rho_a = matmul(g.constant(gm.weights), head(h_a, bp_w1, bp_b1, bp_w2, bp_b2, "bp"));
        pset.rho_b = matmul(g.constant(gm.weights), head(h_b, bp_w1, bp_b1, bp_w2, bp_b2, "bp"));
        pset.nu_known = head(g.constant(store.stacked_means()), bp_w1, bp_b1, bp_w2, bp_b2, "bp");
        BapLoss bap = loss_bap(g, pset);

        TotalLossParts parts;
        parts.old_knowledge = old_loss.value;
        parts.novel = novel_loss.novel;
        parts.css = css;
        parts.bap = bap.value;
        parts.alpha = 0.7;
        parts.css_weight = 1.0;
        return loss_total(parts).total;
    };
    return inst;
}

} // namespace gradsuite_detail

// Runs `instances` randomized checks per loss; one aggregated report each.
inline std::vector<GradCheckReport> run_loss_grad_suite(const GradSuiteConfig& cfg) {
    using namespace gradsuite_detail;
    const std::pair<const char*, InstanceMaker> cases[] = {
        {"L_ce", &make_ce},       {"L_pr", &make_pr},     {"L_fd", &make_fd},
        {"L_old", &make_old},     {"L_cl", &make_cl},     {"D_g", &make_dg},
        {"L_guide", &make_guide}, {"L_CSS", &make_css},   {"L_BAP", &make_bap},
        {"L_FEA", &make_fea_total},
    };
    std::vector<GradCheckReport> reports;
    Rng rng(cfg.seed, 0x62AD5017EULL);
    for (const auto& [name, maker] : cases) {
        GradCheckReport agg;
        agg.op_name = name;
        agg.passed = true;
        for (std::size_t i = 0; i < cfg.instances; ++i) {
            Instance inst = maker(rng);
            GradCheckReport r = finite_diff_check(name, inst.builder, inst.point, cfg.step,
                                                  cfg.rel_tol, cfg.abs_floor);
            agg.max_rel_error = std::max(agg.max_rel_error, r.max_rel_error);
            agg.max_abs_error = std::max(agg.max_abs_error, r.max_abs_error);
            if (!r.passed) {
                agg.passed = false;
                if (agg.note.empty())
                    agg.note = "instance " + std::to_string(i) +
                               (r.note.empty() ? "" : ": " + r.note);
            }
        }
        reports.push_back(std::move(agg));
    }
    return reports;
}

} // namespace fea
