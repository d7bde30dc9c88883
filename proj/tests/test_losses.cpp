#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fea/gradsuite.hpp"
#include "fea/losses.hpp"
#include "fea/rng.hpp"
#include "oracles.hpp"

using namespace fea;

namespace {

constexpr double kLn2 = 0.6931471805599453;

Matrix rand_mat(Rng& rng, std::size_t n, std::size_t m, double lo = -2.0, double hi = 2.0) {
    Matrix out(n, m);
    for (double& x : out.vec()) x = lo + (hi - lo) * rng.uniform01();
    return out;
}

Matrix rand_probs(Rng& rng, std::size_t n, std::size_t m) {
    Matrix out = rand_mat(rng, n, m, -3.0, 3.0);
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            out(i, j) = std::exp(out(i, j));
            z += out(i, j);
        }
        for (std::size_t j = 0; j < m; ++j) out(i, j) /= z;
    }
    return out;
}

double scalar(Var v) { return v->data(0, 0); }

} // namespace

TEST_CASE("cross-entropy point values", "[losses]") {
    Graph g;
    SECTION("perfect one-hot prediction is zero") {
        Var t = g.constant({{0, 1, 0}});
        CHECK(scalar(loss_ce(t, t)) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("uniform prediction of a one-hot target is ln 2") {
        CHECK(scalar(loss_ce(g.constant({{1, 0}}), g.constant({{0.5, 0.5}}))) ==
              Catch::Approx(kLn2).margin(1e-12));
    }
    SECTION("soft target hand value") {
        CHECK(scalar(loss_ce(g.constant({{0.3, 0.7}}), g.constant({{0.6, 0.4}}))) ==
              Catch::Approx(0.7946511994417057).margin(1e-9));
    }
    SECTION("length mismatch rejected") {
        CHECK_THROWS_AS(loss_ce(g.constant(Matrix(1, 2)), g.constant(Matrix(1, 3))),
                        std::invalid_argument);
    }
}

TEST_CASE("feature distillation point values", "[losses]") {
    Graph g;
    Rng rng(21);
    Matrix t = rand_mat(rng, 4, 6);
    SECTION("student equal to teacher is zero") {
        CHECK(scalar(loss_fd(g.constant(t), g.constant(t))) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("scale invariance of the normalized form") {
        Matrix doubled = t;
        for (double& v : doubled.vec()) v *= 2.0;
        CHECK(scalar(loss_fd(g.constant(t), g.constant(doubled))) ==
              Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("orthogonal unit rows give 1.0 under the mean convention") {
        CHECK(scalar(loss_fd(g.constant({{1, 0}}), g.constant({{0, 1}}))) ==
              Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("shape mismatch rejected") {
        CHECK_THROWS_AS(loss_fd(g.constant(Matrix(2, 3)), g.constant(Matrix(3, 2))),
                        std::invalid_argument);
    }
}

TEST_CASE("pseudo-rehearsal loss", "[losses]") {
    const std::size_t d = 4;
    // orthogonal prototype directions, zero variance
    PrototypeStore store;
    for (int c = 0; c < 3; ++c) {
        PrototypeEntry e;
        e.class_id = c;
        e.mu = Matrix(1, d, 0.0);
        e.mu(0, static_cast<std::size_t>(c)) = 2.0;
        e.variance = Matrix(1, d, 0.0);
        e.n = 5;
        store.add(std::move(e));
    }
    Matrix w(3, d, 0.0);
    for (std::size_t c = 0; c < 3; ++c) w(c, c) = 1.0; // perfectly separating centroids

    auto eval_at_scale = [&](double scale) {
        Graph g;
        Binder bind(g, false);
        CosineClassifier clf(w, scale);
        return scalar(loss_pr(g, store, clf, bind, 4, 77).value);
    };

    SECTION("strictly decreasing in scale when centroids separate the means") {
        const double at5 = eval_at_scale(5.0), at10 = eval_at_scale(10.0);
        CHECK(at10 < at5);
        // matches the scalar oracle at both scales
        auto [pseudo, row_class] = store.sample_batch(4, 77);
        CHECK(at5 == Catch::Approx(oracle::pr(pseudo, row_class, w, 5.0)).margin(1e-9));
        CHECK(at10 == Catch::Approx(oracle::pr(pseudo, row_class, w, 10.0)).margin(1e-9));
    }

    SECTION("single class, n_p = 1, zero variance degenerates to plain CE") {
        const Matrix mu{{2, 0, 0, 0}};
        PrototypeStore one;
        PrototypeEntry e;
        e.class_id = 0;
        e.mu = mu;
        e.variance = Matrix(1, d, 0.0);
        e.n = 1;
        one.add(std::move(e));
        Graph g;
        Binder bind(g, false);
        CosineClassifier clf(w, 10.0);
        const double pr_value = scalar(loss_pr(g, one, clf, bind, 1, 5).value);
        Var probs = softmax_rows(clf.classify(g.constant(mu), bind));
        const double ce_value = scalar(loss_ce(g.constant({{1, 0, 0}}), probs));
        CHECK(pr_value == Catch::Approx(ce_value).margin(1e-12));
    }

    SECTION("fixed seed gives identical loss") {
        CHECK(eval_at_scale(8.0) == eval_at_scale(8.0));
    }

    SECTION("empty store returns zero with the flag") {
        Graph g;
        Binder bind(g, false);
        CosineClassifier clf(w, 10.0);
        auto pr = loss_pr(g, PrototypeStore(), clf, bind, 4, 1);
        CHECK(pr.empty_store);
        CHECK(scalar(pr.value) == 0.0);
    }
}

TEST_CASE("old-knowledge loss composition", "[losses]") {
    Rng rng(22);
    const std::size_t n = 5, d = 4;
    Matrix teacher = rand_mat(rng, n, d), student = rand_mat(rng, n, d);
    Matrix w = rand_mat(rng, 4, d);
    PrototypeStore store;
    for (int c = 0; c < 2; ++c) {
        PrototypeEntry e;
        e.class_id = c;
        e.mu = rand_mat(rng, 1, d);
        e.variance = rand_mat(rng, 1, d, 0.0, 0.5);
        e.n = 3;
        store.add(std::move(e));
    }

    SECTION("lambda = 0 equals the rehearsal term alone") {
        Graph g;
        Binder bind(g, false);
        CosineClassifier clf(w, 6.0);
        auto old_loss = loss_old(g, g.constant(teacher), g.constant(student), store, clf, bind,
                                 0.0, 3, 55);
        auto pr = loss_pr(g, store, clf, bind, 3, 55);
        CHECK(scalar(old_loss.value) == Catch::Approx(scalar(pr.value)).margin(1e-12));
    }

    SECTION("random case matches the scalar oracle") {
        const double lambda = 0.37;
        Graph g;
        Binder bind(g, false);
        CosineClassifier clf(w, 6.0);
        auto old_loss = loss_old(g, g.constant(teacher), g.constant(student), store, clf, bind,
                                 lambda, 3, 55);
        auto [pseudo, row_class] = store.sample_batch(3, 55);
        const double expected = oracle::old_knowledge(oracle::pr(pseudo, row_class, w, 6.0),
                                                      teacher, student, lambda);
        CHECK(scalar(old_loss.value) == Catch::Approx(expected).margin(1e-9));
    }
}

TEST_CASE("contrastive loss", "[losses]") {
    SECTION("single element with identical views is ln 2") {
        Graph g;
        Var z = g.constant({{0.3, -1.2, 0.9}});
        CHECK(scalar(loss_cl(z, g.constant({{0.3, -1.2, 0.9}}))) ==
              Catch::Approx(kLn2).margin(1e-12));
    }
    SECTION("invariant to positive rescaling of rows") {
        Rng rng(23);
        Matrix a = rand_mat(rng, 4, 6), b = rand_mat(rng, 4, 6);
        Matrix a2 = a, b2 = b;
        for (double& v : a2.vec()) v *= 3.7;
        for (double& v : b2.vec()) v *= 0.04;
        Graph g;
        CHECK(scalar(loss_cl(g.constant(a), g.constant(b))) ==
              Catch::Approx(scalar(loss_cl(g.constant(a2), g.constant(b2)))).margin(1e-9));
    }
    SECTION("|B| = 2 matches the scalar oracle") {
        Rng rng(24);
        Matrix a = rand_mat(rng, 2, 5), b = rand_mat(rng, 2, 5);
        Graph g;
        CHECK(scalar(loss_cl(g.constant(a), g.constant(b))) ==
              Catch::Approx(oracle::cl(a, b)).margin(1e-9));
    }
    SECTION("empty batch rejected") {
        Graph g;
        CHECK_THROWS_AS(loss_cl(g.constant(Matrix(0, 3)), g.constant(Matrix(0, 3))),
                        std::invalid_argument);
    }
}

TEST_CASE("guide-to-novel KL term", "[losses]") {
    SECTION("matching the prior gives zero") {
        Graph g;
        Matrix rows(3, 4, 0.0);
        for (std::size_t i = 0; i < 3; ++i) {
            rows(i, 2) = 0.5;
            rows(i, 3) = 0.5;
        }
        CHECK(scalar(guide_term(g.constant(rows), g.constant(rows), PriorDistribution(2, 2))) ==
              Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("uniform over four classes with two novel is ln 2") {
        Graph g;
        Matrix uniform(2, 4, 0.25);
        CHECK(scalar(guide_term(g.constant(uniform), g.constant(uniform),
                                PriorDistribution(2, 2))) == Catch::Approx(kLn2).margin(1e-12));
    }
    SECTION("non-negative on random batches") {
        Rng rng(25);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t known = rng.below(3), novel = 2 + rng.below(3);
            const std::size_t n = 1 + rng.below(6);
            Graph g;
            Var pa = g.constant(rand_probs(rng, n, known + novel));
            Var pb = g.constant(rand_probs(rng, n, known + novel));
            CHECK(scalar(guide_term(pa, pb, PriorDistribution(known, novel))) >= -1e-12);
        }
    }
    SECTION("prior length mismatch rejected") {
        Graph g;
        CHECK_THROWS_AS(guide_term(g.constant(Matrix(2, 4, 0.25)), g.constant(Matrix(2, 4, 0.25)),
                                   PriorDistribution(2, 3)),
                        std::invalid_argument);
    }
}

TEST_CASE("guide and novel losses", "[losses]") {
    Rng rng(26);
    SECTION("identical sharp predictions with epsilon 0 vanish") {
        Graph g;
        Matrix sharp(3, 4, 1e-9);
        for (std::size_t i = 0; i < 3; ++i) sharp(i, 2 + i % 2) = 1.0 - 3e-9;
        Var p = g.constant(sharp);
        CHECK(scalar(loss_guide(p, p, PriorDistribution(2, 2), 0.0)) ==
              Catch::Approx(0.0).margin(1e-6));
    }
    SECTION("epsilon weights the KL term") {
        Graph g;
        Var pa = g.constant(rand_probs(rng, 4, 5));
        Var pb = g.constant(rand_probs(rng, 4, 5));
        PriorDistribution prior(2, 3);
        const double base = scalar(loss_guide(pa, pb, prior, 0.0));
        const double with_eps = scalar(loss_guide(pa, pb, prior, 0.1));
        const double d_g = scalar(guide_term(pa, pb, prior));
        CHECK(with_eps - base == Catch::Approx(0.1 * d_g).margin(1e-12));
    }
    SECTION("random case matches the scalar oracle") {
        Matrix pa = rand_probs(rng, 5, 6), pb = rand_probs(rng, 5, 6);
        Graph g;
        CHECK(scalar(loss_guide(g.constant(pa), g.constant(pb), PriorDistribution(3, 3), 0.1)) ==
              Catch::Approx(oracle::guide(pa, pb, 3, 3, 0.1)).margin(1e-9));
    }
    SECTION("novel loss is contrastive plus guide") {
        Matrix pa = rand_probs(rng, 4, 5), pb = rand_probs(rng, 4, 5);
        Matrix za = rand_mat(rng, 4, 6), zb = rand_mat(rng, 4, 6);
        Graph g;
        auto parts = loss_guide_novel(g.constant(pa), g.constant(pb), g.constant(za),
                                      g.constant(zb), PriorDistribution(2, 3), 0.1);
        CHECK(scalar(parts.novel) ==
              Catch::Approx(scalar(parts.cl) + scalar(parts.guide)).margin(1e-12));
    }
}

TEST_CASE("centroid-to-samples similarity constraint", "[losses]") {
    Rng rng(27);
    SECTION("single novel class with identical views is ln 2") {
        Graph g;
        Matrix w = rand_mat(rng, 3, 4); // novel range = last row
        Matrix h = rand_mat(rng, 5, 4);
        CHECK(scalar(loss_css(g.constant(w), 2, 3, g.constant(h), g.constant(h))) ==
              Catch::Approx(kLn2).margin(1e-12));
    }
    SECTION("invariant under consistent batch permutation") {
        Matrix w = rand_mat(rng, 4, 5);
        Matrix ha = rand_mat(rng, 6, 5), hb = rand_mat(rng, 6, 5);
        Matrix ha_p(6, 5), hb_p(6, 5);
        const std::size_t perm[6] = {3, 0, 5, 1, 4, 2};
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                ha_p(i, j) = ha(perm[i], j);
                hb_p(i, j) = hb(perm[i], j);
            }
        Graph g;
        CHECK(scalar(loss_css(g.constant(w), 1, 4, g.constant(ha), g.constant(hb))) ==
              Catch::Approx(scalar(loss_css(g.constant(w), 1, 4, g.constant(ha_p),
                                            g.constant(hb_p))))
                  .margin(1e-9));
    }
    SECTION("invariant to positive rescaling of features") {
        Matrix w = rand_mat(rng, 4, 5);
        Matrix ha = rand_mat(rng, 6, 5), hb = rand_mat(rng, 6, 5);
        Matrix ha2 = ha, hb2 = hb;
        for (double& v : ha2.vec()) v *= 11.0;
        for (double& v : hb2.vec()) v *= 0.2;
        Graph g;
        CHECK(scalar(loss_css(g.constant(w), 2, 4, g.constant(ha), g.constant(hb))) ==
              Catch::Approx(scalar(loss_css(g.constant(w), 2, 4, g.constant(ha2),
                                            g.constant(hb2))))
                  .margin(1e-9));
    }
    SECTION("two novel classes match the scalar oracle") {
        Matrix w = rand_mat(rng, 5, 4);
        Matrix ha = rand_mat(rng, 7, 4), hb = rand_mat(rng, 7, 4);
        Graph g;
        CHECK(scalar(loss_css(g.constant(w), 3, 5, g.constant(ha), g.constant(hb))) ==
              Catch::Approx(oracle::css(w, 3, 5, ha, hb)).margin(1e-9));
    }
    SECTION("all-zero batch features rejected") {
        Graph g;
        Matrix w = rand_mat(rng, 2, 3);
        CHECK_THROWS_AS(loss_css(g.constant(w), 0, 2, g.constant(Matrix(4, 3, 0.0)),
                                 g.constant(Matrix(4, 3, 0.0))),
                        std::domain_error);
    }
}

TEST_CASE("boundary-aware prototype constraint", "[losses]") {
    Rng rng(28);
    SECTION("one novel class, no known classes, identical views is ln 2") {
        Graph g;
        Matrix rho = rand_mat(rng, 1, 5);
        ProjectedPrototypeSet pset;
        pset.rho_a = g.constant(rho);
        pset.rho_b = g.constant(rho);
        auto bap = loss_bap(g, pset);
        CHECK_FALSE(bap.skipped);
        CHECK(scalar(bap.value) == Catch::Approx(kLn2).margin(1e-12));
    }
    SECTION("an extra known prototype strictly increases the loss") {
        Graph g;
        Matrix rho_a = rand_mat(rng, 2, 4), rho_b = rand_mat(rng, 2, 4);
        ProjectedPrototypeSet without;
        without.rho_a = g.constant(rho_a);
        without.rho_b = g.constant(rho_b);
        const double base = scalar(loss_bap(g, without).value);
        ProjectedPrototypeSet with;
        with.rho_a = g.constant(rho_a);
        with.rho_b = g.constant(rho_b);
        with.nu_known = g.constant(rand_mat(rng, 1, 4));
        CHECK(scalar(loss_bap(g, with).value) > base);
    }
    SECTION("two novel and two known match the scalar oracle") {
        Matrix rho_a = rand_mat(rng, 2, 5), rho_b = rand_mat(rng, 2, 5);
        Matrix nu = rand_mat(rng, 2, 5);
        Graph g;
        ProjectedPrototypeSet pset;
        pset.rho_a = g.constant(rho_a);
        pset.rho_b = g.constant(rho_b);
        pset.nu_known = g.constant(nu);
        CHECK(scalar(loss_bap(g, pset).value) ==
              Catch::Approx(oracle::bap(rho_a, rho_b, nu)).margin(1e-9));
    }
    SECTION("no novel class present skips with zero") {
        Graph g;
        auto bap = loss_bap(g, ProjectedPrototypeSet{});
        CHECK(bap.skipped);
        CHECK(scalar(bap.value) == 0.0);
    }
    SECTION("invariant to positive rescaling") {
        Matrix rho_a = rand_mat(rng, 3, 4), rho_b = rand_mat(rng, 3, 4);
        Matrix rho_a2 = rho_a, rho_b2 = rho_b;
        for (double& v : rho_a2.vec()) v *= 6.5;
        for (double& v : rho_b2.vec()) v *= 0.01;
        Graph g;
        ProjectedPrototypeSet p1, p2;
        p1.rho_a = g.constant(rho_a);
        p1.rho_b = g.constant(rho_b);
        p2.rho_a = g.constant(rho_a2);
        p2.rho_b = g.constant(rho_b2);
        CHECK(scalar(loss_bap(g, p1).value) ==
              Catch::Approx(scalar(loss_bap(g, p2).value)).margin(1e-9));
    }
}

TEST_CASE("warm-up schedule", "[losses]") {
    CHECK(warmup_alpha(0, 2.0, 30) == 0.0);
    CHECK(warmup_alpha(30, 2.0, 30) == 2.0);
    CHECK(warmup_alpha(60, 2.0, 30) == 2.0);
    CHECK(warmup_alpha(15, 2.0, 30) == Catch::Approx(1.0));
    CHECK_THROWS_AS(warmup_alpha(5, 2.0, 0), std::invalid_argument);
}

TEST_CASE("total loss composition", "[losses]") {
    Graph g;
    SECTION("all zero constituents give zero") {
        TotalLossParts parts;
        parts.old_knowledge = g.scalar(0.0);
        parts.novel = g.scalar(0.0);
        parts.css = g.scalar(0.0);
        parts.bap = g.scalar(0.0);
        parts.alpha = 2.0;
        CHECK(scalar(loss_total(parts).total) == 0.0);
    }
    SECTION("random constituents sum by hand") {
        TotalLossParts parts;
        parts.old_knowledge = g.scalar(0.31);
        parts.novel = g.scalar(1.27);
        parts.css = g.scalar(0.55);
        parts.bap = g.scalar(0.08);
        parts.alpha = 1.5;
        parts.css_weight = 0.7;
        auto total = loss_total(parts);
        CHECK(scalar(total.framework) == Catch::Approx(0.31 + 1.27).margin(1e-12));
        CHECK(scalar(total.total) ==
              Catch::Approx(0.31 + 1.27 + 0.7 * 0.55 + 1.5 * 0.08).margin(1e-12));
    }
    SECTION("alpha = 0 leaves the BAP node out of the graph path") {
        TotalLossParts parts;
        parts.old_knowledge = g.scalar(0.2);
        parts.novel = g.scalar(0.3);
        parts.bap = g.scalar(9.9);
        parts.alpha = 0.0;
        CHECK(scalar(loss_total(parts).total) == Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("non-finite constituent rejected by name") {
        TotalLossParts parts;
        parts.old_knowledge = g.scalar(std::numeric_limits<double>::quiet_NaN());
        parts.novel = g.scalar(0.0);
        CHECK_THROWS_WITH(loss_total(parts), Catch::Matchers::ContainsSubstring("L_old"));
    }
}

TEST_CASE("every loss is non-negative on valid inputs", "[losses]") {
    Rng rng(29);
    for (int trial = 0; trial < 200; ++trial) {
        Graph g;
        const std::size_t n = 1 + rng.below(6), d = 2 + rng.below(6);
        Matrix a = rand_mat(rng, n, d), b = rand_mat(rng, n, d);
        CHECK(scalar(loss_cl(g.constant(a), g.constant(b))) >= 0.0);
        CHECK(scalar(loss_fd(g.constant(a), g.constant(b))) >= 0.0);

        const std::size_t known = rng.below(3), novel = 2 + rng.below(2);
        Matrix pa = rand_probs(rng, n, known + novel), pb = rand_probs(rng, n, known + novel);
        CHECK(scalar(loss_guide(g.constant(pa), g.constant(pb),
                                PriorDistribution(known, novel), 0.1)) >= 0.0);

        Matrix w = rand_mat(rng, known + novel, d);
        CHECK(scalar(loss_css(g.constant(w), known, known + novel, g.constant(a),
                              g.constant(b))) >= 0.0);

        ProjectedPrototypeSet pset;
        pset.rho_a = g.constant(rand_mat(rng, novel, d));
        pset.rho_b = g.constant(rand_mat(rng, novel, d));
        if (known > 0) pset.nu_known = g.constant(rand_mat(rng, known, d));
        CHECK(scalar(loss_bap(g, pset).value) >= 0.0);
    }
}

TEST_CASE("guide term is zero exactly at the prior", "[losses]") {
    Rng rng(30);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t known = 1 + rng.below(3), novel = 2 + rng.below(3);
        Graph g;
        // p-bar uniform over the novel block, zero known mass: D_g == 0
        Matrix at_prior(3, known + novel, 0.0);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = known; j < known + novel; ++j)
                at_prior(i, j) = 1.0 / static_cast<double>(novel);
        CHECK(scalar(guide_term(g.constant(at_prior), g.constant(at_prior),
                                PriorDistribution(known, novel))) ==
              Catch::Approx(0.0).margin(1e-12));
        // any known-index mass forces D_g > 0
        Matrix off(3, known + novel, 0.0);
        for (std::size_t i = 0; i < 3; ++i) {
            off(i, 0) = 0.2;
            for (std::size_t j = known; j < known + novel; ++j)
                off(i, j) = 0.8 / static_cast<double>(novel);
        }
        CHECK(scalar(guide_term(g.constant(off), g.constant(off),
                                PriorDistribution(known, novel))) > 1e-6);
    }
}

TEST_CASE("loss gradients match finite differences on 20 random instances each",
          "[losses][gradsuite]") {
    GradSuiteConfig cfg;
    cfg.instances = 20;
    const auto reports = run_loss_grad_suite(cfg);
    REQUIRE(reports.size() == 10);
    for (const auto& r : reports) {
        CAPTURE(r.op_name, r.max_rel_error, r.max_abs_error, r.note);
        CHECK(r.passed);
    }
}

TEST_CASE("loss values match straight-line scalar oracles on random instances",
          "[losses][oracle]") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(6), d = 2 + rng.below(6);
        const std::size_t known = 1 + rng.below(3), novel = 2 + rng.below(3);
        Graph g;

        Matrix t_probs = rand_probs(rng, 1, d), p_probs = rand_probs(rng, 1, d);
        std::vector<double> tv(t_probs.vec()), pv(p_probs.vec());
        CHECK(scalar(loss_ce(g.constant(t_probs), g.constant(p_probs))) ==
              Catch::Approx(oracle::ce(tv, pv)).margin(1e-9));

        Matrix teacher = rand_mat(rng, n, d), student = rand_mat(rng, n, d);
        CHECK(scalar(loss_fd(g.constant(teacher), g.constant(student))) ==
              Catch::Approx(oracle::fd(teacher, student)).margin(1e-9));

        Matrix za = rand_mat(rng, n, d), zb = rand_mat(rng, n, d);
        CHECK(scalar(loss_cl(g.constant(za), g.constant(zb))) ==
              Catch::Approx(oracle::cl(za, zb)).margin(1e-9));

        Matrix pa = rand_probs(rng, n, known + novel), pb = rand_probs(rng, n, known + novel);
        CHECK(scalar(guide_term(g.constant(pa), g.constant(pb),
                                PriorDistribution(known, novel))) ==
              Catch::Approx(oracle::guide_kl(pa, pb, known, novel)).margin(1e-9));
        CHECK(scalar(loss_guide(g.constant(pa), g.constant(pb), PriorDistribution(known, novel),
                                0.1)) ==
              Catch::Approx(oracle::guide(pa, pb, known, novel, 0.1)).margin(1e-9));

        Matrix w = rand_mat(rng, known + novel, d);
        CHECK(scalar(loss_css(g.constant(w), known, known + novel, g.constant(za),
                              g.constant(zb))) ==
              Catch::Approx(oracle::css(w, known, known + novel, za, zb)).margin(1e-9));

        Matrix rho_a = rand_mat(rng, novel, d), rho_b = rand_mat(rng, novel, d);
        Matrix nu = rand_mat(rng, known, d);
        ProjectedPrototypeSet pset;
        pset.rho_a = g.constant(rho_a);
        pset.rho_b = g.constant(rho_b);
        pset.nu_known = g.constant(nu);
        CHECK(scalar(loss_bap(g, pset).value) ==
              Catch::Approx(oracle::bap(rho_a, rho_b, nu)).margin(1e-9));
    }
}
