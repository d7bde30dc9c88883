#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "fea/engine.hpp"

using namespace fea;

namespace {

// Small, fast protocol: 6 classes, base 4, one discovery session of 2.
RunConfig small_config() {
    RunConfig cfg;
    cfg.synth.n_classes = 6;
    cfg.synth.dim = 8;
    cfg.synth.train_per_class = 40;
    cfg.synth.test_per_class = 20;
    cfg.synth.separation = 8.0;
    cfg.synth.seed = 5;
    cfg.protocol.base_classes = 4;
    cfg.protocol.novel_per_session = {2};
    cfg.model.feature_dim = 8;
    cfg.train.seed = 5;
    cfg.train.epochs_base = 15;
    cfg.train.epochs_inc = 30;
    cfg.train.batch_size = 64;
    return cfg;
}

std::string temp_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    return dir.string();
}

} // namespace

TEST_CASE("base session separates well-separated Gaussians", "[engine]") {
    RunConfig cfg = small_config();
    cfg.protocol.novel_per_session = {};
    cfg.protocol.base_classes = 6;
    cfg.model.identity_encoder = true;
    cfg.train.epochs_base = 10;
    Engine engine(cfg);
    RunState st = engine.init_state();
    engine.run_base_session(st);
    CHECK(st.ledger.a[0][0] >= 99.0);
    CHECK(st.ledger.overall[0] >= 99.0);
    CHECK(st.confusions.size() == 1);
}

TEST_CASE("zero base epochs still writes the ledger row", "[engine]") {
    RunConfig cfg = small_config();
    cfg.protocol.novel_per_session = {};
    cfg.protocol.base_classes = 6;
    cfg.train.epochs_base = 0;
    Engine engine(cfg);
    RunState st = engine.init_state();
    const Matrix weights_at_init = st.model.classifier.weights();
    engine.run_base_session(st);
    CHECK(st.model.classifier.weights() == weights_at_init); // untouched by training
    REQUIRE(st.ledger.a.size() == 1);
    CHECK(st.completed_session == 0);
}

TEST_CASE("T = 0 gives a base-only run with a one-row ledger", "[engine]") {
    RunConfig cfg = small_config();
    cfg.protocol.novel_per_session = {};
    cfg.protocol.base_classes = 6;
    Engine engine(cfg);
    RunState st = engine.run_protocol();
    CHECK(st.ledger.a.size() == 1);
    CHECK(st.ledger.permutations.empty());
}

TEST_CASE("incremental session discovers separated novel classes", "[engine][e2e]") {
    Engine engine(small_config());
    RunState st = engine.run_protocol();
    REQUIRE(st.ledger.a.size() == 2);
    INFO("a[1][0]=" << st.ledger.a[1][0] << " a[1][1]=" << st.ledger.a[1][1]);
    CHECK(st.ledger.a[1][1] >= 95.0);                       // post-HA discovery
    CHECK(st.ledger.a[0][0] - st.ledger.a[1][0] <= 5.0);    // base forgetting
    CHECK(st.model.classifier.n_classes() == 6);
    CHECK(st.ledger.permutations.size() == 1);
}

TEST_CASE("warm-up weight is 0 at epoch 0 and omega from the inflection on", "[engine]") {
    RunConfig cfg = small_config();
    Engine engine(cfg);
    RunState st = engine.init_state();
    engine.run_base_session(st);
    st.model.teacher = snapshot_teacher(st.model.encoder);
    st.model.classifier.extend(2, 11);

    Matrix batch(6, 8);
    for (std::size_t i = 0; i < batch.size(); ++i) batch.vec()[i] = 0.1 * (double)(i % 7) + 0.2;
    auto step0 = engine.build_incremental_step(st, batch, 4, 0, 1, 2);
    CHECK(step0->alpha == 0.0);
    CHECK(step0->l_bap == nullptr); // excluded from the graph entirely
    auto step30 = engine.build_incremental_step(st, batch, 4, 30, 1, 2);
    CHECK(step30->alpha == 2.0);
    auto step99 = engine.build_incremental_step(st, batch, 4, 99, 1, 2);
    CHECK(step99->alpha == 2.0);
}

TEST_CASE("disabling CSS and BAP reduces the total to the framework loss", "[engine]") {
    RunConfig cfg = small_config();
    cfg.train.css_weight = 0.0;
    cfg.train.omega = 0.0;
    Engine engine(cfg);
    RunState st = engine.init_state();
    engine.run_base_session(st);
    st.model.teacher = snapshot_teacher(st.model.encoder);
    st.model.classifier.extend(2, 11);

    Matrix batch(6, 8);
    for (std::size_t i = 0; i < batch.size(); ++i) batch.vec()[i] = 0.3 * (double)(i % 5) - 0.4;
    auto step = engine.build_incremental_step(st, batch, 4, 10, 3, 4);
    CHECK(step->l_css == nullptr);
    CHECK(step->l_bap == nullptr);
    CHECK(step->loss->data(0, 0) ==
          Catch::Approx(step->l_old->data(0, 0) + step->l_novel->data(0, 0)).margin(1e-12));
}

TEST_CASE("no gradient reaches the teacher or the stored prototypes", "[engine][contract]") {
    Engine engine(small_config());
    RunState st = engine.init_state();
    engine.run_base_session(st);
    st.model.teacher = snapshot_teacher(st.model.encoder);
    st.model.classifier.extend(2, 11);

    Matrix batch(8, 8);
    for (std::size_t i = 0; i < batch.size(); ++i) batch.vec()[i] = 0.25 * (double)(i % 9) - 0.7;
    auto step = engine.build_incremental_step(st, batch, 4, 35, 7, 8);
    step->graph.backward(step->loss);

    REQUIRE_FALSE(step->teacher_params.empty());
    for (const auto& entry : step->teacher_params) {
        CHECK_FALSE(entry.node->requires_grad);
        for (double g : entry.node->grad.vec()) REQUIRE(g == 0.0);
    }
    REQUIRE(step->pseudo_features != nullptr);
    CHECK_FALSE(step->pseudo_features->requires_grad);
    for (double g : step->pseudo_features->grad.vec()) REQUIRE(g == 0.0);

    // and the student parameters did receive gradient
    double student_grad_mass = 0.0;
    for (const auto& entry : step->trainable)
        for (double g : entry.node->grad.vec()) student_grad_mass += std::abs(g);
    CHECK(student_grad_mass > 0.0);
}

TEST_CASE("classifier row count tracks the class budget", "[engine]") {
    RunConfig cfg = small_config();
    cfg.synth.n_classes = 8;
    cfg.protocol.base_classes = 4;
    cfg.protocol.novel_per_session = {2, 2};
    cfg.train.epochs_inc = 8; // row-count check only, no accuracy claims
    Engine engine(cfg);
    RunState st = engine.init_state();
    engine.run_base_session(st);
    CHECK(st.model.classifier.n_classes() == 4);
    engine.run_incremental_session(st, 1);
    CHECK(st.model.classifier.n_classes() == 6);
    CHECK(st.ledger.a[1].size() == 2);
    engine.run_incremental_session(st, 2);
    CHECK(st.model.classifier.n_classes() == 8);
    CHECK(st.ledger.a[2].size() == 3);
    CHECK_THROWS_AS(engine.run_incremental_session(st, 2), std::logic_error);
}

TEST_CASE("identical seeds give byte-identical metrics documents", "[engine][determinism]") {
    RunConfig cfg = small_config();
    cfg.train.epochs_inc = 10;
    Engine engine(cfg);
    RunState a = engine.run_protocol();
    RunState b = engine.run_protocol();
    CHECK(render_metrics_document(a.ledger, "x") == render_metrics_document(b.ledger, "x"));
    for (std::size_t t = 0; t < a.confusions.size(); ++t)
        CHECK(a.confusions[t] == b.confusions[t]);
}

TEST_CASE("resume from a checkpoint reproduces the straight run", "[engine][resume]") {
    RunConfig cfg = small_config();
    cfg.synth.n_classes = 8;
    cfg.protocol.base_classes = 4;
    cfg.protocol.novel_per_session = {2, 2};
    cfg.train.epochs_inc = 10;
    Engine engine(cfg);

    const std::string full_dir = temp_dir("fea_full_run");
    RunState full = engine.run_protocol(full_dir);

    // abort after session 1: rerun base + session 1 only, checkpointing
    const std::string part_dir = temp_dir("fea_part_run");
    RunState part = engine.init_state();
    engine.run_base_session(part);
    engine.write_checkpoint(part, part_dir);
    engine.run_incremental_session(part, 1);
    engine.write_checkpoint(part, part_dir);

    RunState resumed = engine.resume_protocol(part_dir + "/checkpoint.feac", part_dir);
    CHECK(render_metrics_document(resumed.ledger, "x") ==
          render_metrics_document(full.ledger, "x"));

    // artifacts of both runs match byte for byte
    auto slurp = [](const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
    };
    CHECK(slurp(full_dir + "/metrics.txt") == slurp(part_dir + "/metrics.txt"));
    for (int t = 0; t <= 2; ++t)
        CHECK(slurp(full_dir + "/confusion_s" + std::to_string(t) + ".csv") ==
              slurp(part_dir + "/confusion_s" + std::to_string(t) + ".csv"));
    std::filesystem::remove_all(full_dir);
    std::filesystem::remove_all(part_dir);
}

TEST_CASE("run directory contains exactly the expected artifacts", "[engine][artifacts]") {
    RunConfig cfg = small_config();
    cfg.train.epochs_inc = 5;
    Engine engine(cfg);
    const std::string dir = temp_dir("fea_artifacts");
    engine.run_protocol(dir);
    std::vector<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    CHECK(names == std::vector<std::string>{"checkpoint.feac", "confusion_s0.csv",
                                            "confusion_s1.csv", "manifest.txt", "metrics.txt"});
    std::filesystem::remove_all(dir);
}

TEST_CASE("absurd learning rate aborts with the failing step named", "[engine]") {
    RunConfig cfg = small_config();
    cfg.train.lr_inc = 1e18;
    cfg.train.epochs_inc = 3;
    Engine engine(cfg);
    RunState st = engine.init_state();
    engine.run_base_session(st);
    try {
        engine.run_incremental_session(st, 1);
        SUCCEED("extreme learning rate survived; nothing to assert");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("session 1") != std::string::npos);
        CHECK(msg.find("epoch") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
    }
}

TEST_CASE("frozen encoder layers do not move when the flag is set", "[engine]") {
    RunConfig cfg = small_config();
    cfg.train.freeze_all_but_last = true;
    cfg.train.epochs_inc = 3;
    Engine engine(cfg);
    RunState st = engine.init_state();
    engine.run_base_session(st);
    const Matrix first_layer = st.model.encoder.layers()[0].w;
    engine.run_incremental_session(st, 1);
    CHECK(st.model.encoder.layers()[0].w == first_layer);
    CHECK_FALSE(st.model.encoder.layers()[1].w == Matrix());
}
