// Session orchestration: supervised base session, unsupervised incremental
// discovery sessions, SGD with cosine-annealed learning rate, prototype
// harvesting, permutation fixing, ledger updates, and run artifacts
// (metrics document, confusion matrices, checkpoints, manifest).
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fea/checkpoint.hpp"
#include "fea/config.hpp"
#include "fea/dataio.hpp"
#include "fea/evalkit.hpp"
#include "fea/graph.hpp"
#include "fea/losses.hpp"
#include "fea/matrix.hpp"
#include "fea/model.hpp"
#include "fea/protomem.hpp"
#include "fea/rng.hpp"

namespace fea {

constexpr const char* kToolVersion = "0.1.0";

// Training produced a non-finite loss; carries the session/epoch/batch index.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FEA_LOG=quiet|info|debug (default quiet).
inline int log_level() {
    static const int level = [] {
        const char* env = std::getenv("FEA_LOG");
        if (env == nullptr) return 0;
        const std::string v(env);
        if (v == "debug") return 2;
        if (v == "info") return 1;
        return 0;
    }();
    return level;
}

inline double cosine_lr(double lr0, std::size_t epoch, std::size_t total_epochs) {
    if (total_epochs == 0) return lr0;
    const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// Plain SGD with momentum; velocities keyed by parameter name.
class SgdOptimizer {
public:
    explicit SgdOptimizer(double momentum) : momentum_(momentum) {}

    void step(const std::vector<Binder::Entry>& entries, double lr,
              const std::set<std::string>* frozen = nullptr) {
        for (const auto& entry : entries) {
            if (!entry.node->requires_grad) continue;
            if (frozen != nullptr && frozen->count(entry.name)) continue;
            Matrix& vel = velocity_.try_emplace(entry.name, entry.value->rows(),
                                                entry.value->cols(), 0.0)
                              .first->second;
            for (std::size_t i = 0; i < entry.value->size(); ++i) {
                vel.vec()[i] = momentum_ * vel.vec()[i] + entry.node->grad.vec()[i];
                entry.value->vec()[i] -= lr * vel.vec()[i];
            }
        }
    }

private:
    double momentum_;
    std::map<std::string, Matrix> velocity_;
};

struct RunState {
    int completed_session = -1; // -1 = nothing yet, 0 = base done, ...
    ModelState model;
    PrototypeStore prototypes;
    MetricsLedger ledger;
    LabelSpace labels;
    std::vector<Matrix> confusions; // one per evaluated session
    Rng rng_data{0}, rng_init{0}, rng_noise{0};
};

// One incremental mini-batch step, fully built: graph, loss, and the node
// handles needed by the optimizer and by the gradient-flow contract checks.
struct IncrementalStep {
    Graph graph;
    std::vector<Binder::Entry> trainable;
    std::vector<Binder::Entry> teacher_params; // bound as constants
    Var pseudo_features = nullptr;             // constant leaf, null if store empty
    Var loss = nullptr;
    Var l_old = nullptr, l_novel = nullptr, l_css = nullptr, l_bap = nullptr;
    double alpha = 0.0;
};

class Engine {
public:
    explicit Engine(RunConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.data_source == "synthetic") {
            SyntheticSpec spec = cfg_.synth;
            if (spec.n_classes < cfg_.protocol.total_classes())
                throw DataError("engine: protocol needs " +
                                std::to_string(cfg_.protocol.total_classes()) +
                                " classes, synthetic spec provides " +
                                std::to_string(spec.n_classes));
            SyntheticDataset data = generate_synthetic(spec);
            split_ = split_protocol(data.train, data.test, cfg_.protocol, cfg_.train.seed,
                                    cfg_.protocol_shuffle);
        } else {
            EmbeddingDataset train = load_embeddings(cfg_.train_path);
            EmbeddingDataset test = load_embeddings(cfg_.test_path);
            split_ = split_protocol(train, test, cfg_.protocol, cfg_.train.seed,
                                    cfg_.protocol_shuffle);
        }
        input_dim_ = split_.base_train.dim();

        class_order_ = split_.base_class_ids;
        for (const auto& session : split_.sessions)
            class_order_.insert(class_order_.end(), session.class_ids.begin(),
                                session.class_ids.end());
    }

    const RunConfig& config() const { return cfg_; }
    const ProtocolSplit& split() const { return split_; }

    RunState init_state() const {
        RunState st;
        st.rng_data = Rng(cfg_.train.seed, 1);
        st.rng_init = Rng(cfg_.train.seed, 2);
        st.rng_noise = Rng(cfg_.train.seed, 3);
        st.model.encoder = make_encoder(st.rng_init);
        st.model.classifier =
            CosineClassifier::init(split_.base_class_ids.size(), feature_dim(),
                                   cfg_.model.cosine_scale, st.rng_init.next_u64());
        st.model.contrastive_head = make_head(ProjectionHead::Purpose::contrastive, st.rng_init);
        st.model.bap_head = make_head(ProjectionHead::Purpose::bap, st.rng_init);
        st.labels.set_base(split_.base_class_ids);
        return st;
    }

    std::size_t feature_dim() const {
        return cfg_.model.identity_encoder ? input_dim_ : cfg_.model.feature_dim;
    }

    // ------------------------------------------------------------------
    // Base session: supervised cross-entropy on C^0.
    // ------------------------------------------------------------------
    void run_base_session(RunState& st) const {
        if (st.completed_session != -1)
            throw std::logic_error("run_base_session: base session already completed");
        const EmbeddingDataset& train = split_.base_train;
        for (int label : *train.labels)
            if (class_row(label) < 0 ||
                static_cast<std::size_t>(class_row(label)) >= split_.base_class_ids.size())
                throw std::invalid_argument("run_base_session: label " + std::to_string(label) +
                                            " outside the base class set");

        SgdOptimizer opt(cfg_.train.momentum);
        std::vector<std::size_t> order(train.n());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        for (std::size_t epoch = 0; epoch < cfg_.train.epochs_base; ++epoch) {
            const double lr = cosine_lr(cfg_.train.lr_base, epoch, cfg_.train.epochs_base);
            st.rng_data.shuffle(order.begin(), order.end());
            for (std::size_t start = 0; start < order.size(); start += cfg_.train.batch_size) {
                const std::size_t count =
                    std::min(cfg_.train.batch_size, order.size() - start);
                Matrix batch(count, train.dim());
                Matrix onehot(count, split_.base_class_ids.size(), 0.0);
                for (std::size_t r = 0; r < count; ++r) {
                    const std::size_t src = order[start + r];
                    for (std::size_t j = 0; j < train.dim(); ++j)
                        batch(r, j) = train.features(src, j);
                    onehot(r, static_cast<std::size_t>(class_row((*train.labels)[src]))) = 1.0;
                }
                Graph g;
                Binder bind(g, true);
                Var h = st.model.encoder.forward(g.constant(batch), bind);
                Var probs = softmax_rows(st.model.classifier.classify(h, bind));
                Var loss = cross_entropy_rows_mean(g.constant(onehot), probs);
                if (!std::isfinite(loss->data(0, 0)))
                    throw NumericError("base session: non-finite loss at epoch " +
                                       std::to_string(epoch) + " batch " +
                                       std::to_string(start / cfg_.train.batch_size));
                g.backward(loss);
                opt.step(bind.entries(), lr);
            }
            if (log_level() >= 2)
                std::cerr << "[fea] base epoch " << epoch << " done\n";
        }

        // Ground-truth prototypes for C^0.
        Matrix feats = st.model.encoder.forward_eager(train.features);
        auto protos = compute_prototypes(feats, *train.labels, split_.base_class_ids,
                                         PrototypeEntry::Source::ground_truth);
        report_empty(protos.empty_classes, 0);
        st.prototypes.add_all(std::move(protos.entries));

        evaluate_and_append(st, 0);
        st.completed_session = 0;
        if (log_level() >= 1)
            std::cerr << "[fea] base session done, overall " << st.ledger.overall[0] << "%\n";
    }

    // ------------------------------------------------------------------
    // Incremental discovery session t (1-based).
    // ------------------------------------------------------------------
    void run_incremental_session(RunState& st, std::size_t t) const {
        if (st.completed_session != static_cast<int>(t) - 1)
            throw std::logic_error("run_incremental_session: session " + std::to_string(t) +
                                   " requires completed session " + std::to_string(t - 1));
        if (t == 0 || t > split_.sessions.size())
            throw std::out_of_range("run_incremental_session: no session " + std::to_string(t));
        const SessionSplit& session = split_.sessions[t - 1];
        const std::size_t k = session.class_ids.size();
        const std::size_t n_known = st.model.classifier.n_classes();

        st.model.teacher = snapshot_teacher(st.model.encoder);
        st.model.contrastive_head = make_head(ProjectionHead::Purpose::contrastive, st.rng_init);
        st.model.bap_head = make_head(ProjectionHead::Purpose::bap, st.rng_init);
        st.model.classifier.extend(static_cast<int>(k), st.rng_init.next_u64());

        const std::set<std::string> frozen_names = frozen_parameter_names(st);
        SgdOptimizer opt(cfg_.train.momentum);
        std::vector<std::size_t> order(session.train.n());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        for (std::size_t epoch = 0; epoch < cfg_.train.epochs_inc; ++epoch) {
            const double lr = cosine_lr(cfg_.train.lr_inc, epoch, cfg_.train.epochs_inc);
            st.rng_data.shuffle(order.begin(), order.end());
            for (std::size_t start = 0; start < order.size(); start += cfg_.train.batch_size) {
                const std::size_t count =
                    std::min(cfg_.train.batch_size, order.size() - start);
                Matrix batch(count, session.train.dim());
                for (std::size_t r = 0; r < count; ++r)
                    for (std::size_t j = 0; j < session.train.dim(); ++j)
                        batch(r, j) = session.train.features(order[start + r], j);

                const std::uint64_t aug_seed = st.rng_noise.next_u64();
                const std::uint64_t pseudo_seed = st.rng_noise.next_u64();
                std::unique_ptr<IncrementalStep> step;
                try {
                    step = build_incremental_step(st, batch, n_known, epoch, aug_seed,
                                                  pseudo_seed);
                    if (!std::isfinite(step->loss->data(0, 0)))
                        throw std::runtime_error("non-finite total loss");
                    step->graph.backward(step->loss);
                } catch (const std::runtime_error& e) {
                    throw NumericError("session " + std::to_string(t) + " epoch " +
                                       std::to_string(epoch) + " batch " +
                                       std::to_string(start / cfg_.train.batch_size) + ": " +
                                       e.what());
                }
                opt.step(step->trainable, lr, frozen_names.empty() ? nullptr : &frozen_names);
            }
            if (log_level() >= 2)
                std::cerr << "[fea] session " << t << " epoch " << epoch << " done\n";
        }

        // Fix the permutation on the held-out test split.
        Matrix test_feats = st.model.encoder.forward_eager(session.test.features);
        Matrix test_logits = st.model.classifier.classify_eager(test_feats);
        std::vector<int> test_preds = block_argmax(test_logits, n_known, n_known + k);
        AssignmentPermutation perm = fix_permutation(test_preds, *session.test.labels,
                                                     static_cast<int>(t), n_known,
                                                     session.class_ids);
        st.labels.append_session(perm);
        st.ledger.permutations.push_back(perm);

        // Predicted-label prototypes for the new classes (write-once).
        Matrix train_feats = st.model.encoder.forward_eager(session.train.features);
        Matrix train_logits = st.model.classifier.classify_eager(train_feats);
        std::vector<int> train_preds = block_argmax(train_logits, n_known, n_known + k);
        std::vector<int> mapped(train_preds.size());
        for (std::size_t i = 0; i < train_preds.size(); ++i)
            mapped[i] = perm.cluster_to_class[static_cast<std::size_t>(train_preds[i]) - n_known];
        auto protos = compute_prototypes(train_feats, mapped, session.class_ids,
                                         PrototypeEntry::Source::predicted);
        report_empty(protos.empty_classes, t);
        st.prototypes.add_all(std::move(protos.entries));

        evaluate_and_append(st, t);
        st.completed_session = static_cast<int>(t);
        if (log_level() >= 1)
            std::cerr << "[fea] session " << t << " done, overall "
                      << st.ledger.overall[t] << "%\n";
    }

    // Builds one incremental training step. Exposed so tests can inspect the
    // graph (gradient-flow contract, loss composition).
    std::unique_ptr<IncrementalStep> build_incremental_step(RunState& st, const Matrix& batch,
                                                            std::size_t n_known,
                                                            std::size_t epoch,
                                                            std::uint64_t aug_seed,
                                                            std::uint64_t pseudo_seed) const {
        if (!st.model.teacher)
            throw std::logic_error("build_incremental_step: missing teacher snapshot");
        const std::size_t n_total = st.model.classifier.n_classes();
        const std::size_t k = n_total - n_known;

        auto step = std::make_unique<IncrementalStep>();
        Graph& g = step->graph;
        Binder bind(g, true);
        Binder frozen(g, false);

        auto [view_a, view_b] =
            augment_two_views(batch, cfg_.aug.noise_std, cfg_.aug.mask_rate, aug_seed);
        Var x_raw = g.constant(batch);
        Var h_raw = st.model.encoder.forward(x_raw, bind);
        Var h_a = st.model.encoder.forward(g.constant(view_a), bind);
        Var h_b = st.model.encoder.forward(g.constant(view_b), bind);
        Var teacher_feats = st.model.teacher->encoder.forward(x_raw, frozen, "teacher");

        auto old_loss = loss_old(g, teacher_feats, h_raw, st.prototypes, st.model.classifier,
                                 bind, cfg_.train.lambda, cfg_.train.n_p, pseudo_seed);

        Var p_a = softmax_rows(st.model.classifier.classify(h_a, bind));
        Var p_b = softmax_rows(st.model.classifier.classify(h_b, bind));
        Var z_a = st.model.contrastive_head.forward(h_a, bind, "head.cl");
        Var z_b = st.model.contrastive_head.forward(h_b, bind, "head.cl");
        PriorDistribution prior(n_known, k);
        auto novel = loss_guide_novel(p_a, p_b, z_a, z_b, prior, cfg_.train.epsilon,
                                      cfg_.flags.symmetrize_view_ce,
                                      cfg_.flags.exclude_self_pairs);

        Var css = nullptr;
        if (cfg_.train.css_weight != 0.0) {
            Var w = bind("classifier.w", st.model.classifier.weights());
            css = loss_css(w, n_known, n_total, h_a, h_b, cfg_.flags.exclude_self_pairs);
        }

        step->alpha = warmup_alpha(epoch, cfg_.train.omega, cfg_.train.warmup_e);
        BapLoss bap{nullptr, true};
        if (step->alpha != 0.0) {
            std::vector<int> preds = block_argmax(st.model.classifier.classify_eager(
                                                      h_raw->data),
                                                  n_known, n_total);
            for (int& p : preds) p -= static_cast<int>(n_known);
            GroupMeans gm = group_mean_matrix(preds, static_cast<int>(k));
            Var proj_a = st.model.bap_head.forward(h_a, bind, "head.bap");
            Var proj_b = st.model.bap_head.forward(h_b, bind, "head.bap");
            ProjectedPrototypeSet pset;
            pset.rho_a = matmul(g.constant(gm.weights), proj_a);
            pset.rho_b = matmul(g.constant(gm.weights), proj_b);
            pset.present_classes = gm.present;
            if (!st.prototypes.empty()) {
                Var mu = g.constant(st.prototypes.stacked_means());
                pset.nu_known = st.model.bap_head.forward(mu, bind, "head.bap");
            }
            bap = loss_bap(g, pset);
        }

        TotalLossParts parts;
        parts.old_knowledge = old_loss.value;
        parts.novel = novel.novel;
        parts.css = css;
        parts.bap = bap.value;
        parts.alpha = step->alpha;
        parts.css_weight = cfg_.train.css_weight;
        TotalLoss total = loss_total(parts);

        step->loss = total.total;
        step->l_old = old_loss.value;
        step->l_novel = novel.novel;
        step->l_css = css;
        step->l_bap = bap.value;
        step->pseudo_features = old_loss.pseudo_features;
        step->trainable = bind.entries();
        step->teacher_params = frozen.entries();
        return step;
    }

    // ------------------------------------------------------------------
    // Full protocol runs.
    // ------------------------------------------------------------------
    RunState run_protocol(const std::string& out_dir = "") const {
        const auto t0 = std::chrono::steady_clock::now();
        RunState st = init_state();
        run_base_session(st);
        if (!out_dir.empty()) write_checkpoint(st, out_dir);
        for (std::size_t t = 1; t <= split_.sessions.size(); ++t) {
            run_incremental_session(st, t);
            if (!out_dir.empty()) write_checkpoint(st, out_dir);
        }
        if (!out_dir.empty()) write_artifacts(st, out_dir, seconds_since(t0));
        return st;
    }

    RunState resume_protocol(const std::string& checkpoint_path,
                             const std::string& out_dir = "") const {
        const auto t0 = std::chrono::steady_clock::now();
        RunState st = load_checkpoint(checkpoint_path);
        for (std::size_t t = static_cast<std::size_t>(st.completed_session) + 1;
             t <= split_.sessions.size(); ++t) {
            run_incremental_session(st, t);
            if (!out_dir.empty()) write_checkpoint(st, out_dir);
        }
        if (!out_dir.empty()) write_artifacts(st, out_dir, seconds_since(t0));
        return st;
    }

    // ------------------------------------------------------------------
    // Checkpointing & artifacts.
    // ------------------------------------------------------------------
    void write_checkpoint(const RunState& st, const std::string& out_dir) const {
        BlockMap blocks;
        st.model.save(blocks);
        st.prototypes.save(blocks);
        blocks["run.session"] = Matrix(1, 1, static_cast<double>(st.completed_session));
        blocks["run.rng.data"] = rng_block(st.rng_data);
        blocks["run.rng.init"] = rng_block(st.rng_init);
        blocks["run.rng.noise"] = rng_block(st.rng_noise);
        for (std::size_t t = 0; t < st.ledger.a.size(); ++t) {
            Matrix row(1, st.ledger.a[t].size());
            for (std::size_t j = 0; j < st.ledger.a[t].size(); ++j) row(0, j) = st.ledger.a[t][j];
            blocks["run.ledger.row." + std::to_string(t)] = row;
        }
        Matrix overall(1, st.ledger.overall.size());
        for (std::size_t t = 0; t < st.ledger.overall.size(); ++t)
            overall(0, t) = st.ledger.overall[t];
        blocks["run.ledger.overall"] = overall;
        for (const auto& perm : st.ledger.permutations) {
            Matrix ids(1, perm.cluster_to_class.size());
            for (std::size_t c = 0; c < perm.cluster_to_class.size(); ++c)
                ids(0, c) = perm.cluster_to_class[c];
            blocks["run.perm." + std::to_string(perm.session)] = ids;
        }
        for (std::size_t t = 0; t < st.confusions.size(); ++t)
            blocks["run.confusion." + std::to_string(t)] = st.confusions[t];
        std::filesystem::create_directories(out_dir);
        feac_write(out_dir + "/checkpoint.feac", blocks);
    }

    RunState load_checkpoint(const std::string& path) const {
        BlockMap blocks = feac_read(path);
        RunState st;
        st.model = ModelState::load(blocks);
        st.prototypes = PrototypeStore::load(blocks);
        st.completed_session = static_cast<int>(feac_get(blocks, "run.session")(0, 0));
        st.rng_data = rng_from_block(feac_get(blocks, "run.rng.data"));
        st.rng_init = rng_from_block(feac_get(blocks, "run.rng.init"));
        st.rng_noise = rng_from_block(feac_get(blocks, "run.rng.noise"));
        const Matrix& overall = feac_get(blocks, "run.ledger.overall");
        for (std::size_t t = 0; t <= static_cast<std::size_t>(st.completed_session); ++t) {
            const Matrix& row = feac_get(blocks, "run.ledger.row." + std::to_string(t));
            std::vector<double> r(row.cols());
            for (std::size_t j = 0; j < row.cols(); ++j) r[j] = row(0, j);
            st.ledger.append_row(r, overall(0, t));
            st.confusions.push_back(feac_get(blocks, "run.confusion." + std::to_string(t)));
        }
        st.labels.set_base(split_.base_class_ids);
        std::size_t block_begin = split_.base_class_ids.size();
        for (std::size_t t = 1; t <= static_cast<std::size_t>(st.completed_session); ++t) {
            const Matrix& ids = feac_get(blocks, "run.perm." + std::to_string(t));
            AssignmentPermutation perm;
            perm.session = static_cast<int>(t);
            perm.block_begin = block_begin;
            for (std::size_t c = 0; c < ids.cols(); ++c)
                perm.cluster_to_class.push_back(static_cast<int>(ids(0, c)));
            block_begin += ids.cols();
            st.labels.append_session(perm);
            st.ledger.permutations.push_back(perm);
        }
        return st;
    }

    void write_artifacts(const RunState& st, const std::string& out_dir,
                         double wall_seconds) const {
        std::filesystem::create_directories(out_dir);
        const std::string run_id = run_id_for(cfg_);
        write_text(out_dir + "/metrics.txt", render_metrics_document(st.ledger, run_id));
        for (std::size_t t = 0; t < st.confusions.size(); ++t)
            write_text(out_dir + "/confusion_s" + std::to_string(t) + ".csv",
                       render_confusion_csv(st.confusions[t]));
        std::string manifest;
        manifest += "fea.manifest.v1\n";
        manifest += "run_id=" + run_id + "\n";
        manifest += "tool_version=" + std::string(kToolVersion) + "\n";
        manifest += "out_dir=" + out_dir + "\n";
        manifest += "wall_clock_seconds=" + detail::fmt6(wall_seconds) + "\n";
        for (const std::string& line : split_config_lines())
            manifest += "config." + line + "\n";
        write_text(out_dir + "/manifest.txt", manifest);
    }

private:
    Encoder make_encoder(Rng& rng) const {
        if (cfg_.model.identity_encoder) return Encoder::identity(input_dim_);
        const std::size_t hidden =
            cfg_.model.hidden_dim ? cfg_.model.hidden_dim : 2 * cfg_.model.feature_dim;
        return Encoder::mlp({input_dim_, hidden, cfg_.model.feature_dim}, rng);
    }

    ProjectionHead make_head(ProjectionHead::Purpose purpose, Rng& rng) const {
        const std::size_t hidden =
            cfg_.model.proj_hidden ? cfg_.model.proj_hidden : 2 * feature_dim();
        const std::size_t out = cfg_.model.proj_dim ? cfg_.model.proj_dim : feature_dim();
        return ProjectionHead(purpose, feature_dim(), hidden, out, rng);
    }

    std::set<std::string> frozen_parameter_names(const RunState& st) const {
        std::set<std::string> names;
        if (!cfg_.train.freeze_all_but_last || st.model.encoder.layers().size() < 2)
            return names;
        for (std::size_t l = 0; l + 1 < st.model.encoder.layers().size(); ++l) {
            names.insert("encoder.w" + std::to_string(l));
            names.insert("encoder.b" + std::to_string(l));
        }
        return names;
    }

    int class_row(int class_id) const {
        for (std::size_t r = 0; r < split_.base_class_ids.size(); ++r)
            if (split_.base_class_ids[r] == class_id) return static_cast<int>(r);
        return -1;
    }

    static std::vector<int> block_argmax(const Matrix& logits, std::size_t begin,
                                         std::size_t end) {
        std::vector<int> out(logits.rows());
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            std::size_t best = begin;
            for (std::size_t j = begin + 1; j < end; ++j)
                if (logits(i, j) > logits(i, best)) best = j;
            out[i] = static_cast<int>(best);
        }
        return out;
    }

    void evaluate_and_append(RunState& st, std::size_t t) const {
        std::vector<GroupEval> groups;
        for (std::size_t j = 0; j <= t; ++j) {
            const EmbeddingDataset& test = j == 0 ? split_.base_test : split_.sessions[j - 1].test;
            Matrix feats = st.model.encoder.forward_eager(test.features);
            Matrix logits = st.model.classifier.classify_eager(feats);
            GroupEval grp;
            grp.truths = *test.labels;
            grp.raw_preds = block_argmax(logits, 0, st.model.classifier.n_classes());
            groups.push_back(std::move(grp));
        }
        const std::vector<int> seen(class_order_.begin(),
                                    class_order_.begin() +
                                        static_cast<std::ptrdiff_t>(st.labels.size()));
        SessionEval ev = evaluate_session(groups, st.labels, seen);
        st.ledger.append_row(ev.acc_per_group, ev.overall);
        st.confusions.push_back(ev.confusion);
    }

    void report_empty(const std::vector<int>& empty_classes, std::size_t t) const {
        if (empty_classes.empty() || log_level() < 1) return;
        std::cerr << "[fea] session " << t << ": no samples for class(es)";
        for (int c : empty_classes) std::cerr << " " << c;
        std::cerr << ", prototypes omitted\n";
    }

    static Matrix rng_block(const Rng& rng) {
        const auto state = rng.state();
        Matrix m(1, 4);
        for (std::size_t i = 0; i < 4; ++i) m(0, i) = bits_to_double(state[i]);
        return m;
    }

    static Rng rng_from_block(const Matrix& m) {
        Rng rng(0);
        rng.set_state({double_to_bits(m(0, 0)), double_to_bits(m(0, 1)),
                       double_to_bits(m(0, 2)), double_to_bits(m(0, 3))});
        return rng;
    }

    static void write_text(const std::string& path, const std::string& text) {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("engine: cannot write " + path);
        os << text;
    }

    static double seconds_since(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    std::vector<std::string> split_config_lines() const {
        std::vector<std::string> lines;
        std::istringstream is(render_run_config(cfg_));
        std::string line;
        while (std::getline(is, line))
            if (!line.empty()) lines.push_back(line);
        return lines;
    }

    RunConfig cfg_;
    ProtocolSplit split_;
    std::size_t input_dim_ = 0;
    std::vector<int> class_order_;
};

} // namespace fea
