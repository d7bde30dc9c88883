// Learnable components: embedding encoder, expandable cosine classifier,
// projection heads, and the frozen teacher snapshot used for distillation.
//
// Parameters live in plain matrices owned by the component. Each training
// step binds them into a fresh graph (Binder), runs forward/backward there,
// and applies updates back to the owned matrices. Evaluation uses the eager
// (graph-free) paths, which compute the same arithmetic.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fea/checkpoint.hpp"
#include "fea/graph.hpp"
#include "fea/matrix.hpp"
#include "fea/rng.hpp"

namespace fea {

// Tracks which graph node corresponds to which owned parameter matrix, so the
// optimizer can route gradients back by name.
class Binder {
public:
    struct Entry {
        std::string name;
        Matrix* value;
        Var node;
    };

    Binder(Graph& g, bool trainable) : g_(g), trainable_(trainable) {}

    // Binds each distinct parameter once: repeated requests return the same
    // node, so gradients from every use accumulate together.
    Var operator()(const std::string& name, Matrix& value) {
        auto it = by_name_.find(name);
        if (it != by_name_.end()) {
            Entry& entry = entries_[it->second];
            if (entry.value != nullptr && entry.value != &value)
                throw std::logic_error("Binder: name '" + name + "' bound to two matrices");
            return entry.node;
        }
        Var node = trainable_ ? g_.param(value) : g_.constant(value);
        by_name_.emplace(name, entries_.size());
        entries_.push_back({name, &value, node});
        return node;
    }

    // Pre-routes a name to an existing node (gradient checks differentiate a
    // loss with respect to one chosen parameter this way).
    void alias(const std::string& name, Var node) {
        if (by_name_.count(name)) throw std::logic_error("Binder: alias over bound name " + name);
        by_name_.emplace(name, entries_.size());
        entries_.push_back({name, nullptr, node});
    }

    const std::vector<Entry>& entries() const { return entries_; }

private:
    Graph& g_;
    bool trainable_;
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> by_name_;
};

// ---------------------------------------------------------------------------
// Encoder f(.)
// ---------------------------------------------------------------------------

class Encoder {
public:
    enum class Mode { identity, mlp };

    struct Layer {
        Matrix w; // in x out
        Matrix b; // 1 x out
    };

    static Encoder identity(std::size_t dim) {
        Encoder e;
        e.mode_ = Mode::identity;
        e.input_dim_ = dim;
        e.feature_dim_ = dim;
        return e;
    }

    // Relu follows every layer.
    static Encoder mlp(const std::vector<std::size_t>& dims, Rng& rng) {
        if (dims.size() < 2) throw std::invalid_argument("Encoder::mlp: need at least 2 dims");
        Encoder e;
        e.mode_ = Mode::mlp;
        e.input_dim_ = dims.front();
        e.feature_dim_ = dims.back();
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            Layer layer;
            layer.w = Matrix(dims[l], dims[l + 1]);
            const double std = std::sqrt(2.0 / static_cast<double>(dims[l]));
            for (double& x : layer.w.vec()) x = rng.normal(0.0, std);
            layer.b = Matrix(1, dims[l + 1], 0.0);
            e.layers_.push_back(std::move(layer));
        }
        return e;
    }

    Mode mode() const { return mode_; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t feature_dim() const { return feature_dim_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    Var forward(Var x, Binder& bind, const std::string& prefix = "encoder") const {
        check_input(x->cols());
        if (mode_ == Mode::identity) return x;
        Var h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            // Owned matrices are logically const here; the binder needs
            // mutable access so the optimizer can write updates back.
            auto& layer = const_cast<Layer&>(layers_[l]);
            Var w = bind(prefix + ".w" + std::to_string(l), layer.w);
            Var b = bind(prefix + ".b" + std::to_string(l), layer.b);
            h = relu(add_rowvec(matmul(h, w), b));
        }
        return h;
    }

    Matrix forward_eager(const Matrix& x) const {
        check_input(x.cols());
        if (mode_ == Mode::identity) return x;
        Matrix h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const Layer& layer = layers_[l];
            Matrix next(h.rows(), layer.w.cols());
            for (std::size_t i = 0; i < h.rows(); ++i)
                for (std::size_t p = 0; p < h.cols(); ++p) {
                    const double hip = h(i, p);
                    if (hip == 0.0) continue;
                    for (std::size_t j = 0; j < next.cols(); ++j)
                        next(i, j) += hip * layer.w(p, j);
                }
            for (std::size_t i = 0; i < next.rows(); ++i)
                for (std::size_t j = 0; j < next.cols(); ++j) {
                    next(i, j) += layer.b(0, j);
                    if (next(i, j) < 0.0) next(i, j) = 0.0;
                }
            h = std::move(next);
        }
        return h;
    }

    void save(BlockMap& out, const std::string& prefix) const {
        out[prefix + ".meta"] =
            Matrix{{static_cast<double>(mode_ == Mode::mlp ? 1 : 0),
                    static_cast<double>(input_dim_), static_cast<double>(feature_dim_),
                    static_cast<double>(layers_.size())}};
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            out[prefix + ".w" + std::to_string(l)] = layers_[l].w;
            out[prefix + ".b" + std::to_string(l)] = layers_[l].b;
        }
    }

    static Encoder load(const BlockMap& blocks, const std::string& prefix) {
        const Matrix& meta = feac_get(blocks, prefix + ".meta");
        Encoder e;
        e.mode_ = meta(0, 0) > 0.5 ? Mode::mlp : Mode::identity;
        e.input_dim_ = static_cast<std::size_t>(meta(0, 1));
        e.feature_dim_ = static_cast<std::size_t>(meta(0, 2));
        const auto n_layers = static_cast<std::size_t>(meta(0, 3));
        for (std::size_t l = 0; l < n_layers; ++l) {
            Layer layer;
            layer.w = feac_get(blocks, prefix + ".w" + std::to_string(l));
            layer.b = feac_get(blocks, prefix + ".b" + std::to_string(l));
            e.layers_.push_back(std::move(layer));
        }
        return e;
    }

private:
    void check_input(std::size_t cols) const {
        if (cols != input_dim_)
            throw std::invalid_argument("encode: batch has " + std::to_string(cols) +
                                        " columns, encoder expects " + std::to_string(input_dim_));
    }

    Mode mode_ = Mode::identity;
    std::size_t input_dim_ = 0;
    std::size_t feature_dim_ = 0;
    std::vector<Layer> layers_;
};

// Frozen deep copy of the encoder at the end of the previous session.
struct TeacherSnapshot {
    Encoder encoder;
};

inline TeacherSnapshot snapshot_teacher(const Encoder& enc) { return TeacherSnapshot{enc}; }

// ---------------------------------------------------------------------------
// Cosine classifier phi(.)
// ---------------------------------------------------------------------------

// Logit(i, k) = scale * (w_k / |w_k|) . (h_i / |h_i|). Row k is the centroid
// of class k; rows are appended as novel classes arrive and old rows are
// never touched by extension.
class CosineClassifier {
public:
    CosineClassifier() = default;

    CosineClassifier(Matrix weights, double scale) : w_(std::move(weights)), scale_(scale) {
        if (scale_ <= 0.0) throw std::invalid_argument("CosineClassifier: scale must be positive");
        for (std::size_t k = 0; k < w_.rows(); ++k) {
            double nrm = 0.0;
            for (std::size_t j = 0; j < w_.cols(); ++j) nrm += w_(k, j) * w_(k, j);
            if (nrm == 0.0)
                throw std::invalid_argument("CosineClassifier: zero-norm weight row " +
                                            std::to_string(k));
        }
    }

    static CosineClassifier init(std::size_t n_classes, std::size_t feature_dim, double scale,
                                 std::uint64_t seed) {
        Matrix w(n_classes, feature_dim);
        fill_rows(w, 0, n_classes, seed);
        return CosineClassifier(std::move(w), scale);
    }

    std::size_t n_classes() const { return w_.rows(); }
    std::size_t feature_dim() const { return w_.cols(); }
    double scale() const { return scale_; }
    Matrix& weights() { return w_; }
    const Matrix& weights() const { return w_; }

    Var classify(Var features, Binder& bind) const {
        check_features(features->cols());
        Var w = bind("classifier.w", const_cast<Matrix&>(w_));
        return scalar_mul(cosine_similarity(features, w), scale_);
    }

    Matrix classify_eager(const Matrix& features) const {
        check_features(features.cols());
        Matrix logits(features.rows(), w_.rows(), 0.0);
        std::vector<double> wn(w_.rows(), 0.0);
        for (std::size_t k = 0; k < w_.rows(); ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < w_.cols(); ++j) s += w_(k, j) * w_(k, j);
            wn[k] = std::sqrt(s);
        }
        for (std::size_t i = 0; i < features.rows(); ++i) {
            double hn = 0.0;
            for (std::size_t j = 0; j < features.cols(); ++j) hn += features(i, j) * features(i, j);
            hn = std::sqrt(hn);
            if (hn == 0.0) continue;
            for (std::size_t k = 0; k < w_.rows(); ++k) {
                double dot = 0.0;
                for (std::size_t j = 0; j < w_.cols(); ++j) dot += features(i, j) * w_(k, j);
                logits(i, k) = scale_ * dot / (hn * wn[k]);
            }
        }
        return logits;
    }

    // Appends n_new rows drawn from a seeded Gaussian (std 0.02) and
    // normalized to unit length. Existing rows are preserved byte-for-byte.
    void extend(int n_new, std::uint64_t seed) {
        if (n_new < 0) throw std::invalid_argument("extend_classifier: negative n_new");
        if (n_new == 0) return;
        Matrix grown(w_.rows() + static_cast<std::size_t>(n_new), w_.cols());
        for (std::size_t i = 0; i < w_.size(); ++i) grown.vec()[i] = w_.vec()[i];
        fill_rows(grown, w_.rows(), grown.rows(), seed);
        w_ = std::move(grown);
    }

    void save(BlockMap& out) const {
        out["classifier.w"] = w_;
        out["classifier.scale"] = Matrix(1, 1, scale_);
    }

    static CosineClassifier load(const BlockMap& blocks) {
        return CosineClassifier(feac_get(blocks, "classifier.w"),
                                feac_get(blocks, "classifier.scale")(0, 0));
    }

private:
    static void fill_rows(Matrix& w, std::size_t r0, std::size_t r1, std::uint64_t seed) {
        Rng rng(seed, /*stream=*/0x0C1A55F1ULL);
        for (std::size_t k = r0; k < r1; ++k) {
            double nrm = 0.0;
            for (std::size_t j = 0; j < w.cols(); ++j) {
                w(k, j) = rng.normal(0.0, 0.02);
                nrm += w(k, j) * w(k, j);
            }
            nrm = std::sqrt(nrm);
            if (nrm == 0.0) {
                w(k, 0) = 1.0; // astronomically unlikely; keep the row usable
                continue;
            }
            for (std::size_t j = 0; j < w.cols(); ++j) w(k, j) /= nrm;
        }
    }

    void check_features(std::size_t cols) const {
        if (cols != w_.cols())
            throw std::invalid_argument("classify: features have " + std::to_string(cols) +
                                        " columns, classifier expects " +
                                        std::to_string(w_.cols()));
    }

    Matrix w_;
    double scale_ = 10.0;
};

// ---------------------------------------------------------------------------
// Projection heads (contrastive MLP and the boundary projector g(.))
// ---------------------------------------------------------------------------

class ProjectionHead {
public:
    enum class Purpose { contrastive, bap };

    ProjectionHead() = default;

    ProjectionHead(Purpose purpose, std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                   Rng& rng)
        : purpose_(purpose) {
        w1_ = Matrix(in_dim, hidden);
        const double s1 = std::sqrt(2.0 / static_cast<double>(in_dim));
        for (double& x : w1_.vec()) x = rng.normal(0.0, s1);
        b1_ = Matrix(1, hidden, 0.0);
        w2_ = Matrix(hidden, out_dim);
        const double s2 = std::sqrt(2.0 / static_cast<double>(hidden));
        for (double& x : w2_.vec()) x = rng.normal(0.0, s2);
        b2_ = Matrix(1, out_dim, 0.0);
    }

    Purpose purpose() const { return purpose_; }
    std::size_t out_dim() const { return w2_.cols(); }

    Var forward(Var x, Binder& bind, const std::string& prefix) const {
        auto* self = const_cast<ProjectionHead*>(this);
        Var w1 = bind(prefix + ".w0", self->w1_);
        Var b1 = bind(prefix + ".b0", self->b1_);
        Var w2 = bind(prefix + ".w1", self->w2_);
        Var b2 = bind(prefix + ".b1", self->b2_);
        return add_rowvec(matmul(relu(add_rowvec(matmul(x, w1), b1)), w2), b2);
    }

    void save(BlockMap& out, const std::string& prefix) const {
        out[prefix + ".w0"] = w1_;
        out[prefix + ".b0"] = b1_;
        out[prefix + ".w1"] = w2_;
        out[prefix + ".b1"] = b2_;
        out[prefix + ".purpose"] = Matrix(1, 1, purpose_ == Purpose::bap ? 1.0 : 0.0);
    }

    static ProjectionHead load(const BlockMap& blocks, const std::string& prefix) {
        ProjectionHead h;
        h.w1_ = feac_get(blocks, prefix + ".w0");
        h.b1_ = feac_get(blocks, prefix + ".b0");
        h.w2_ = feac_get(blocks, prefix + ".w1");
        h.b2_ = feac_get(blocks, prefix + ".b1");
        h.purpose_ = feac_get(blocks, prefix + ".purpose")(0, 0) > 0.5 ? Purpose::bap
                                                                       : Purpose::contrastive;
        return h;
    }

private:
    Purpose purpose_ = Purpose::contrastive;
    Matrix w1_, b1_, w2_, b2_;
};

// ---------------------------------------------------------------------------
// ModelState
// ---------------------------------------------------------------------------

struct ModelState {
    Encoder encoder;
    CosineClassifier classifier;
    ProjectionHead contrastive_head;
    ProjectionHead bap_head;
    std::optional<TeacherSnapshot> teacher;

    void save(BlockMap& out) const {
        encoder.save(out, "encoder");
        classifier.save(out);
        contrastive_head.save(out, "head.cl");
        bap_head.save(out, "head.bap");
        out["teacher.present"] = Matrix(1, 1, teacher ? 1.0 : 0.0);
        if (teacher) teacher->encoder.save(out, "teacher");
    }

    static ModelState load(const BlockMap& blocks) {
        ModelState m;
        m.encoder = Encoder::load(blocks, "encoder");
        m.classifier = CosineClassifier::load(blocks);
        m.contrastive_head = ProjectionHead::load(blocks, "head.cl");
        m.bap_head = ProjectionHead::load(blocks, "head.bap");
        if (feac_get(blocks, "teacher.present")(0, 0) > 0.5)
            m.teacher = TeacherSnapshot{Encoder::load(blocks, "teacher")};
        return m;
    }
};

} // namespace fea
