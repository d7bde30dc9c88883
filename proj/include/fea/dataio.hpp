// Embedding datasets: synthetic Gaussian-cluster generation, binary/text file
// formats, two-view embedding-space augmentation, and protocol splitting.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fea/matrix.hpp"
#include "fea/rng.hpp"

namespace fea {

// Raised for anything wrong with data on disk or data generation.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmbeddingDataset {
    Matrix features;                       // n x d
    std::optional<std::vector<int>> labels; // class ids, if present

    std::size_t n() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }
};

// Feature-only view handed to the incremental trainer; by construction there
// is no label accessor on this type.
struct UnlabeledSet {
    Matrix features;

    std::size_t n() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }
};

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t n_classes = 2;
    std::size_t dim = 2;
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 20;
    double radius = 0.0;        // 0 = auto: 1.25 * separation * within_std
    double within_std = 1.0;
    double separation = 4.0;    // required min center distance / within_std
    std::uint64_t seed = 1;
};

struct SyntheticDataset {
    EmbeddingDataset train;
    EmbeddingDataset test;
    Matrix centers;             // n_classes x dim
    double achieved_separation = 0.0;
};

namespace detail {

inline double min_center_separation(const Matrix& centers) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < centers.rows(); ++i)
        for (std::size_t j = i + 1; j < centers.rows(); ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < centers.cols(); ++k) {
                const double diff = centers(i, k) - centers(j, k);
                d2 += diff * diff;
            }
            best = std::min(best, std::sqrt(d2));
        }
    return best;
}

} // namespace detail

// Gaussian clusters around centers sampled as unit-sphere directions times a
// radius. Center sets violating the separation factor are resampled, up to
// 100 attempts.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_classes == 0 || spec.train_per_class == 0 || spec.test_per_class == 0)
        throw std::invalid_argument("generate_synthetic: counts must be positive");
    if (spec.dim < 2) throw std::invalid_argument("generate_synthetic: need dim >= 2");
    const double radius =
        spec.radius > 0.0 ? spec.radius : 1.25 * spec.separation * spec.within_std;
    const double required = spec.separation * spec.within_std;

    Rng center_rng(spec.seed, 0xCE17E125ULL);
    Matrix centers(spec.n_classes, spec.dim);
    double achieved = 0.0;
    bool ok = false;
    double best_seen = 0.0;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        for (std::size_t c = 0; c < spec.n_classes; ++c) {
            double nrm = 0.0;
            for (std::size_t k = 0; k < spec.dim; ++k) {
                centers(c, k) = center_rng.normal();
                nrm += centers(c, k) * centers(c, k);
            }
            nrm = std::sqrt(nrm);
            for (std::size_t k = 0; k < spec.dim; ++k) centers(c, k) *= radius / nrm;
        }
        achieved = detail::min_center_separation(centers);
        best_seen = std::max(best_seen, achieved);
        ok = spec.n_classes == 1 || achieved >= required;
    }
    if (!ok)
        throw DataError(
            "generate_synthetic: separation factor " + std::to_string(spec.separation) +
            " unattainable in 100 attempts (best achieved " +
            std::to_string(best_seen / std::max(spec.within_std, 1e-300)) + ")");

    Rng sample_rng(spec.seed, 0x5A3B1EULL);
    auto draw = [&](std::size_t per_class) {
        EmbeddingDataset ds;
        ds.features = Matrix(per_class * spec.n_classes, spec.dim);
        ds.labels = std::vector<int>(per_class * spec.n_classes);
        std::size_t r = 0;
        for (std::size_t c = 0; c < spec.n_classes; ++c)
            for (std::size_t i = 0; i < per_class; ++i, ++r) {
                (*ds.labels)[r] = static_cast<int>(c);
                for (std::size_t k = 0; k < spec.dim; ++k)
                    ds.features(r, k) = centers(c, k) + spec.within_std * sample_rng.normal();
            }
        return ds;
    };

    SyntheticDataset out;
    out.train = draw(spec.train_per_class);
    out.test = draw(spec.test_per_class);
    out.centers = std::move(centers);
    out.achieved_separation =
        spec.n_classes == 1 ? std::numeric_limits<double>::infinity()
                            : achieved / spec.within_std;
    return out;
}

// ---------------------------------------------------------------------------
// Two-view augmentation
// ---------------------------------------------------------------------------

// Each view: batch + iid Gaussian noise, each coordinate then zeroed
// independently with probability mask_rate. The two views draw independently.
inline std::pair<Matrix, Matrix> augment_two_views(const Matrix& batch, double noise_std,
                                                   double mask_rate, std::uint64_t seed) {
    if (noise_std < 0.0) throw std::invalid_argument("augment_two_views: negative noise_std");
    if (mask_rate < 0.0 || mask_rate >= 1.0)
        throw std::invalid_argument("augment_two_views: mask_rate must be in [0, 1)");
    Rng rng(seed, 0xA0637E27ULL);
    auto make_view = [&] {
        Matrix v = batch;
        for (double& x : v.vec()) {
            x += noise_std == 0.0 ? 0.0 : noise_std * rng.normal();
            if (mask_rate > 0.0 && rng.uniform01() < mask_rate) x = 0.0;
        }
        return v;
    };
    Matrix a = make_view();
    Matrix b = make_view();
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------
//
// Binary (bit-exact): little-endian, magic "CNCD", u32 version = 1, u32 n,
// u32 d, u8 has_labels, n*d float32 row-major features, then n int32 labels
// when has_labels. A plain-text alternative is accepted for fixtures: header
// "dim=<d>", then comma-separated floats per row with an optional trailing
// label column.

constexpr std::uint32_t kEmbeddingVersion = 1;

inline void save_embeddings(const EmbeddingDataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_embeddings: cannot open " + path);
    os.write("CNCD", 4);
    auto put32 = [&os](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    put32(kEmbeddingVersion);
    put32(static_cast<std::uint32_t>(ds.n()));
    put32(static_cast<std::uint32_t>(ds.dim()));
    const std::uint8_t has_labels = ds.labels ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&has_labels), 1);
    for (double x : ds.features.vec()) {
        const float f = static_cast<float>(x);
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (ds.labels)
        for (int label : *ds.labels) {
            const std::int32_t v = label;
            os.write(reinterpret_cast<const char*>(&v), 4);
        }
    if (!os) throw DataError("save_embeddings: write failed: " + path);
}

namespace detail {

inline EmbeddingDataset load_embeddings_text(std::ifstream& is, const std::string& path) {
    std::string header;
    std::getline(is, header);
    if (header.rfind("dim=", 0) != 0)
        throw DataError("load_embeddings: bad text header in " + path);
    const std::size_t d = std::stoul(header.substr(4));
    if (d == 0) throw DataError("load_embeddings: dim=0 in " + path);
    std::vector<double> values;
    std::vector<int> labels;
    bool labeled = false, first_row = true;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::vector<double> row;
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (first_row) {
            if (row.size() != d && row.size() != d + 1)
                throw DataError("load_embeddings: row width " +
                                         std::to_string(row.size()) + " does not match dim=" +
                                         std::to_string(d) + " in " + path);
            labeled = row.size() == d + 1;
            first_row = false;
        } else if (row.size() != d + (labeled ? 1 : 0)) {
            throw DataError("load_embeddings: inconsistent row width in " + path);
        }
        for (std::size_t j = 0; j < d; ++j) values.push_back(row[j]);
        if (labeled) labels.push_back(static_cast<int>(std::llround(row[d])));
        ++n;
    }
    EmbeddingDataset ds;
    ds.features = Matrix(n, d);
    std::copy(values.begin(), values.end(), ds.features.vec().begin());
    if (labeled) ds.labels = std::move(labels);
    return ds;
}

} // namespace detail

// expected_classes, when given, bounds label values (range check).
inline EmbeddingDataset load_embeddings(const std::string& path,
                                        std::optional<int> expected_classes = std::nullopt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_embeddings: cannot open " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is) throw DataError("load_embeddings: file too short: " + path);

    EmbeddingDataset ds;
    if (std::memcmp(magic, "CNCD", 4) != 0) {
        if (std::memcmp(magic, "dim=", 4) != 0)
            throw DataError("load_embeddings: bad magic in " + path);
        is.close();
        std::ifstream text(path);
        ds = detail::load_embeddings_text(text, path);
    } else {
        auto get32 = [&is, &path]() {
            std::uint32_t v = 0;
            is.read(reinterpret_cast<char*>(&v), 4);
            if (!is) throw DataError("load_embeddings: truncated header in " + path);
            return v;
        };
        const std::uint32_t version = get32();
        if (version != kEmbeddingVersion)
            throw DataError("load_embeddings: unsupported version " +
                                     std::to_string(version) + " in " + path);
        const std::uint32_t n = get32();
        const std::uint32_t d = get32();
        std::uint8_t has_labels = 0;
        is.read(reinterpret_cast<char*>(&has_labels), 1);
        if (!is) throw DataError("load_embeddings: truncated header in " + path);

        const std::size_t header_bytes = 17; // magic + version + n + d + has_labels
        const std::size_t expected_bytes =
            header_bytes + static_cast<std::size_t>(n) * d * 4 +
            (has_labels ? static_cast<std::size_t>(n) * 4 : 0);
        ds.features = Matrix(n, d);
        std::vector<float> raw(static_cast<std::size_t>(n) * d);
        is.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(raw.size() * 4));
        std::size_t actual_bytes = header_bytes + static_cast<std::size_t>(is.gcount());
        if (static_cast<std::size_t>(is.gcount()) != raw.size() * 4)
            throw DataError("load_embeddings: truncated file " + path + " (expected " +
                                     std::to_string(expected_bytes) + " bytes, got " +
                                     std::to_string(actual_bytes) + ")");
        for (std::size_t i = 0; i < raw.size(); ++i) ds.features.vec()[i] = raw[i];
        if (has_labels) {
            std::vector<std::int32_t> labels(n);
            is.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(n * 4));
            actual_bytes += static_cast<std::size_t>(is.gcount());
            if (static_cast<std::size_t>(is.gcount()) != static_cast<std::size_t>(n) * 4)
                throw DataError("load_embeddings: truncated file " + path +
                                         " (expected " + std::to_string(expected_bytes) +
                                         " bytes, got " + std::to_string(actual_bytes) + ")");
            ds.labels = std::vector<int>(labels.begin(), labels.end());
        }
    }

    if (ds.labels) {
        for (int label : *ds.labels) {
            if (label < 0 || (expected_classes && label >= *expected_classes))
                throw DataError("load_embeddings: label " + std::to_string(label) +
                                         " out of range in " + path);
        }
    }
    if (!ds.features.all_finite())
        throw DataError("load_embeddings: non-finite feature values in " + path);
    return ds;
}

// ---------------------------------------------------------------------------
// Protocol splitting
// ---------------------------------------------------------------------------

struct SessionProtocol {
    std::size_t base_classes = 0;
    std::vector<std::size_t> novel_per_session;

    std::size_t sessions() const { return novel_per_session.size(); } // T
    std::size_t total_classes() const {
        std::size_t total = base_classes;
        for (std::size_t k : novel_per_session) total += k;
        return total;
    }
};

// One incremental session's data: unlabeled training features plus a labeled
// test split. Training ground truth is retained apart for evaluation only.
struct SessionSplit {
    std::vector<int> class_ids; // this session's classes, ascending
    UnlabeledSet train;
    std::vector<int> train_truth; // evaluation-only, not visible to training
    EmbeddingDataset test;
};

struct ProtocolSplit {
    std::vector<int> base_class_ids;
    EmbeddingDataset base_train;  // labeled
    EmbeddingDataset base_test;   // labeled
    std::vector<SessionSplit> sessions;
};

// Assigns classes to sessions (ascending class id by default, shuffled under
// the flag) and materializes per-session train/test splits.
inline ProtocolSplit split_protocol(const EmbeddingDataset& train, const EmbeddingDataset& test,
                                    const SessionProtocol& protocol, std::uint64_t seed,
                                    bool shuffle_classes = false) {
    if (!train.labels || !test.labels)
        throw std::invalid_argument("split_protocol: train and test must be labeled");
    if (protocol.base_classes == 0)
        throw std::invalid_argument("split_protocol: base session needs >= 1 class");
    int max_label = -1;
    for (int label : *train.labels) max_label = std::max(max_label, label);
    for (int label : *test.labels) max_label = std::max(max_label, label);
    const std::size_t n_classes = static_cast<std::size_t>(max_label + 1);
    if (n_classes < protocol.total_classes())
        throw std::invalid_argument("split_protocol: need " +
                                    std::to_string(protocol.total_classes()) +
                                    " classes, dataset has " + std::to_string(n_classes));

    std::vector<int> order(n_classes);
    for (std::size_t i = 0; i < n_classes; ++i) order[i] = static_cast<int>(i);
    if (shuffle_classes) {
        Rng rng(seed, 0x5F117ULL);
        rng.shuffle(order.begin(), order.end());
    }

    auto take = [&](const EmbeddingDataset& ds, const std::vector<int>& classes) {
        EmbeddingDataset out;
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < ds.n(); ++i)
            if (std::find(classes.begin(), classes.end(), (*ds.labels)[i]) != classes.end())
                rows.push_back(i);
        out.features = Matrix(rows.size(), ds.dim());
        out.labels = std::vector<int>(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            (*out.labels)[r] = (*ds.labels)[rows[r]];
            for (std::size_t j = 0; j < ds.dim(); ++j)
                out.features(r, j) = ds.features(rows[r], j);
        }
        return out;
    };

    ProtocolSplit split;
    std::size_t cursor = 0;
    split.base_class_ids.assign(order.begin(), order.begin() + protocol.base_classes);
    std::sort(split.base_class_ids.begin(), split.base_class_ids.end());
    cursor = protocol.base_classes;
    split.base_train = take(train, split.base_class_ids);
    split.base_test = take(test, split.base_class_ids);

    for (std::size_t t = 0; t < protocol.sessions(); ++t) {
        SessionSplit session;
        session.class_ids.assign(order.begin() + cursor,
                                 order.begin() + cursor + protocol.novel_per_session[t]);
        std::sort(session.class_ids.begin(), session.class_ids.end());
        cursor += protocol.novel_per_session[t];
        EmbeddingDataset tr = take(train, session.class_ids);
        session.train.features = std::move(tr.features);
        session.train_truth = std::move(*tr.labels);
        session.test = take(test, session.class_ids);
        split.sessions.push_back(std::move(session));
    }
    return split;
}

} // namespace fea
