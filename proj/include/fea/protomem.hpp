// Prototype memory: per-class feature mean and per-dimension variance,
// harvested at session end and replayed as Gaussian pseudo features later.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fea/checkpoint.hpp"
#include "fea/matrix.hpp"
#include "fea/rng.hpp"

namespace fea {

struct PrototypeEntry {
    enum class Source { ground_truth, predicted };

    int class_id = -1;
    Matrix mu;       // 1 x d
    Matrix variance; // 1 x d, population (1/n) variance
    std::size_t n = 0;
    Source source = Source::ground_truth;
};

struct PrototypeResult {
    std::vector<PrototypeEntry> entries;
    std::vector<int> empty_classes; // requested ids with zero samples
};

// Population mean and variance per class over the labeled feature rows.
inline PrototypeResult compute_prototypes(const Matrix& features, const std::vector<int>& labels,
                                          const std::vector<int>& class_ids,
                                          PrototypeEntry::Source source) {
    if (features.rows() == 0) throw std::invalid_argument("compute_prototypes: empty feature matrix");
    if (labels.size() != features.rows())
        throw std::invalid_argument("compute_prototypes: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(features.rows()) + " rows");
    const std::size_t d = features.cols();
    PrototypeResult result;
    for (int c : class_ids) {
        PrototypeEntry e;
        e.class_id = c;
        e.source = source;
        e.mu = Matrix(1, d, 0.0);
        e.variance = Matrix(1, d, 0.0);
        for (std::size_t i = 0; i < features.rows(); ++i) {
            if (labels[i] != c) continue;
            ++e.n;
            for (std::size_t j = 0; j < d; ++j) e.mu(0, j) += features(i, j);
        }
        if (e.n == 0) {
            result.empty_classes.push_back(c);
            continue;
        }
        for (std::size_t j = 0; j < d; ++j) e.mu(0, j) /= static_cast<double>(e.n);
        for (std::size_t i = 0; i < features.rows(); ++i) {
            if (labels[i] != c) continue;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = features(i, j) - e.mu(0, j);
                e.variance(0, j) += diff * diff;
            }
        }
        for (std::size_t j = 0; j < d; ++j) e.variance(0, j) /= static_cast<double>(e.n);
        result.entries.push_back(std::move(e));
    }
    return result;
}

// Rows mu + e with e ~ N(0, diag(variance)), per-dimension std = sqrt(var).
inline Matrix sample_pseudo_features(const PrototypeEntry& entry, std::size_t n_p,
                                     std::uint64_t seed) {
    if (n_p == 0) throw std::invalid_argument("sample_pseudo_features: n_p must be >= 1");
    const std::size_t d = entry.mu.cols();
    Matrix out(n_p, d);
    Rng rng(seed, 0x505E0D0ULL + static_cast<std::uint64_t>(entry.class_id));
    for (std::size_t i = 0; i < n_p; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out(i, j) = entry.mu(0, j) + std::sqrt(entry.variance(0, j)) * rng.normal();
    return out;
}

// Write-once-per-class store; grows monotonically across sessions.
class PrototypeStore {
public:
    void add(PrototypeEntry entry) {
        if (entries_.count(entry.class_id))
            throw std::logic_error("PrototypeStore: class " + std::to_string(entry.class_id) +
                                   " already stored");
        entries_.emplace(entry.class_id, std::move(entry));
    }

    void add_all(std::vector<PrototypeEntry> entries) {
        for (auto& e : entries) add(std::move(e));
    }

    bool has(int class_id) const { return entries_.count(class_id) > 0; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    const PrototypeEntry& get(int class_id) const {
        auto it = entries_.find(class_id);
        if (it == entries_.end())
            throw std::out_of_range("PrototypeStore: no prototype for class " +
                                    std::to_string(class_id));
        return it->second;
    }

    std::vector<int> class_ids() const { // ascending
        std::vector<int> ids;
        ids.reserve(entries_.size());
        for (const auto& [id, e] : entries_) ids.push_back(id);
        return ids;
    }

    // All stored class means stacked in ascending class id order.
    Matrix stacked_means() const {
        if (entries_.empty()) return {};
        const std::size_t d = entries_.begin()->second.mu.cols();
        Matrix out(entries_.size(), d);
        std::size_t r = 0;
        for (const auto& [id, e] : entries_) {
            for (std::size_t j = 0; j < d; ++j) out(r, j) = e.mu(0, j);
            ++r;
        }
        return out;
    }

    // Pseudo-feature batch: n_p rows per stored class, ascending class order.
    // Returns the feature matrix and the class id of each row.
    std::pair<Matrix, std::vector<int>> sample_batch(std::size_t n_p, std::uint64_t seed) const {
        if (entries_.empty()) return {Matrix(), {}};
        const std::size_t d = entries_.begin()->second.mu.cols();
        Matrix out(entries_.size() * n_p, d);
        std::vector<int> row_class(out.rows());
        std::size_t r = 0;
        for (const auto& [id, e] : entries_) {
            Matrix block = sample_pseudo_features(e, n_p, seed);
            for (std::size_t i = 0; i < n_p; ++i, ++r) {
                row_class[r] = id;
                for (std::size_t j = 0; j < d; ++j) out(r, j) = block(i, j);
            }
        }
        return {std::move(out), std::move(row_class)};
    }

    void save(BlockMap& out) const {
        for (const auto& [id, e] : entries_) {
            const std::string c = std::to_string(id);
            out["proto.mu." + c] = e.mu;
            out["proto.var." + c] = e.variance;
            out["proto.meta." + c] =
                Matrix{{static_cast<double>(e.n),
                        e.source == PrototypeEntry::Source::predicted ? 1.0 : 0.0}};
        }
    }

    static PrototypeStore load(const BlockMap& blocks) {
        PrototypeStore store;
        for (const auto& [name, m] : blocks) {
            if (name.rfind("proto.mu.", 0) != 0) continue;
            const int id = std::stoi(name.substr(9));
            PrototypeEntry e;
            e.class_id = id;
            e.mu = m;
            e.variance = feac_get(blocks, "proto.var." + std::to_string(id));
            const Matrix& meta = feac_get(blocks, "proto.meta." + std::to_string(id));
            e.n = static_cast<std::size_t>(meta(0, 0));
            e.source = meta(0, 1) > 0.5 ? PrototypeEntry::Source::predicted
                                        : PrototypeEntry::Source::ground_truth;
            store.add(std::move(e));
        }
        return store;
    }

private:
    std::map<int, PrototypeEntry> entries_;
};

} // namespace fea
