// Prediction log: per-evaluation ground-truth / re-assigned prediction pairs,
// from which all metrics can be recomputed without retraining.
//
// Text format:
//   fea.predlog.v1
//   evals=<N>
//   eval=<t> groups=<t+1>
//   group=<j> n=<count>
//   <truth> <pred>          (count lines)
#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fea/dataio.hpp"
#include "fea/evalkit.hpp"

namespace fea {

struct PredLogGroup {
    std::vector<int> truths;
    std::vector<int> preds; // already in ground-truth-aligned label space
};

using PredLog = std::vector<std::vector<PredLogGroup>>; // [eval t][group j]

inline PredLog parse_predlog(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "fea.predlog.v1")
        throw DataError("predlog: bad header");
    auto next_line = [&]() {
        while (std::getline(is, line))
            if (!line.empty()) return true;
        return false;
    };
    if (!next_line() || line.rfind("evals=", 0) != 0)
        throw DataError("predlog: missing evals count");
    const std::size_t n_evals = std::stoul(line.substr(6));
    PredLog log;
    for (std::size_t t = 0; t < n_evals; ++t) {
        if (!next_line()) throw DataError("predlog: truncated at eval " + std::to_string(t));
        std::size_t eval_idx = 0, n_groups = 0;
        if (std::sscanf(line.c_str(), "eval=%zu groups=%zu", &eval_idx, &n_groups) != 2 ||
            eval_idx != t)
            throw DataError("predlog: bad eval header '" + line + "'");
        if (n_groups != t + 1)
            throw DataError("predlog: eval " + std::to_string(t) + " must have " +
                            std::to_string(t + 1) + " groups, has " + std::to_string(n_groups));
        std::vector<PredLogGroup> groups;
        for (std::size_t j = 0; j < n_groups; ++j) {
            if (!next_line()) throw DataError("predlog: truncated group header");
            std::size_t group_idx = 0, count = 0;
            if (std::sscanf(line.c_str(), "group=%zu n=%zu", &group_idx, &count) != 2 ||
                group_idx != j)
                throw DataError("predlog: bad group header '" + line + "'");
            PredLogGroup grp;
            for (std::size_t i = 0; i < count; ++i) {
                if (!next_line()) throw DataError("predlog: truncated sample list");
                int truth = 0, pred = 0;
                if (std::sscanf(line.c_str(), "%d %d", &truth, &pred) != 2)
                    throw DataError("predlog: bad sample line '" + line + "'");
                grp.truths.push_back(truth);
                grp.preds.push_back(pred);
            }
            groups.push_back(std::move(grp));
        }
        log.push_back(std::move(groups));
    }
    return log;
}

inline PredLog load_predlog(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("predlog: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_predlog(buf.str());
}

struct PredLogMetrics {
    MetricsLedger ledger;
    std::vector<Matrix> confusions;
    std::vector<int> class_order;
};

inline PredLogMetrics recompute_from_predlog(const PredLog& log) {
    std::set<int> classes;
    for (const auto& groups : log)
        for (const auto& grp : groups) {
            classes.insert(grp.truths.begin(), grp.truths.end());
            classes.insert(grp.preds.begin(), grp.preds.end());
        }
    PredLogMetrics out;
    out.class_order.assign(classes.begin(), classes.end());
    auto pos = [&out](int cls) {
        return static_cast<std::size_t>(
            std::lower_bound(out.class_order.begin(), out.class_order.end(), cls) -
            out.class_order.begin());
    };
    for (const auto& groups : log) {
        std::vector<double> row;
        std::size_t total = 0, total_correct = 0;
        Matrix confusion(out.class_order.size(), out.class_order.size(), 0.0);
        for (const auto& grp : groups) {
            std::size_t correct = 0;
            for (std::size_t i = 0; i < grp.truths.size(); ++i) {
                if (grp.truths[i] == grp.preds[i]) ++correct;
                confusion(pos(grp.truths[i]), pos(grp.preds[i])) += 1.0;
            }
            row.push_back(grp.truths.empty() ? 0.0
                                             : 100.0 * static_cast<double>(correct) /
                                                   static_cast<double>(grp.truths.size()));
            total += grp.truths.size();
            total_correct += correct;
        }
        out.ledger.append_row(row, total == 0 ? 0.0
                                              : 100.0 * static_cast<double>(total_correct) /
                                                    static_cast<double>(total));
        out.confusions.push_back(std::move(confusion));
    }
    return out;
}

inline std::string render_predlog(const PredLog& log) {
    std::string out = "fea.predlog.v1\n";
    out += "evals=" + std::to_string(log.size()) + "\n";
    for (std::size_t t = 0; t < log.size(); ++t) {
        out += "eval=" + std::to_string(t) + " groups=" + std::to_string(log[t].size()) + "\n";
        for (std::size_t j = 0; j < log[t].size(); ++j) {
            const auto& grp = log[t][j];
            out += "group=" + std::to_string(j) + " n=" + std::to_string(grp.truths.size()) + "\n";
            for (std::size_t i = 0; i < grp.truths.size(); ++i)
                out += std::to_string(grp.truths[i]) + " " + std::to_string(grp.preds[i]) + "\n";
        }
    }
    return out;
}

} // namespace fea
