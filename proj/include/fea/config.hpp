// Flat key=value run configuration: parsing, defaults, canonical rendering.
// The canonical rendering doubles as the manifest's config echo and the
// deterministic run-id hash input.
#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fea/dataio.hpp"

namespace fea {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::uint64_t seed = 1;
    std::size_t epochs_base = 10;
    std::size_t epochs_inc = 60;
    std::size_t batch_size = 128;
    double lr_base = 0.1;
    double lr_inc = 0.1;
    double momentum = 0.9;
    double lambda = 0.01;   // feature distillation weight
    double epsilon = 0.1;   // guide-to-novel KL weight
    double omega = 2.0;     // BAP warm-up ceiling
    std::size_t warmup_e = 30;
    std::size_t n_p = 8;    // pseudo features per known class per step
    double css_weight = 1.0;
    bool freeze_all_but_last = false;
};

struct ModelConfig {
    bool identity_encoder = false;
    std::size_t feature_dim = 16;
    std::size_t hidden_dim = 0; // 0 = 2 * feature_dim
    std::size_t proj_hidden = 0;
    std::size_t proj_dim = 0;   // 0 = feature_dim
    double cosine_scale = 10.0;
};

struct AugConfig {
    double noise_std = 0.1;
    double mask_rate = 0.1;
};

struct LossFlags {
    bool symmetrize_view_ce = false;
    bool exclude_self_pairs = false;
};

struct RunConfig {
    std::string data_source = "synthetic"; // synthetic | file
    std::string train_path;
    std::string test_path;
    SyntheticSpec synth;
    SessionProtocol protocol{10, {2, 2, 2, 2, 2}};
    bool protocol_shuffle = false;
    TrainConfig train;
    ModelConfig model;
    AugConfig aug;
    LossFlags flags;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

class KvReader {
public:
    explicit KvReader(const std::string& text) {
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
            kv_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        seen_.insert(key);
        return it->second;
    }

    double real(const std::string& key, double fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        seen_.insert(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not a number: '" + it->second + "'");
        }
    }

    long long integer(const std::string& key, long long fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        seen_.insert(key);
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not an integer: '" + it->second + "'");
        }
    }

    bool flag(const std::string& key, bool fallback) {
        const long long v = integer(key, fallback ? 1 : 0);
        if (v != 0 && v != 1)
            throw ConfigError("config key " + key + ": expected 0 or 1");
        return v == 1;
    }

    std::vector<std::size_t> size_list(const std::string& key,
                                       const std::vector<std::size_t>& fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        seen_.insert(key);
        std::vector<std::size_t> out;
        std::stringstream ss(it->second);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cell = trim(cell);
            if (cell.empty()) continue;
            const long long v = std::stoll(cell);
            if (v <= 0) throw ConfigError("config key " + key + ": entries must be positive");
            out.push_back(static_cast<std::size_t>(v));
        }
        if (out.empty()) throw ConfigError("config key " + key + ": empty list");
        return out;
    }

    void reject_unknown() const {
        for (const auto& [key, value] : kv_)
            if (!seen_.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    }

private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> seen_;
};

} // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
    detail::KvReader kv(text);
    RunConfig cfg;

    cfg.data_source = kv.str("data.source", cfg.data_source);
    if (cfg.data_source != "synthetic" && cfg.data_source != "file")
        throw ConfigError("config key data.source: expected 'synthetic' or 'file'");
    cfg.train_path = kv.str("data.train_path", "");
    cfg.test_path = kv.str("data.test_path", "");
    if (cfg.data_source == "file" && (cfg.train_path.empty() || cfg.test_path.empty()))
        throw ConfigError("config: data.source=file requires data.train_path and data.test_path");

    cfg.synth.n_classes = static_cast<std::size_t>(kv.integer("synth.classes", 20));
    cfg.synth.dim = static_cast<std::size_t>(kv.integer("synth.dim", 16));
    cfg.synth.train_per_class = static_cast<std::size_t>(kv.integer("synth.train_per_class", 200));
    cfg.synth.test_per_class = static_cast<std::size_t>(kv.integer("synth.test_per_class", 50));
    cfg.synth.separation = kv.real("synth.separation", 8.0);
    cfg.synth.within_std = kv.real("synth.within_std", 1.0);
    cfg.synth.radius = kv.real("synth.radius", 0.0);
    cfg.synth.seed = static_cast<std::uint64_t>(kv.integer("synth.seed", 1));

    cfg.protocol.base_classes =
        static_cast<std::size_t>(kv.integer("protocol.base_classes", 10));
    cfg.protocol.novel_per_session =
        kv.size_list("protocol.novel_per_session", {2, 2, 2, 2, 2});
    const bool shuffle = kv.flag("protocol.shuffle_classes", false);
    cfg.protocol_shuffle = shuffle;

    cfg.train.seed = static_cast<std::uint64_t>(kv.integer("train.seed", 1));
    cfg.train.epochs_base = static_cast<std::size_t>(kv.integer("train.epochs_base", 10));
    cfg.train.epochs_inc = static_cast<std::size_t>(kv.integer("train.epochs_inc", 60));
    cfg.train.batch_size = static_cast<std::size_t>(kv.integer("train.batch_size", 128));
    if (cfg.train.batch_size == 0) throw ConfigError("config: train.batch_size must be positive");
    cfg.train.lr_base = kv.real("train.lr_base", 0.1);
    cfg.train.lr_inc = kv.real("train.lr_inc", 0.1);
    cfg.train.momentum = kv.real("train.momentum", 0.9);
    cfg.train.lambda = kv.real("train.lambda", 0.01);
    cfg.train.epsilon = kv.real("train.epsilon", 0.1);
    cfg.train.omega = kv.real("train.omega", 2.0);
    cfg.train.warmup_e = static_cast<std::size_t>(kv.integer("train.warmup_e", 30));
    if (cfg.train.warmup_e == 0) throw ConfigError("config: train.warmup_e must be >= 1");
    cfg.train.n_p = static_cast<std::size_t>(kv.integer("train.n_p", 8));
    cfg.train.css_weight = kv.real("train.css_weight", 1.0);
    cfg.train.freeze_all_but_last = kv.flag("train.freeze_all_but_last", false);

    const std::string enc = kv.str("model.encoder", "mlp");
    if (enc != "mlp" && enc != "identity")
        throw ConfigError("config key model.encoder: expected 'mlp' or 'identity'");
    cfg.model.identity_encoder = enc == "identity";
    cfg.model.feature_dim = static_cast<std::size_t>(kv.integer("model.feature_dim", 16));
    cfg.model.hidden_dim = static_cast<std::size_t>(kv.integer("model.hidden_dim", 0));
    cfg.model.proj_hidden = static_cast<std::size_t>(kv.integer("model.proj_hidden", 0));
    cfg.model.proj_dim = static_cast<std::size_t>(kv.integer("model.proj_dim", 0));
    cfg.model.cosine_scale = kv.real("model.cosine_scale", 10.0);
    if (cfg.model.cosine_scale <= 0.0)
        throw ConfigError("config: model.cosine_scale must be positive");

    cfg.aug.noise_std = kv.real("aug.noise_std", 0.1);
    cfg.aug.mask_rate = kv.real("aug.mask_rate", 0.1);
    if (cfg.aug.mask_rate < 0.0 || cfg.aug.mask_rate >= 1.0)
        throw ConfigError("config: aug.mask_rate must be in [0, 1)");

    cfg.flags.symmetrize_view_ce = kv.flag("flags.symmetrize_view_ce", false);
    cfg.flags.exclude_self_pairs = kv.flag("flags.exclude_self_pairs", false);

    kv.reject_unknown();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_run_config(buf.str());
}

// Canonical, complete key=value rendering; stable order.
inline std::string render_run_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "data.source=" << cfg.data_source << "\n";
    if (!cfg.train_path.empty()) os << "data.train_path=" << cfg.train_path << "\n";
    if (!cfg.test_path.empty()) os << "data.test_path=" << cfg.test_path << "\n";
    os << "synth.classes=" << cfg.synth.n_classes << "\n";
    os << "synth.dim=" << cfg.synth.dim << "\n";
    os << "synth.train_per_class=" << cfg.synth.train_per_class << "\n";
    os << "synth.test_per_class=" << cfg.synth.test_per_class << "\n";
    os << "synth.separation=" << cfg.synth.separation << "\n";
    os << "synth.within_std=" << cfg.synth.within_std << "\n";
    os << "synth.radius=" << cfg.synth.radius << "\n";
    os << "synth.seed=" << cfg.synth.seed << "\n";
    os << "protocol.base_classes=" << cfg.protocol.base_classes << "\n";
    os << "protocol.novel_per_session=";
    for (std::size_t i = 0; i < cfg.protocol.novel_per_session.size(); ++i)
        os << (i ? "," : "") << cfg.protocol.novel_per_session[i];
    os << "\n";
    os << "protocol.shuffle_classes=" << (cfg.protocol_shuffle ? 1 : 0) << "\n";
    os << "train.seed=" << cfg.train.seed << "\n";
    os << "train.epochs_base=" << cfg.train.epochs_base << "\n";
    os << "train.epochs_inc=" << cfg.train.epochs_inc << "\n";
    os << "train.batch_size=" << cfg.train.batch_size << "\n";
    os << "train.lr_base=" << cfg.train.lr_base << "\n";
    os << "train.lr_inc=" << cfg.train.lr_inc << "\n";
    os << "train.momentum=" << cfg.train.momentum << "\n";
    os << "train.lambda=" << cfg.train.lambda << "\n";
    os << "train.epsilon=" << cfg.train.epsilon << "\n";
    os << "train.omega=" << cfg.train.omega << "\n";
    os << "train.warmup_e=" << cfg.train.warmup_e << "\n";
    os << "train.n_p=" << cfg.train.n_p << "\n";
    os << "train.css_weight=" << cfg.train.css_weight << "\n";
    os << "train.freeze_all_but_last=" << (cfg.train.freeze_all_but_last ? 1 : 0) << "\n";
    os << "model.encoder=" << (cfg.model.identity_encoder ? "identity" : "mlp") << "\n";
    os << "model.feature_dim=" << cfg.model.feature_dim << "\n";
    os << "model.hidden_dim=" << cfg.model.hidden_dim << "\n";
    os << "model.proj_hidden=" << cfg.model.proj_hidden << "\n";
    os << "model.proj_dim=" << cfg.model.proj_dim << "\n";
    os << "model.cosine_scale=" << cfg.model.cosine_scale << "\n";
    os << "aug.noise_std=" << cfg.aug.noise_std << "\n";
    os << "aug.mask_rate=" << cfg.aug.mask_rate << "\n";
    os << "flags.symmetrize_view_ce=" << (cfg.flags.symmetrize_view_ce ? 1 : 0) << "\n";
    os << "flags.exclude_self_pairs=" << (cfg.flags.exclude_self_pairs ? 1 : 0) << "\n";
    return os.str();
}

// Synthetic-spec-only files for the synth subcommand.
inline SyntheticSpec parse_synth_spec(const std::string& text) {
    detail::KvReader kv(text);
    SyntheticSpec spec;
    spec.n_classes = static_cast<std::size_t>(kv.integer("synth.classes", 2));
    spec.dim = static_cast<std::size_t>(kv.integer("synth.dim", 2));
    spec.train_per_class = static_cast<std::size_t>(kv.integer("synth.train_per_class", 100));
    spec.test_per_class = static_cast<std::size_t>(kv.integer("synth.test_per_class", 20));
    spec.separation = kv.real("synth.separation", 4.0);
    spec.within_std = kv.real("synth.within_std", 1.0);
    spec.radius = kv.real("synth.radius", 0.0);
    spec.seed = static_cast<std::uint64_t>(kv.integer("synth.seed", 1));
    kv.reject_unknown();
    return spec;
}

// FNV-1a over the canonical config text; deterministic run identifier.
inline std::string run_id_for(const RunConfig& cfg) {
    const std::string text = render_run_config(cfg);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace fea
