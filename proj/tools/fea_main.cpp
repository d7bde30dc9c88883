// fea: command-line entry point.
//
//   fea run --config <path> --out <dir> [--seed N]
//   fea gradcheck [--tol X]
//   fea synth --spec <path> --out <file>
//   fea eval --log <path> --out <dir>
//
// Exit codes for run: 0 success, 2 config parse error, 3 data error,
// 4 numerical abort. gradcheck: 0 all pass, 1 failures.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fea/config.hpp"
#include "fea/engine.hpp"
#include "fea/gradsuite.hpp"
#include "fea/predlog.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<long long> seed_override) {
    fea::RunConfig cfg;
    try {
        cfg = fea::load_run_config(config_path);
        if (seed_override) {
            cfg.train.seed = static_cast<std::uint64_t>(*seed_override);
            cfg.synth.seed = static_cast<std::uint64_t>(*seed_override);
        }
    } catch (const fea::ConfigError& e) {
        std::cerr << "fea run: " << e.what() << "\n";
        return 2;
    }
    try {
        fea::Engine engine(cfg);
        fea::RunState st = engine.run_protocol(out_dir);
        const std::size_t t_final = st.ledger.a.size() - 1;
        std::printf("run complete: %zu sessions, avg accuracy %.2f%%",
                    st.ledger.a.size(), fea::avg_accuracy(st.ledger, t_final));
        if (t_final >= 1)
            std::printf(", F_%zu %.2f, D_%zu %.2f", t_final,
                        fea::avg_forgetting(st.ledger, t_final), t_final,
                        fea::avg_discovery(st.ledger, t_final));
        std::printf("\nartifacts in %s\n", out_dir.c_str());
        return 0;
    } catch (const fea::DataError& e) {
        std::cerr << "fea run: " << e.what() << "\n";
        return 3;
    } catch (const fea::NumericError& e) {
        std::cerr << "fea run: numerical abort: " << e.what() << "\n";
        return 4;
    }
}

int cmd_gradcheck(double tol) {
    fea::GradSuiteConfig cfg;
    cfg.rel_tol = tol;
    const auto reports = fea::run_loss_grad_suite(cfg);
    std::printf("%-10s %-14s %-14s %s\n", "loss", "max_rel_err", "max_abs_err", "status");
    bool all_passed = true;
    std::string failing;
    for (const auto& r : reports) {
        std::printf("%-10s %-14.3e %-14.3e %s%s%s\n", r.op_name.c_str(), r.max_rel_error,
                    r.max_abs_error, r.passed ? "pass" : "FAIL", r.note.empty() ? "" : "  ",
                    r.note.c_str());
        if (!r.passed) {
            all_passed = false;
            failing += (failing.empty() ? "" : ", ") + r.op_name;
        }
    }
    if (!all_passed) {
        std::fprintf(stderr, "gradcheck failed for: %s\n", failing.c_str());
        return 1;
    }
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_path) {
    fea::SyntheticSpec spec;
    try {
        std::ifstream is(spec_path);
        if (!is) throw fea::ConfigError("synth: cannot open spec " + spec_path);
        std::ostringstream buf;
        buf << is.rdbuf();
        spec = fea::parse_synth_spec(buf.str());
    } catch (const fea::ConfigError& e) {
        std::cerr << "fea synth: " << e.what() << "\n";
        return 2;
    }
    try {
        fea::SyntheticDataset data = fea::generate_synthetic(spec);
        fea::save_embeddings(data.train, out_path);
        const std::string test_path = out_path + ".test";
        fea::save_embeddings(data.test, test_path);
        std::printf("wrote %zu train rows to %s and %zu test rows to %s "
                    "(achieved separation %.2f)\n",
                    data.train.n(), out_path.c_str(), data.test.n(), test_path.c_str(),
                    data.achieved_separation);
        return 0;
    } catch (const fea::DataError& e) {
        std::cerr << "fea synth: " << e.what() << "\n";
        return 3;
    }
}

int cmd_eval(const std::string& log_path, const std::string& out_dir) {
    try {
        fea::PredLog log = fea::load_predlog(log_path);
        fea::PredLogMetrics metrics = fea::recompute_from_predlog(log);
        std::filesystem::create_directories(out_dir);
        const std::string doc =
            fea::render_metrics_document(metrics.ledger, "predlog-eval");
        {
            std::ofstream os(out_dir + "/metrics.txt", std::ios::binary);
            os << doc;
        }
        for (std::size_t t = 0; t < metrics.confusions.size(); ++t) {
            std::ofstream os(out_dir + "/confusion_s" + std::to_string(t) + ".csv",
                             std::ios::binary);
            os << fea::render_confusion_csv(metrics.confusions[t]);
        }
        std::fputs(doc.c_str(), stdout);
        return 0;
    } catch (const fea::DataError& e) {
        std::cerr << "fea eval: " << e.what() << "\n";
        return 3;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual novel class discovery engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir, spec_path, out_path, log_path;
    long long seed = -1;
    double tol = 1e-3;

    auto* run = app.add_subcommand("run", "train a full protocol and emit artifacts");
    run->add_option("--config", config_path, "run configuration file")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--seed", seed, "override train and synth seeds");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss");
    gradcheck->add_option("--tol", tol, "relative tolerance (default 1e-3)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic embedding dataset");
    synth->add_option("--spec", spec_path, "synthetic spec file")->required();
    synth->add_option("--out", out_path, "output embedding file")->required();

    auto* eval = app.add_subcommand("eval", "recompute metrics from a prediction log");
    eval->add_option("--log", log_path, "prediction log file")->required();
    eval->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(config_path, out_dir,
                           seed >= 0 ? std::optional<long long>(seed) : std::nullopt);
        if (gradcheck->parsed()) return cmd_gradcheck(tol);
        if (synth->parsed()) return cmd_synth(spec_path, out_path);
        if (eval->parsed()) return cmd_eval(log_path, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "fea: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
