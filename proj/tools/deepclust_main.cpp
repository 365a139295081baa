#include "deepclust/experiment.hpp"
#include "deepclust/metrics.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"deepclust: deep embedded clustering experiments"};
    app.require_subcommand(1);

    std::string output_root;
    app.add_option("--output-root", output_root,
                   "artifact root (default: $DEEPCLUST_OUTPUT_ROOT, else ./runs)");

    std::string config_path;
    CLI::App* run = app.add_subcommand("run", "execute an experiment config");
    run->fallthrough();  // accept --output-root after the subcommand too
    run->add_option("config", config_path, "experiment config file")->required();

    std::string baseline_path, candidate_path;
    CLI::App* compare = app.add_subcommand("compare", "per-metric mean deltas of two runs");
    compare->add_option("baseline", baseline_path, "baseline results.json")->required();
    compare->add_option("candidate", candidate_path, "candidate results.json")->required();

    std::string labels_path;
    CLI::App* metrics = app.add_subcommand("metrics", "ACC/NMI of a two-column (y, c) CSV");
    metrics->add_option("labels", labels_path,
                        "labels csv: truth,predicted rows, or a labels_seedN.csv from `run`")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const deepclust::ExperimentConfig cfg = deepclust::parse_config(config_path);
            const deepclust::RunSummary summary =
                deepclust::run_experiment(cfg, deepclust::resolve_output_root(output_root));
            std::printf("%s", deepclust::summary_table(summary).c_str());
            std::printf("results: %s/results.json\n", summary.output_dir.c_str());
            for (const auto& seed : summary.seeds)
                if (!seed.ok)
                    std::fprintf(stderr, "seed %llu failed: %s\n",
                                 static_cast<unsigned long long>(seed.seed), seed.error.c_str());
            return summary.exit_code;
        }
        if (compare->parsed()) {
            const deepclust::CompareReport report =
                deepclust::compare_results(baseline_path, candidate_path);
            std::printf("%s", report.csv().c_str());
            return 0;
        }
        const deepclust::LabelPairs pairs = deepclust::load_label_pairs_csv(labels_path);
        std::printf("ACC %.6f\n", deepclust::acc(pairs.y, pairs.c));
        std::printf("NMI %.6f\n", deepclust::nmi(pairs.y, pairs.c));
        return 0;
    } catch (const deepclust::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
