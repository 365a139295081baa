#pragma once

#include "deepclust/cae.hpp"
#include "deepclust/data_io.hpp"
#include "deepclust/embedded.hpp"
#include "deepclust/ifl.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepclust {

/// Malformed experiment config; the message names the offending key.
/// The CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetSpec {
    std::string kind;  // "blobs" | "idx" | "usps"
    // blobs
    std::size_t classes = 3;
    std::size_t per_class = 100;
    std::size_t image_size = 16;
    real_t sigma = real_t{0.05};
    std::uint64_t blob_seed = 1;
    // idx
    std::string images_path;
    std::string labels_path;
    // usps
    std::string path;
};

struct ExperimentConfig {
    std::string pipeline;  // "pretrain" | "cae_mle" | "deep_ifl" | "metrics"
    std::string name;      // output subdirectory; defaults to the config stem
    std::vector<std::uint64_t> seeds = {0};
    DatasetSpec dataset;
    CaeConfig cae;  // input shape and seed are filled in per run
    MleConfig mle;
    std::size_t ifl_folds = 10;
    std::size_t ifl_round_epochs = 0;  // 0 -> half the cae budget
    std::string labels_csv;            // metrics pipeline input
    /// Flattened "section.key" -> raw value, echoed into results.json.
    std::map<std::string, std::string> echo;
};

/// Parses the documented sectioned key-value format. Unknown sections or
/// keys, unparsable values, and missing required fields all raise
/// ConfigError naming the location.
ExperimentConfig parse_config(const std::string& path);

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double acc_value = std::numeric_limits<double>::quiet_NaN();
    double nmi_value = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0;
    std::map<std::string, std::string> artifacts;  // kind -> on-disk path
};

struct RunSummary {
    ExperimentConfig config;
    std::string output_dir;
    std::vector<SeedOutcome> seeds;
    double acc_mean = std::numeric_limits<double>::quiet_NaN();
    double acc_std = std::numeric_limits<double>::quiet_NaN();
    double nmi_mean = std::numeric_limits<double>::quiet_NaN();
    double nmi_std = std::numeric_limits<double>::quiet_NaN();
    /// 0: all seeds succeeded; 2: at least one seed failed (the run
    /// continues through the remaining seeds).
    int exit_code = 0;
};

/// Precedence: explicit override, then $DEEPCLUST_OUTPUT_ROOT, then "runs".
std::string resolve_output_root(const std::string& override_root = "");

/// Executes the configured pipeline once per seed, writing results.json,
/// summary.csv, and per-seed artifacts under <output_root>/<config name>/.
RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& output_root);

/// The mean±std ACC/NMI table printed after a run.
std::string summary_table(const RunSummary& summary);

struct CompareReport {
    double acc_baseline, acc_candidate, acc_delta;  // delta = candidate - baseline
    double nmi_baseline, nmi_candidate, nmi_delta;
    std::string csv() const;
};

/// Reads two results.json files and reports per-metric mean deltas.
/// Throws ConfigError when the datasets or seed lists disagree.
CompareReport compare_results(const std::string& baseline_json, const std::string& candidate_json);

struct LabelPairs {
    std::vector<std::size_t> y;  // ground truth
    std::vector<std::size_t> c;  // predicted
};

/// Two-column CSV (y, c); a leading header line is skipped when present.
LabelPairs load_label_pairs_csv(const std::string& path);

/// Materializes the configured dataset (synthetic or from disk).
Dataset load_dataset(const DatasetSpec& spec);

}  // namespace deepclust
