#include "deepclust/experiment.hpp"

#include "deepclust/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <utility>

namespace deepclust {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- config file parsing -----------------------------------------------------

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

struct RawEntry {
    std::string value;
    int line = 0;
    bool used = false;
};

// One parsed config file: every "key = value" grouped by section, with the
// source line retained so errors can point at it.
class RawConfig {
public:
    explicit RawConfig(const std::string& path) : path_(path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config " + path + ": cannot open file");
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw ConfigError(where(lineno) + ": malformed section header '" + t + "'");
                section = trim(t.substr(1, t.size() - 2));
                if (section.empty()) throw ConfigError(where(lineno) + ": empty section name");
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(where(lineno) + ": expected 'key = value', got '" + t + "'");
            const std::string key = trim(t.substr(0, eq));
            const std::string value = trim(t.substr(eq + 1));
            if (key.empty()) throw ConfigError(where(lineno) + ": empty key");
            if (section.empty())
                throw ConfigError(where(lineno) + ": key '" + key + "' outside any [section]");
            if (!entries_[section].emplace(key, RawEntry{value, lineno}).second)
                throw ConfigError(where(lineno) + ": duplicate key '" + key + "' in [" + section + "]");
        }
    }

    const RawEntry* find(const std::string& section, const std::string& key) {
        auto sec = entries_.find(section);
        if (sec == entries_.end()) return nullptr;
        auto it = sec->second.find(key);
        if (it == sec->second.end()) return nullptr;
        it->second.used = true;
        return &it->second;
    }

    bool has_section(const std::string& section) const { return entries_.count(section) != 0; }

    // Every key must have been consumed by a known option.
    void reject_unknown(const std::vector<std::string>& known_sections) const {
        for (const auto& [section, keys] : entries_) {
            if (std::find(known_sections.begin(), known_sections.end(), section) ==
                known_sections.end()) {
                throw ConfigError("config " + path_ + ": unknown section [" + section + "]");
            }
            for (const auto& [key, entry] : keys)
                if (!entry.used)
                    throw ConfigError(where(entry.line) + ": unknown key '" + key + "' in [" +
                                      section + "]");
        }
    }

    std::map<std::string, std::string> flattened() const {
        std::map<std::string, std::string> flat;
        for (const auto& [section, keys] : entries_)
            for (const auto& [key, entry] : keys) flat[section + "." + key] = entry.value;
        return flat;
    }

    std::string where(int line) const { return "config " + path_ + ":" + std::to_string(line); }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::map<std::string, std::map<std::string, RawEntry>> entries_;
};

[[noreturn]] void bad_value(const RawConfig& raw, const RawEntry& e, const std::string& section,
                            const std::string& key, const char* expected) {
    throw ConfigError(raw.where(e.line) + ": key '" + key + "' in [" + section + "] expects " +
                      expected + ", got '" + e.value + "'");
}

std::uint64_t parse_u64(const RawConfig& raw, const RawEntry& e, const std::string& section,
                        const std::string& key) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(e.value, &pos);
        if (pos != e.value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        bad_value(raw, e, section, key, "a non-negative integer");
    }
}

double parse_real(const RawConfig& raw, const RawEntry& e, const std::string& section,
                  const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(e.value, &pos);
        if (pos != e.value.size() || !std::isfinite(v)) throw std::invalid_argument("");
        return v;
    } catch (...) {
        bad_value(raw, e, section, key, "a finite number");
    }
}

bool parse_bool(const RawConfig& raw, const RawEntry& e, const std::string& section,
                const std::string& key) {
    std::string v = e.value;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    bad_value(raw, e, section, key, "a boolean (true/false)");
}

// Typed getters: fetch-or-default with error messages naming the key.
struct Options {
    RawConfig& raw;

    std::size_t size(const std::string& sec, const std::string& key, std::size_t def) {
        const RawEntry* e = raw.find(sec, key);
        return e ? std::size_t(parse_u64(raw, *e, sec, key)) : def;
    }
    std::uint64_t u64(const std::string& sec, const std::string& key, std::uint64_t def) {
        const RawEntry* e = raw.find(sec, key);
        return e ? parse_u64(raw, *e, sec, key) : def;
    }
    double real(const std::string& sec, const std::string& key, double def) {
        const RawEntry* e = raw.find(sec, key);
        return e ? parse_real(raw, *e, sec, key) : def;
    }
    bool boolean(const std::string& sec, const std::string& key, bool def) {
        const RawEntry* e = raw.find(sec, key);
        return e ? parse_bool(raw, *e, sec, key) : def;
    }
    std::string str(const std::string& sec, const std::string& key, const std::string& def) {
        const RawEntry* e = raw.find(sec, key);
        return e ? e->value : def;
    }
    std::string required(const std::string& sec, const std::string& key) {
        const RawEntry* e = raw.find(sec, key);
        if (!e || e->value.empty())
            throw ConfigError("config " + raw.path() + ": missing required key '" + key +
                              "' in [" + sec + "]");
        return e->value;
    }
};

std::vector<std::uint64_t> parse_seed_list(const RawConfig& raw, const RawEntry& e,
                                           const std::string& sec, const std::string& key) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (t.empty()) bad_value(raw, e, sec, key, "a comma-separated seed list");
        try {
            std::size_t pos = 0;
            seeds.push_back(std::stoull(t, &pos));
            if (pos != t.size()) throw std::invalid_argument("");
        } catch (...) {
            bad_value(raw, e, sec, key, "a comma-separated seed list");
        }
    }
    if (seeds.empty()) bad_value(raw, e, sec, key, "a non-empty seed list");
    return seeds;
}

// "32x5x2,64x5x2,128x3x2" -> {filters, kernel, stride} triples.
std::vector<ConvStage> parse_stack(const RawConfig& raw, const RawEntry& e, const std::string& sec,
                                   const std::string& key) {
    std::vector<ConvStage> stack;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::array<std::size_t, 3> parts{};
        std::stringstream ps(trim(item));
        std::string cell;
        std::size_t k = 0;
        while (std::getline(ps, cell, 'x')) {
            if (k >= 3) bad_value(raw, e, sec, key, "stages of the form FILTERSxKERNELxSTRIDE");
            try {
                std::size_t pos = 0;
                parts[k] = std::stoull(trim(cell), &pos);
                if (pos != trim(cell).size() || parts[k] == 0) throw std::invalid_argument("");
            } catch (...) {
                bad_value(raw, e, sec, key, "stages of the form FILTERSxKERNELxSTRIDE");
            }
            ++k;
        }
        if (k != 3) bad_value(raw, e, sec, key, "stages of the form FILTERSxKERNELxSTRIDE");
        stack.push_back({parts[0], parts[1], parts[2]});
    }
    if (stack.empty()) bad_value(raw, e, sec, key, "a non-empty conv stack");
    return stack;
}

// --- artifact writers ---------------------------------------------------------

void write_labels_csv(const std::string& path, const std::vector<std::size_t>& labels,
                      const std::vector<std::size_t>* truth) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write labels csv " + path);
    f << (truth ? "instance_id,label,truth\n" : "instance_id,label\n");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        f << i << ',' << labels[i];
        if (truth) f << ',' << (*truth)[i];
        f << '\n';
    }
}

void write_centroids_csv(const std::string& path, const Tensor& mu) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write centroids csv " + path);
    const std::size_t s = mu.extent(0), d = mu.extent(1);
    f << "cluster_id";
    for (std::size_t k = 1; k <= d; ++k) f << ",c_" << k;
    f << '\n' << std::setprecision(17);
    for (std::size_t j = 0; j < s; ++j) {
        f << j;
        for (std::size_t k = 0; k < d; ++k) f << ',' << mu[j * d + k];
        f << '\n';
    }
}

void write_pretrain_csv(const std::string& path, const std::vector<real_t>& history) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write pretrain csv " + path);
    f << "epoch,l_r\n" << std::setprecision(17);
    for (std::size_t e = 0; e < history.size(); ++e) f << (e + 1) << ',' << history[e] << '\n';
}

json outcome_to_json(const SeedOutcome& o) {
    json j;
    j["seed"] = o.seed;
    j["ok"] = o.ok;
    j["error"] = o.ok ? json() : json(o.error);
    j["acc"] = o.acc_value;  // non-finite serializes as null
    j["nmi"] = o.nmi_value;
    j["wall_seconds"] = o.wall_seconds;
    j["artifacts"] = o.artifacts;
    return j;
}

double json_metric(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j[key].get<double>();
}

struct Moments {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stddev = std::numeric_limits<double>::quiet_NaN();
};

Moments aggregate(const std::vector<SeedOutcome>& seeds, double SeedOutcome::*field) {
    std::vector<double> vals;
    for (const auto& s : seeds)
        if (s.ok && std::isfinite(s.*field)) vals.push_back(s.*field);
    if (vals.empty()) return {};
    double sum = 0;
    for (double v : vals) sum += v;
    const double mean = sum / double(vals.size());
    double ss = 0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / double(vals.size()))};
}

std::string format_metric(double v) {
    if (!std::isfinite(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// --- per-seed pipeline execution ----------------------------------------------

struct SeedContext {
    const ExperimentConfig& cfg;
    const Dataset& data;
    std::uint64_t seed;
    fs::path dir;

    std::string file(const std::string& stem) const {
        return (dir / (stem + "_seed" + std::to_string(seed))).string();
    }
};

CaeConfig seeded_cae(const SeedContext& ctx) {
    CaeConfig cae = ctx.cfg.cae;
    cae.channels = ctx.data.images.extent(1);
    cae.height = ctx.data.images.extent(2);
    cae.width = ctx.data.images.extent(3);
    cae.seed = ctx.seed;
    return cae;
}

void score(SeedOutcome& out, const SeedContext& ctx, const std::vector<std::size_t>& labels) {
    if (!ctx.data.has_labels) return;
    out.acc_value = acc(ctx.data.labels, labels);
    out.nmi_value = nmi(ctx.data.labels, labels);
}

void run_pretrain_seed(SeedOutcome& out, const SeedContext& ctx) {
    CaeModel model = build_cae(seeded_cae(ctx));
    pretrain(model, ctx.data.images);
    const std::string stem = ctx.file("cae");
    save_cae(stem, model);
    out.artifacts["checkpoint_manifest"] = stem + ".json";
    out.artifacts["checkpoint_blob"] = stem + ".bin";
    const std::string hist = ctx.file("pretrain") + ".csv";
    write_pretrain_csv(hist, model.pretrain_history);
    out.artifacts["pretrain_history"] = hist;
}

void run_cae_mle_seed(SeedOutcome& out, const SeedContext& ctx) {
    CaeModel model = build_cae(seeded_cae(ctx));
    pretrain(model, ctx.data.images);
    MleConfig mle = ctx.cfg.mle;
    mle.seed = ctx.seed;
    const MleResult result = train_cae_mle(model, ctx.data.images, mle);

    const std::string stem = ctx.file("cae");
    save_cae(stem, model);
    out.artifacts["checkpoint_manifest"] = stem + ".json";
    out.artifacts["checkpoint_blob"] = stem + ".bin";
    const std::string pre = ctx.file("pretrain") + ".csv";
    write_pretrain_csv(pre, model.pretrain_history);
    out.artifacts["pretrain_history"] = pre;
    const std::string hist = ctx.file("history") + ".csv";
    export_history_csv(result.history, hist);
    out.artifacts["history"] = hist;
    const std::string labels = ctx.file("labels") + ".csv";
    write_labels_csv(labels, result.labels, ctx.data.has_labels ? &ctx.data.labels : nullptr);
    out.artifacts["labels"] = labels;
    const std::string centroids = ctx.file("centroids") + ".csv";
    write_centroids_csv(centroids, result.centroids);
    out.artifacts["centroids"] = centroids;

    score(out, ctx, result.labels);
}

void run_deep_ifl_seed(SeedOutcome& out, const SeedContext& ctx) {
    IflConfig ifl;
    ifl.folds = ctx.cfg.ifl_folds;
    ifl.round_epochs = ctx.cfg.ifl_round_epochs;
    ifl.cae = seeded_cae(ctx);
    ifl.mle = ctx.cfg.mle;
    ifl.seed = ctx.seed;
    const IflResult result = deep_ifl(ctx.data.images, ifl);

    const std::string stem = ctx.file("cae");
    save_cae(stem, result.final_model);
    out.artifacts["checkpoint_manifest"] = stem + ".json";
    out.artifacts["checkpoint_blob"] = stem + ".bin";
    const std::string feats = ctx.file("features") + ".csv";
    export_feature_csv(result, feats);
    out.artifacts["features"] = feats;
    const std::string hist = ctx.file("history") + ".csv";
    export_history_csv(result.final_stage.history, hist);
    out.artifacts["history"] = hist;
    const std::string labels = ctx.file("labels") + ".csv";
    write_labels_csv(labels, result.labels, ctx.data.has_labels ? &ctx.data.labels : nullptr);
    out.artifacts["labels"] = labels;
    const std::string centroids = ctx.file("centroids") + ".csv";
    write_centroids_csv(centroids, result.final_stage.centroids);
    out.artifacts["centroids"] = centroids;

    score(out, ctx, result.labels);
}

}  // namespace

ExperimentConfig parse_config(const std::string& path) {
    RawConfig raw(path);
    Options opt{raw};
    ExperimentConfig cfg;
    cfg.echo = raw.flattened();

    cfg.pipeline = opt.required("pipeline", "kind");
    if (cfg.pipeline != "pretrain" && cfg.pipeline != "cae_mle" && cfg.pipeline != "deep_ifl" &&
        cfg.pipeline != "metrics")
        throw ConfigError("config " + path + ": key 'kind' in [pipeline] must be one of "
                          "pretrain|cae_mle|deep_ifl|metrics, got '" + cfg.pipeline + "'");

    cfg.name = opt.str("run", "name", fs::path(path).stem().string());
    if (const RawEntry* e = raw.find("run", "seeds"))
        cfg.seeds = parse_seed_list(raw, *e, "run", "seeds");

    if (cfg.pipeline == "metrics") {
        cfg.labels_csv = opt.required("metrics", "labels");
    } else {
        cfg.dataset.kind = opt.required("dataset", "kind");
        if (cfg.dataset.kind == "blobs") {
            cfg.dataset.classes = opt.size("dataset", "classes", cfg.dataset.classes);
            cfg.dataset.per_class = opt.size("dataset", "per_class", cfg.dataset.per_class);
            cfg.dataset.image_size = opt.size("dataset", "image_size", cfg.dataset.image_size);
            cfg.dataset.sigma = real_t(opt.real("dataset", "sigma", double(cfg.dataset.sigma)));
            cfg.dataset.blob_seed = opt.u64("dataset", "blob_seed", cfg.dataset.blob_seed);
            if (cfg.dataset.classes == 0 || cfg.dataset.per_class == 0 || cfg.dataset.image_size == 0)
                throw ConfigError("config " + path + ": blobs dataset sizes must be positive");
            if (cfg.dataset.sigma < 0)
                throw ConfigError("config " + path + ": key 'sigma' in [dataset] must be >= 0");
        } else if (cfg.dataset.kind == "idx") {
            cfg.dataset.images_path = opt.required("dataset", "images");
            cfg.dataset.labels_path = opt.str("dataset", "labels", "");
        } else if (cfg.dataset.kind == "usps") {
            cfg.dataset.path = opt.required("dataset", "path");
        } else {
            throw ConfigError("config " + path + ": key 'kind' in [dataset] must be one of "
                              "blobs|idx|usps, got '" + cfg.dataset.kind + "'");
        }

        cfg.cae.embedding_dim = opt.size("cae", "embedding_dim", cfg.cae.embedding_dim);
        if (const RawEntry* e = raw.find("cae", "stack"))
            cfg.cae.stack = parse_stack(raw, *e, "cae", "stack");
        cfg.cae.epochs = opt.size("cae", "epochs", cfg.cae.epochs);
        cfg.cae.batch_size = opt.size("cae", "batch_size", cfg.cae.batch_size);
        cfg.cae.optimizer = opt.str("cae", "optimizer", cfg.cae.optimizer);
        cfg.cae.learning_rate = real_t(opt.real("cae", "learning_rate", double(cfg.cae.learning_rate)));
        if (cfg.cae.embedding_dim == 0)
            throw ConfigError("config " + path + ": key 'embedding_dim' in [cae] must be >= 1");
        if (cfg.cae.batch_size == 0)
            throw ConfigError("config " + path + ": key 'batch_size' in [cae] must be >= 1");
        if (cfg.cae.learning_rate <= 0)
            throw ConfigError("config " + path + ": key 'learning_rate' in [cae] must be > 0");
        if (cfg.cae.optimizer != "adam" && cfg.cae.optimizer != "sgd")
            throw ConfigError("config " + path + ": key 'optimizer' in [cae] must be adam|sgd");

        cfg.mle.clusters = opt.size("cluster", "s", cfg.mle.clusters);
        cfg.mle.gamma = real_t(opt.real("cluster", "gamma", double(cfg.mle.gamma)));
        cfg.mle.update_interval = opt.size("cluster", "update_interval", cfg.mle.update_interval);
        cfg.mle.tol = real_t(opt.real("cluster", "tol", double(cfg.mle.tol)));
        cfg.mle.max_iterations = opt.size("cluster", "max_iterations", cfg.mle.max_iterations);
        cfg.mle.batch_size = opt.size("cluster", "batch_size", cfg.mle.batch_size);
        cfg.mle.optimizer = opt.str("cluster", "optimizer", cfg.mle.optimizer);
        cfg.mle.learning_rate =
            real_t(opt.real("cluster", "learning_rate", double(cfg.mle.learning_rate)));
        cfg.mle.kmeans_init = opt.boolean("cluster", "kmeans_init", cfg.mle.kmeans_init);
        cfg.mle.ac_refresh = opt.boolean("cluster", "ac_refresh", cfg.mle.ac_refresh);
        cfg.mle.ac_refresh_period =
            opt.size("cluster", "ac_refresh_period", cfg.mle.ac_refresh_period);
        cfg.mle.agg_subsample = opt.size("cluster", "agg_subsample", cfg.mle.agg_subsample);
        if (cfg.mle.clusters == 0)
            throw ConfigError("config " + path + ": key 's' in [cluster] must be >= 1");
        if (cfg.mle.gamma < 0)
            throw ConfigError("config " + path + ": key 'gamma' in [cluster] must be >= 0");
        if (cfg.mle.update_interval == 0)
            throw ConfigError("config " + path + ": key 'update_interval' in [cluster] must be >= 1");
        if (cfg.mle.tol < 0 || cfg.mle.tol > 1)
            throw ConfigError("config " + path + ": key 'tol' in [cluster] must lie in [0, 1]");
        if (cfg.mle.batch_size == 0)
            throw ConfigError("config " + path + ": key 'batch_size' in [cluster] must be >= 1");
        if (cfg.mle.learning_rate <= 0)
            throw ConfigError("config " + path + ": key 'learning_rate' in [cluster] must be > 0");
        if (cfg.mle.optimizer != "adam" && cfg.mle.optimizer != "sgd")
            throw ConfigError("config " + path + ": key 'optimizer' in [cluster] must be adam|sgd");
        if (cfg.mle.ac_refresh_period == 0)
            throw ConfigError("config " + path +
                              ": key 'ac_refresh_period' in [cluster] must be >= 1");

        cfg.ifl_folds = opt.size("ifl", "folds", cfg.ifl_folds);
        cfg.ifl_round_epochs = opt.size("ifl", "round_epochs", cfg.ifl_round_epochs);
        if (cfg.pipeline == "deep_ifl" && cfg.ifl_folds < 2)
            throw ConfigError("config " + path + ": key 'folds' in [ifl] must be >= 2");
    }

    raw.reject_unknown({"pipeline", "run", "dataset", "cae", "cluster", "ifl", "metrics"});
    return cfg;
}

Dataset load_dataset(const DatasetSpec& spec) {
    if (spec.kind == "blobs")
        return make_synthetic_blobs(spec.classes, spec.per_class, spec.image_size, spec.sigma,
                                    spec.blob_seed);
    if (spec.kind == "idx") return load_idx(spec.images_path, spec.labels_path);
    if (spec.kind == "usps") return load_usps(spec.path);
    throw ConfigError("dataset kind '" + spec.kind + "' is not one of blobs|idx|usps");
}

std::string resolve_output_root(const std::string& override_root) {
    if (!override_root.empty()) return override_root;
    if (const char* env = std::getenv("DEEPCLUST_OUTPUT_ROOT"); env && *env) return env;
    return "runs";
}

RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& output_root) {
    RunSummary summary;
    summary.config = cfg;
    const fs::path dir = fs::path(output_root) / cfg.name;
    fs::create_directories(dir);
    summary.output_dir = dir.string();

    Dataset data;
    if (cfg.pipeline == "metrics") {
        SeedOutcome out;
        out.seed = 0;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const LabelPairs pairs = load_label_pairs_csv(cfg.labels_csv);
            out.acc_value = acc(pairs.y, pairs.c);
            out.nmi_value = nmi(pairs.y, pairs.c);
            out.ok = true;
        } catch (const std::exception& e) {
            out.error = e.what();
            summary.exit_code = 2;
        }
        out.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        summary.seeds.push_back(std::move(out));
    } else {
        try {
            data = load_dataset(cfg.dataset);
        } catch (const std::exception& e) {
            // An unloadable dataset is a config problem, not a seed failure.
            throw ConfigError(std::string("dataset: ") + e.what());
        }
        for (const std::uint64_t seed : cfg.seeds) {
            SeedOutcome out;
            out.seed = seed;
            const SeedContext ctx{cfg, data, seed, dir};
            const auto t0 = std::chrono::steady_clock::now();
            try {
                if (cfg.pipeline == "pretrain") run_pretrain_seed(out, ctx);
                else if (cfg.pipeline == "cae_mle") run_cae_mle_seed(out, ctx);
                else run_deep_ifl_seed(out, ctx);
                out.ok = true;
            } catch (const std::exception& e) {
                out.error = e.what();
                summary.exit_code = 2;
            }
            out.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            summary.seeds.push_back(std::move(out));
        }
    }

    const Moments am = aggregate(summary.seeds, &SeedOutcome::acc_value);
    const Moments nm = aggregate(summary.seeds, &SeedOutcome::nmi_value);
    summary.acc_mean = am.mean;
    summary.acc_std = am.stddev;
    summary.nmi_mean = nm.mean;
    summary.nmi_std = nm.stddev;

    json j;
    j["format"] = "deepclust-results";
    j["version"] = 1;
    j["pipeline"] = cfg.pipeline;
    j["name"] = cfg.name;
    j["config"] = cfg.echo;
    if (cfg.pipeline != "metrics") {
        j["dataset"] = {{"kind", cfg.dataset.kind},
                        {"name", data.name},
                        {"instances", data.images.extent(0)},
                        {"labeled", data.has_labels}};
    }
    j["seeds"] = json::array();
    for (const auto& s : summary.seeds) j["seeds"].push_back(outcome_to_json(s));
    std::size_t ok_count = 0;
    for (const auto& s : summary.seeds) ok_count += s.ok ? 1 : 0;
    j["aggregate"] = {{"acc_mean", summary.acc_mean}, {"acc_std", summary.acc_std},
                      {"nmi_mean", summary.nmi_mean}, {"nmi_std", summary.nmi_std},
                      {"seeds_ok", ok_count},         {"seeds_total", summary.seeds.size()}};

    std::ofstream results(dir / "results.json");
    if (!results) throw std::runtime_error("cannot write " + (dir / "results.json").string());
    results << j.dump(2) << '\n';

    std::ofstream csv(dir / "summary.csv");
    if (!csv) throw std::runtime_error("cannot write " + (dir / "summary.csv").string());
    csv << "seed,ok,acc,nmi,wall_seconds\n" << std::setprecision(17);
    for (const auto& s : summary.seeds) {
        csv << s.seed << ',' << (s.ok ? 1 : 0) << ',';
        if (std::isfinite(s.acc_value)) csv << s.acc_value;
        csv << ',';
        if (std::isfinite(s.nmi_value)) csv << s.nmi_value;
        csv << ',' << s.wall_seconds << '\n';
    }
    return summary;
}

std::string summary_table(const RunSummary& summary) {
    std::size_t ok_count = 0;
    for (const auto& s : summary.seeds) ok_count += s.ok ? 1 : 0;
    std::ostringstream out;
    out << "pipeline: " << summary.config.pipeline << "  seeds ok: " << ok_count << "/"
        << summary.seeds.size() << "\n";
    out << "metric  mean      std\n";
    out << "ACC     " << format_metric(summary.acc_mean) << "  " << format_metric(summary.acc_std)
        << "\n";
    out << "NMI     " << format_metric(summary.nmi_mean) << "  " << format_metric(summary.nmi_std)
        << "\n";
    return out.str();
}

std::string CompareReport::csv() const {
    char buf[256];
    std::string out = "metric,baseline,candidate,delta\n";
    std::snprintf(buf, sizeof buf, "acc,%.6f,%.6f,%+.6f\n", acc_baseline, acc_candidate, acc_delta);
    out += buf;
    std::snprintf(buf, sizeof buf, "nmi,%.6f,%.6f,%+.6f\n", nmi_baseline, nmi_candidate, nmi_delta);
    out += buf;
    return out;
}

namespace {

json load_results_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("results file " + path + ": cannot open");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("results file " + path + ": " + e.what());
    }
    if (j.value("format", "") != "deepclust-results")
        throw ConfigError("results file " + path + ": not a deepclust results file");
    return j;
}

std::vector<std::uint64_t> seed_list(const json& j) {
    std::vector<std::uint64_t> seeds;
    for (const auto& s : j.at("seeds")) seeds.push_back(s.at("seed").get<std::uint64_t>());
    return seeds;
}

}  // namespace

CompareReport compare_results(const std::string& baseline_json, const std::string& candidate_json) {
    const json a = load_results_json(baseline_json);
    const json b = load_results_json(candidate_json);
    if (a.value("dataset", json()) != b.value("dataset", json()))
        throw ConfigError("compare: datasets disagree between " + baseline_json + " and " +
                          candidate_json);
    if (seed_list(a) != seed_list(b))
        throw ConfigError("compare: seed lists disagree between " + baseline_json + " and " +
                          candidate_json);

    CompareReport report{};
    report.acc_baseline = json_metric(a.at("aggregate"), "acc_mean");
    report.acc_candidate = json_metric(b.at("aggregate"), "acc_mean");
    report.acc_delta = report.acc_candidate - report.acc_baseline;
    report.nmi_baseline = json_metric(a.at("aggregate"), "nmi_mean");
    report.nmi_candidate = json_metric(b.at("aggregate"), "nmi_mean");
    report.nmi_delta = report.nmi_candidate - report.nmi_baseline;
    return report;
}

LabelPairs load_label_pairs_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("labels csv " + path + ": cannot open");
    LabelPairs pairs;
    std::string line;
    int lineno = 0;
    bool artifact_format = false;  // labels_seedN.csv written by `run`
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (lineno == 1) {
            std::string squeezed;
            for (char ch : t)
                if (ch != ' ' && ch != '\t') squeezed.push_back(ch);
            if (squeezed == "instance_id,label,truth") {
                artifact_format = true;
                continue;
            }
        }
        std::stringstream ss(t);
        std::string ys, cs;
        if (artifact_format) {
            std::string id;
            if (!std::getline(ss, id, ',') || !std::getline(ss, cs, ',') ||
                !std::getline(ss, ys, ',')) {
                throw std::runtime_error("labels csv " + path + ":" + std::to_string(lineno) +
                                         ": expected id,label,truth columns");
            }
        } else if (!std::getline(ss, ys, ',') || !std::getline(ss, cs, ',')) {
            throw std::runtime_error("labels csv " + path + ":" + std::to_string(lineno) +
                                     ": expected two comma-separated columns");
        }
        std::string rest;
        if (std::getline(ss, rest, ','))
            throw std::runtime_error("labels csv " + path + ":" + std::to_string(lineno) +
                                     ": expected exactly " + (artifact_format ? "three" : "two") +
                                     " columns");
        try {
            std::size_t py = 0, pc = 0;
            const unsigned long long y = std::stoull(trim(ys), &py);
            const unsigned long long c = std::stoull(trim(cs), &pc);
            if (py != trim(ys).size() || pc != trim(cs).size()) throw std::invalid_argument("");
            pairs.y.push_back(y);
            pairs.c.push_back(c);
        } catch (...) {
            if (lineno == 1) continue;  // header line
            throw std::runtime_error("labels csv " + path + ":" + std::to_string(lineno) +
                                     ": expected non-negative integer labels");
        }
    }
    if (pairs.y.empty()) throw std::runtime_error("labels csv " + path + ": no label rows");
    return pairs;
}

}  // namespace deepclust
