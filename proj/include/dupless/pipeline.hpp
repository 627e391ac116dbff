#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dupless/digest.hpp"
#include "dupless/embedding.hpp"
#include "dupless/errors.hpp"
#include "dupless/evaluation.hpp"
#include "dupless/image.hpp"
#include "dupless/image_io.hpp"
#include "dupless/manifest.hpp"
#include "dupless/nnet.hpp"
#include "dupless/parallel.hpp"
#include "dupless/pretext.hpp"
#include "dupless/rng.hpp"
#include "dupless/svm.hpp"
#include "dupless/synthgen.hpp"
#include "dupless/tsne.hpp"

namespace dupless {

inline constexpr const char* kVersion = "0.1.0";

// ------------------------------------------------------------ stage output
//
// Every stage writes into `<dir>.partial` and renames it over the final
// directory at the end, so a crashed stage never leaves a plausible-looking
// half-written output behind.

class StageDir {
public:
    explicit StageDir(std::filesystem::path final_dir)
        : final_(std::move(final_dir)), work_(final_.string() + ".partial") {
        std::filesystem::remove_all(work_);
        std::filesystem::create_directories(work_);
    }

    const std::filesystem::path& work() const { return work_; }
    std::filesystem::path file(const std::string& name) const { return work_ / name; }

    void promote() {
        std::filesystem::remove_all(final_);
        std::filesystem::create_directories(final_.parent_path());
        std::filesystem::rename(work_, final_);
        promoted_ = true;
    }

    ~StageDir() {
        if (!promoted_) {
            std::error_code ec;
            std::filesystem::remove_all(work_, ec);
        }
    }

private:
    std::filesystem::path final_;
    std::filesystem::path work_;
    bool promoted_ = false;
};

/// Digest of every regular file under a directory, combined in sorted
/// relative-path order.
inline std::string digest_tree(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::vector<std::string> lines;
    lines.reserve(files.size());
    for (const auto& f : files)
        lines.push_back(f.lexically_relative(dir).generic_string() + ":" + digest_file(f));
    std::sort(lines.begin(), lines.end());
    std::uint64_t h = kFnvOffset;
    for (const auto& line : lines) {
        h = fnv1a64(line.data(), line.size(), h);
        h = fnv1a64("\n", 1, h);
    }
    return to_hex(h);
}

/// Provenance record for one stage: config echo plus input/output digests.
/// Deliberately carries no timestamps so reruns are byte-identical.
class RunRecord {
public:
    explicit RunRecord(const std::string& stage) {
        j_["stage"] = stage;
        j_["version"] = kVersion;
        j_["inputs"] = nlohmann::json::object();
        j_["outputs"] = nlohmann::json::object();
    }

    void config(const nlohmann::json& cfg) { j_["config"] = cfg; }
    void note(const std::string& key, const nlohmann::json& value) { j_[key] = value; }

    void input_file(const std::string& name, const std::filesystem::path& p) {
        j_["inputs"][name] = {{"path", p.generic_string()}, {"fnv1a64", digest_file(p)}};
    }
    void input_tree(const std::string& name, const std::filesystem::path& p) {
        j_["inputs"][name] = {{"path", p.generic_string()}, {"fnv1a64", digest_tree(p)}};
    }
    void output_file(const std::string& name, const std::filesystem::path& p) {
        j_["outputs"][name] = {{"path", p.filename().generic_string()}, {"fnv1a64", digest_file(p)}};
    }
    void output_tree(const std::string& name, const std::filesystem::path& p) {
        j_["outputs"][name] = {{"path", p.filename().generic_string()}, {"fnv1a64", digest_tree(p)}};
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open for writing: " + path.string());
        out << j_.dump(2) << "\n";
    }

private:
    nlohmann::json j_;
};

inline std::string fraction_tag(double fraction) {
    return std::to_string(static_cast<long>(std::llround(fraction * 100.0)));
}

// ------------------------------------------------------------- run config

/// Flat configuration for `run-all` (and the defaults behind the per-stage
/// subcommands). Parsed from `key=value` lines; CLI flags override file
/// values, which override defaults.
struct RunConfig {
    std::filesystem::path out_dir = "out";
    std::filesystem::path dataset_dir;  // empty: synthesize under out_dir/dataset
    SynthConfig synth;
    std::size_t patch_side = 128;
    std::vector<double> fractions = {0.10, 0.15};
    double pretext_val_fraction = 0.25;
    std::vector<std::size_t> block_channels = {8, 16, 32, 64};
    TrainConfig train{16, 0.0001, 60, OptimizerKind::Adam, 0};
    SvmConfig patch_svm{10.0, {KernelKind::Rbf, 0.001}, 1e-3, 10000};
    SvmConfig slice_svm{10.0, {KernelKind::Linear, 0.001}, 1e-3, 10000};
    TsneConfig tsne;
    double holdout_fraction = 0.75;
    std::size_t folds = 4;
    bool standardize = false;
    std::uint64_t seed = 0;
    int threads = 1;
    std::filesystem::path import_path;  // optional EMB1/CSV for the imported arm
    std::string import_tag = "imported";
    bool write_svg = true;

    void validate() const {
        synth.validate();
        train.validate();
        patch_svm.validate();
        slice_svm.validate();
        tsne.validate();
        if (fractions.empty()) throw UsageError("at least one pretext fraction is required");
        for (double f : fractions)
            PretextSampling{f, 0}.validate();
        if (!(pretext_val_fraction >= 0.0) || pretext_val_fraction >= 1.0)
            throw UsageError("pretext_val_fraction must be in [0,1)");
        if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0))
            throw UsageError("holdout_fraction must be in (0,1)");
        if (folds < 2) throw UsageError("folds must be >= 2");
        if (threads < 0) throw UsageError("threads must be >= 0");
        if (patch_side % 2 != 0 || patch_side < 4) throw UsageError("patch_side must be even and >= 4");
    }

    NetworkSpec network_spec() const {
        return NetworkSpec{patch_side, block_channels, static_cast<std::size_t>(kNumDuplicationClasses)};
    }
};

namespace detail {

inline std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::string cur;
    for (char ch : s + ",") {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(parse_double(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    for (double v : parse_double_list(s)) {
        if (v < 0 || v != std::floor(v)) throw UsageError("expected non-negative integers: " + s);
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw UsageError("expected a boolean, got '" + s + "'");
}

}  // namespace detail

namespace detail {

/// Settings are user input, so malformed numbers are usage errors even though
/// the shared parsers classify them as data errors.
template <typename Fn>
inline auto as_usage(const std::string& key, const std::string& value, Fn fn) {
    try {
        return fn();
    } catch (const DataError&) {
        throw UsageError("bad value for " + key + ": '" + value + "'");
    }
}

}  // namespace detail

/// Applies one `key=value` setting. Unknown keys fail fast, before any work.
inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto num = [&] { return detail::as_usage(key, value, [&] { return parse_double(value); }); };
    const auto lng = [&] { return detail::as_usage(key, value, [&] { return parse_long(value); }); };
    const auto u64 = [&] { return static_cast<std::uint64_t>(lng()); };
    const auto sz = [&] {
        const long v = lng();
        if (v < 0) throw UsageError("expected a non-negative integer, got '" + value + "'");
        return static_cast<std::size_t>(v);
    };

    if (key == "out") cfg.out_dir = value;
    else if (key == "dataset") cfg.dataset_dir = value;
    else if (key == "seed") cfg.seed = u64();
    else if (key == "threads") cfg.threads = static_cast<int>(lng());
    else if (key == "patch_side") { cfg.patch_side = sz(); cfg.synth.patch_side = cfg.patch_side; }
    else if (key == "slices_per_class") cfg.synth.slices_per_class = sz();
    else if (key == "slice_width") cfg.synth.slice_width = sz();
    else if (key == "slice_height") cfg.synth.slice_height = sz();
    else if (key == "gradient_x") cfg.synth.gradient_x = num();
    else if (key == "gradient_y") cfg.synth.gradient_y = num();
    else if (key == "shade_x") cfg.synth.shade_x = num();
    else if (key == "shade_y") cfg.synth.shade_y = num();
    else if (key == "shade_saddle") cfg.synth.shade_saddle = num();
    else if (key == "image_ext") cfg.synth.image_ext = value;
    else if (key == "fractions") cfg.fractions = detail::as_usage(key, value, [&] { return detail::parse_double_list(value); });
    else if (key == "pretext_val_fraction") cfg.pretext_val_fraction = num();
    else if (key == "block_channels") cfg.block_channels = detail::as_usage(key, value, [&] { return detail::parse_size_list(value); });
    else if (key == "batch_size") cfg.train.batch_size = sz();
    else if (key == "learning_rate") cfg.train.learning_rate = num();
    else if (key == "epochs") cfg.train.epochs = sz();
    else if (key == "optimizer") cfg.train.optimizer = parse_optimizer(value);
    else if (key == "svm_c") cfg.patch_svm.C = num();
    else if (key == "svm_gamma") cfg.patch_svm.kernel.gamma = num();
    else if (key == "svm_tolerance") { cfg.patch_svm.tolerance = num(); cfg.slice_svm.tolerance = cfg.patch_svm.tolerance; }
    else if (key == "svm_max_passes") { cfg.patch_svm.max_passes = sz(); cfg.slice_svm.max_passes = cfg.patch_svm.max_passes; }
    else if (key == "slice_svm_c") cfg.slice_svm.C = num();
    else if (key == "perplexity") cfg.tsne.perplexity = num();
    else if (key == "tsne_iterations") cfg.tsne.iterations = sz();
    else if (key == "tsne_learning_rate") cfg.tsne.learning_rate = num();
    else if (key == "holdout_fraction") cfg.holdout_fraction = num();
    else if (key == "folds") cfg.folds = sz();
    else if (key == "standardize") cfg.standardize = detail::parse_bool(value);
    else if (key == "import") cfg.import_path = value;
    else if (key == "import_tag") cfg.import_tag = value;
    else if (key == "svg") cfg.write_svg = detail::parse_bool(value);
    else throw UsageError("unknown config key: " + key);
}

/// `key=value` lines; '#' starts a comment, blank lines are skipped.
inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("bad config line (want key=value): " + line);
        const auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t");
            return s.substr(a, b - a + 1);
        };
        apply_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

inline nlohmann::json config_echo(const RunConfig& cfg) {
    nlohmann::json j;
    j["out"] = cfg.out_dir.generic_string();
    j["dataset"] = cfg.dataset_dir.generic_string();
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["patch_side"] = cfg.patch_side;
    j["slices_per_class"] = cfg.synth.slices_per_class;
    j["slice_width"] = cfg.synth.slice_width;
    j["slice_height"] = cfg.synth.slice_height;
    j["gradient_x"] = cfg.synth.gradient_x;
    j["gradient_y"] = cfg.synth.gradient_y;
    j["shade_x"] = cfg.synth.shade_x;
    j["shade_y"] = cfg.synth.shade_y;
    j["shade_saddle"] = cfg.synth.shade_saddle;
    j["image_ext"] = cfg.synth.image_ext;
    j["fractions"] = cfg.fractions;
    j["pretext_val_fraction"] = cfg.pretext_val_fraction;
    j["block_channels"] = cfg.block_channels;
    j["batch_size"] = cfg.train.batch_size;
    j["learning_rate"] = cfg.train.learning_rate;
    j["epochs"] = cfg.train.epochs;
    j["optimizer"] = optimizer_name(cfg.train.optimizer);
    j["svm_c"] = cfg.patch_svm.C;
    j["svm_gamma"] = cfg.patch_svm.kernel.gamma;
    j["svm_tolerance"] = cfg.patch_svm.tolerance;
    j["svm_max_passes"] = cfg.patch_svm.max_passes;
    j["slice_svm_c"] = cfg.slice_svm.C;
    j["perplexity"] = cfg.tsne.perplexity;
    j["tsne_iterations"] = cfg.tsne.iterations;
    j["tsne_learning_rate"] = cfg.tsne.learning_rate;
    j["holdout_fraction"] = cfg.holdout_fraction;
    j["folds"] = cfg.folds;
    j["standardize"] = cfg.standardize;
    j["import"] = cfg.import_path.generic_string();
    j["import_tag"] = cfg.import_tag;
    j["svg"] = cfg.write_svg;
    return j;
}

// ----------------------------------------------------------------- stages

/// Synthesizes the dataset under `out_dir` and records provenance.
inline DatasetManifest stage_synth(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                                   int threads) {
    StageDir stage(out_dir);
    DatasetManifest manifest = generate_dataset(cfg, stage.work(), threads);

    RunRecord rec("synth");
    nlohmann::json j;
    j["slices_per_class"] = cfg.slices_per_class;
    j["slice_width"] = cfg.slice_width;
    j["slice_height"] = cfg.slice_height;
    j["patch_side"] = cfg.patch_side;
    j["seed"] = cfg.seed;
    j["gradient_x"] = cfg.gradient_x;
    j["gradient_y"] = cfg.gradient_y;
    j["image_ext"] = cfg.image_ext;
    rec.config(j);
    rec.output_file("slices_csv", stage.file("slices.csv"));
    rec.output_tree("slices", stage.file("slices"));
    rec.write(stage.file("run.json"));
    stage.promote();
    return manifest;
}

inline PatchImage load_patch(const std::filesystem::path& base_dir, const SliceRecord& slice,
                             const ManifestPatchRecord& patch) {
    const RasterImage img = read_image(base_dir / patch.path);
    if (img.width != img.height)
        throw DataError("patch image is not square: " + patch.path);
    return PatchImage(img.width, img.pixels,
                      PatchOrigin{slice.slice_id, patch.tile_row, patch.tile_col});
}

/// Tiles every slice into row-major patches, writing patch images plus
/// `patches.csv` under `out_dir`.
inline DatasetManifest stage_tile(const std::filesystem::path& dataset_dir, int patch_side,
                                  const std::filesystem::path& out_dir, int threads) {
    const auto slices_csv = dataset_dir / "slices.csv";
    DatasetManifest manifest = read_slice_manifest(slices_csv);
    if (manifest.slices.empty()) throw EmptyManifest("no slices in " + slices_csv.string());

    StageDir stage(out_dir);
    std::filesystem::create_directories(stage.file("patches"));

    std::vector<std::vector<ManifestPatchRecord>> per_slice(manifest.slices.size());
    parallel_for(manifest.slices.size(), threads, [&](std::size_t i) {
        const SliceRecord& slice = manifest.slices[i];
        const RasterImage img = read_image(dataset_dir / slice.path);
        const std::string ext = std::filesystem::path(slice.path).extension().string();
        for (const PatchImage& patch : tile_slice(img, patch_side, slice.slice_id)) {
            ManifestPatchRecord rec;
            rec.patch_id = patch.id();
            rec.tile_row = patch.origin.tile_row;
            rec.tile_col = patch.origin.tile_col;
            rec.path = "patches/" + slice.slice_id + "_r" + std::to_string(rec.tile_row) + "c" +
                       std::to_string(rec.tile_col) + ext;
            write_image(patch.to_raster(), stage.work() / rec.path);
            per_slice[i].push_back(std::move(rec));
        }
    });
    for (std::size_t i = 0; i < manifest.slices.size(); ++i)
        manifest.slices[i].patches = std::move(per_slice[i]);
    manifest.validate();
    write_patch_manifest(manifest, stage.file("patches.csv"));

    RunRecord rec("tile");
    rec.config({{"patch_side", patch_side}});
    rec.input_file("slices_csv", slices_csv);
    rec.output_file("patches_csv", stage.file("patches.csv"));
    rec.output_tree("patches", stage.file("patches"));
    rec.write(stage.file("run.json"));
    stage.promote();
    return manifest;
}

struct PretextGenResult {
    std::vector<PretextManifestRow> rows;
    std::vector<std::string> sampled_slices;
    std::size_t source_patches = 0;
};

/// Samples slices, expands each of their patches into the 7 duplication
/// variants and writes the example images plus `pretext.csv`.
inline PretextGenResult stage_pretext_gen(const std::filesystem::path& patches_dir,
                                          const PretextSampling& sampling,
                                          const std::filesystem::path& out_dir, int threads) {
    const auto patches_csv = patches_dir / "patches.csv";
    const DatasetManifest manifest = read_patch_manifest(patches_csv);

    PretextGenResult result;
    result.sampled_slices = sample_pretext_slices(manifest, sampling);

    StageDir stage(out_dir);
    std::filesystem::create_directories(stage.file("examples"));

    std::vector<const SliceRecord*> sampled;
    for (const auto& slice_id : result.sampled_slices) sampled.push_back(manifest.find(slice_id));

    std::vector<std::vector<PretextManifestRow>> per_slice(sampled.size());
    parallel_for(sampled.size(), threads, [&](std::size_t i) {
        const SliceRecord& slice = *sampled[i];
        std::string ext;
        for (const auto& patch_rec : slice.patches) {
            const PatchImage patch = load_patch(patches_dir, slice, patch_rec);
            ext = std::filesystem::path(patch_rec.path).extension().string();
            for (const PretextExample& ex : generate_pretext_examples(patch)) {
                PretextManifestRow row;
                row.example_id = pretext_example_name(ex.source_patch_id, ex.label);
                row.source_patch_id = ex.source_patch_id;
                row.label = ex.label;
                row.path = "examples/" + row.example_id + ext;
                write_image(ex.patch.to_raster(), stage.work() / row.path);
                per_slice[i].push_back(std::move(row));
            }
        }
    });
    for (auto& rows : per_slice) {
        result.source_patches += rows.size() / static_cast<std::size_t>(kNumDuplicationClasses);
        result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    }
    write_pretext_manifest(result.rows, stage.file("pretext.csv"));

    RunRecord rec("pretext-gen");
    rec.config({{"fraction", sampling.fraction}, {"seed", sampling.seed}});
    rec.input_file("patches_csv", patches_csv);
    rec.note("sampled_slices", result.sampled_slices);
    rec.note("source_patches", result.source_patches);
    rec.note("examples", result.rows.size());
    rec.output_file("pretext_csv", stage.file("pretext.csv"));
    rec.output_tree("examples", stage.file("examples"));
    rec.write(stage.file("run.json"));
    stage.promote();
    return result;
}

inline std::vector<PretextExample> load_pretext_examples(const std::filesystem::path& pretext_dir,
                                                         int threads = 1) {
    const auto rows = read_pretext_manifest(pretext_dir / "pretext.csv");
    if (rows.empty()) throw EmptyDataset("no pretext examples in " + pretext_dir.string());
    std::vector<PretextExample> examples(rows.size());
    parallel_for(rows.size(), threads, [&](std::size_t i) {
        std::filesystem::path path = pretext_dir / "examples" / (rows[i].example_id + ".png");
        if (!std::filesystem::exists(path))
            path = pretext_dir / "examples" / (rows[i].example_id + ".ppm");
        const RasterImage img = read_image(path);
        if (img.width != img.height)
            throw DataError("pretext example is not square: " + path.string());
        examples[i].patch = PatchImage(img.width, img.pixels,
                                       parse_patch_id(rows[i].source_patch_id));
        examples[i].label = rows[i].label;
        examples[i].source_patch_id = rows[i].source_patch_id;
    });
    return examples;
}

struct TrainStageResult {
    NetworkParams<float> params;
    std::vector<EpochStats> log;
    double val_accuracy = 0.0;
    double val_loss = 0.0;
    std::size_t train_examples = 0;
    std::size_t val_examples = 0;
};

/**
 * @brief Trains the pretext network with a slice-grouped validation split:
 * every example whose source patch comes from a held-out slice goes to the
 * validation set, so near-duplicate variants never straddle the split.
 */
inline TrainStageResult stage_train_pretext(const std::filesystem::path& pretext_dir,
                                            const NetworkSpec& spec, const TrainConfig& config,
                                            double val_fraction,
                                            const std::filesystem::path& out_dir, int threads) {
    const std::vector<PretextExample> all = load_pretext_examples(pretext_dir, threads);

    std::vector<std::string> source_slices;
    for (const auto& ex : all) {
        const std::string slice_id = parse_patch_id(ex.source_patch_id).slice_id;
        if (std::find(source_slices.begin(), source_slices.end(), slice_id) == source_slices.end())
            source_slices.push_back(slice_id);
    }
    std::sort(source_slices.begin(), source_slices.end());

    std::size_t val_slices = 0;
    if (val_fraction > 0.0 && source_slices.size() >= 2) {
        val_slices = static_cast<std::size_t>(
            std::llround(val_fraction * static_cast<double>(source_slices.size())));
        val_slices = std::clamp<std::size_t>(val_slices, 1, source_slices.size() - 1);
    }
    Rng rng(derive_seed(config.seed, 0x7A11));
    rng.shuffle(source_slices);
    std::vector<std::string> held(source_slices.begin(),
                                  source_slices.begin() + static_cast<std::ptrdiff_t>(val_slices));
    std::sort(held.begin(), held.end());

    std::vector<PretextExample> train_set, val_set;
    for (const auto& ex : all) {
        const std::string slice_id = parse_patch_id(ex.source_patch_id).slice_id;
        (std::binary_search(held.begin(), held.end(), slice_id) ? val_set : train_set)
            .push_back(ex);
    }

    TrainStageResult result;
    TrainResult trained = train_pretext(spec, config, train_set, threads);
    result.params = std::move(trained.params);
    result.log = std::move(trained.log);
    result.train_examples = train_set.size();
    result.val_examples = val_set.size();
    if (!val_set.empty()) {
        const EpochStats val = evaluate_pretext(result.params, val_set, threads);
        result.val_accuracy = val.accuracy;
        result.val_loss = val.loss;
    }

    StageDir stage(out_dir);
    save_params(result.params, stage.file("params.nnp1"));
    write_training_log(result.log, stage.file("training_log.csv"));

    nlohmann::json metrics;
    metrics["train_examples"] = result.train_examples;
    metrics["val_examples"] = result.val_examples;
    metrics["val_slices"] = held;
    metrics["val_accuracy"] = result.val_accuracy;
    metrics["val_loss"] = result.val_loss;
    metrics["final_train_loss"] = result.log.back().loss;
    metrics["final_train_accuracy"] = result.log.back().accuracy;
    {
        std::ofstream out(stage.file("metrics.json"));
        out << metrics.dump(2) << "\n";
    }

    RunRecord rec("train-pretext");
    nlohmann::json j;
    j["input_side"] = spec.input_side;
    j["block_channels"] = spec.block_channels;
    j["num_classes"] = spec.num_classes;
    j["batch_size"] = config.batch_size;
    j["learning_rate"] = config.learning_rate;
    j["epochs"] = config.epochs;
    j["optimizer"] = optimizer_name(config.optimizer);
    j["seed"] = config.seed;
    j["val_fraction"] = val_fraction;
    rec.config(j);
    rec.input_file("pretext_csv", pretext_dir / "pretext.csv");
    rec.output_file("params", stage.file("params.nnp1"));
    rec.output_file("training_log", stage.file("training_log.csv"));
    rec.output_file("metrics", stage.file("metrics.json"));
    rec.write(stage.file("run.json"));
    stage.promote();
    return result;
}

/// Extracts one embedding per patch, in manifest order, into an EMB1 file.
inline std::vector<EmbeddingVector> stage_embed(const std::filesystem::path& patches_dir,
                                                const NetworkParams<float>& params,
                                                std::size_t input_side,
                                                const std::filesystem::path& out_dir, int threads) {
    const DatasetManifest manifest = read_patch_manifest(patches_dir / "patches.csv");

    std::vector<std::pair<const SliceRecord*, const ManifestPatchRecord*>> work;
    for (const auto& slice : manifest.slices)
        for (const auto& patch : slice.patches) work.emplace_back(&slice, &patch);
    if (work.empty()) throw EmptyManifest("no patches in " + patches_dir.string());

    std::vector<EmbeddingVector> vecs(work.size());
    parallel_for(work.size(), threads, [&](std::size_t i) {
        const PatchImage patch = load_patch(patches_dir, *work[i].first, *work[i].second);
        vecs[i] = extract_embedding(params, patch, input_side);
    });

    StageDir stage(out_dir);
    export_embeddings(vecs, stage.file("embeddings.emb1"));

    RunRecord rec("embed");
    rec.config({{"input_side", input_side}, {"dim", vecs.front().dim}});
    rec.input_file("patches_csv", patches_dir / "patches.csv");
    rec.output_file("embeddings", stage.file("embeddings.emb1"));
    rec.output_file("index", emb1_sidecar_path(stage.file("embeddings.emb1")));
    rec.write(stage.file("run.json"));
    stage.promote();
    return vecs;
}

/// Copies an externally produced embedding file into the run layout,
/// validating it against the patch manifest on the way in.
inline std::vector<EmbeddingVector> stage_import_embeddings(
    const std::filesystem::path& source, const std::filesystem::path& patches_dir,
    const std::filesystem::path& out_dir) {
    const std::vector<EmbeddingVector> vecs = import_embeddings(source);
    const DatasetManifest manifest = read_patch_manifest(patches_dir / "patches.csv");

    std::map<std::string, bool> needed;
    for (const auto& slice : manifest.slices)
        for (const auto& patch : slice.patches) needed[patch.patch_id] = false;
    for (const auto& v : vecs) {
        const auto it = needed.find(v.patch_id);
        if (it != needed.end()) it->second = true;
    }
    for (const auto& [patch_id, found] : needed)
        if (!found) throw MissingEmbeddings("imported file lacks embedding for " + patch_id);

    StageDir stage(out_dir);
    export_embeddings(vecs, stage.file("embeddings.emb1"));

    RunRecord rec("import-embeddings");
    rec.config({{"source", source.generic_string()}});
    rec.input_file("source", source);
    rec.input_file("patches_csv", patches_dir / "patches.csv");
    rec.output_file("embeddings", stage.file("embeddings.emb1"));
    rec.output_file("index", emb1_sidecar_path(stage.file("embeddings.emb1")));
    rec.write(stage.file("run.json"));
    stage.promote();
    return vecs;
}

inline std::map<std::string, EmbeddingVector> embeddings_by_patch(
    const std::vector<EmbeddingVector>& vecs) {
    std::map<std::string, EmbeddingVector> by_id;
    for (const auto& v : vecs) {
        if (!by_id.emplace(v.patch_id, v).second)
            throw DataError("duplicate embedding for patch " + v.patch_id);
    }
    return by_id;
}

/// Aggregates patch embeddings into per-slice vectors and writes them as an
/// EMB1 file whose ids are slice ids.
inline std::vector<SliceEmbedding> stage_aggregate(const std::filesystem::path& embeddings_file,
                                                   const std::filesystem::path& patches_dir,
                                                   AggregationMethod method,
                                                   const std::filesystem::path& out_dir) {
    const DatasetManifest manifest = read_patch_manifest(patches_dir / "patches.csv");
    const auto by_id = embeddings_by_patch(import_embeddings(embeddings_file));

    std::vector<SliceEmbedding> out;
    std::vector<EmbeddingVector> as_vectors;
    for (const auto& slice : manifest.slices) {
        std::vector<EmbeddingVector> patch_vecs;
        for (const auto& p : slice.patches) {
            const auto it = by_id.find(p.patch_id);
            if (it == by_id.end()) throw MissingEmbeddings("no embedding for patch " + p.patch_id);
            patch_vecs.push_back(it->second);
        }
        SliceEmbedding agg = method == AggregationMethod::Concat ? concat_embeddings(patch_vecs)
                                                                 : sum_embeddings(patch_vecs);
        EmbeddingVector v;
        v.dim = agg.values.size();
        v.values = agg.values;
        v.patch_id = agg.slice_id;
        as_vectors.push_back(std::move(v));
        out.push_back(std::move(agg));
    }

    StageDir stage(out_dir);
    export_embeddings(as_vectors, stage.file("slice_embeddings.emb1"));

    RunRecord rec("aggregate");
    rec.config({{"method", aggregation_name(method)}});
    rec.input_file("embeddings", embeddings_file);
    rec.input_file("patches_csv", patches_dir / "patches.csv");
    rec.output_file("slice_embeddings", stage.file("slice_embeddings.emb1"));
    rec.write(stage.file("run.json"));
    stage.promote();
    return out;
}

/// Trains one multiclass SVM on every row of an embedding file; labels come
/// from the manifest (patch ids or slice ids).
inline MulticlassModel stage_train_svm(const std::filesystem::path& embeddings_file,
                                       const std::filesystem::path& patches_dir,
                                       const SvmConfig& config,
                                       const std::filesystem::path& out_dir) {
    const DatasetManifest manifest = read_patch_manifest(patches_dir / "patches.csv");
    const std::vector<EmbeddingVector> vecs = import_embeddings(embeddings_file);

    std::map<std::string, TissueClass> label_of;
    for (const auto& slice : manifest.slices) {
        label_of[slice.slice_id] = slice.label;
        for (const auto& p : slice.patches) label_of[p.patch_id] = slice.label;
    }

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (const auto& v : vecs) {
        const auto it = label_of.find(v.patch_id);
        if (it == label_of.end()) throw DataError("no manifest label for id " + v.patch_id);
        rows.push_back(to_feature_row(v));
        labels.push_back(static_cast<int>(it->second));
    }

    std::vector<SmoDiagnostics> diags;
    const MulticlassModel model = train_multiclass(rows, labels, config, &diags);

    StageDir stage(out_dir);
    save_multiclass(model, stage.file("model.svm1"));

    nlohmann::json summary;
    summary["kernel"] = kernel_name(config.kernel.kind);
    summary["gamma"] = config.kernel.gamma;
    summary["C"] = config.C;
    summary["tolerance"] = config.tolerance;
    summary["max_passes"] = config.max_passes;
    summary["examples"] = rows.size();
    summary["classes"] = nlohmann::json::array();
    for (std::size_t i = 0; i < model.models.size(); ++i) {
        nlohmann::json c;
        c["class"] = tissue_name(static_cast<TissueClass>(model.class_labels[i]));
        c["support_count"] = model.models[i].support_vectors.size();
        c["converged"] = model.models[i].converged;
        c["sweeps"] = diags[i].sweeps;
        summary["classes"].push_back(c);
    }
    {
        std::ofstream out(stage.file("summary.json"));
        out << summary.dump(2) << "\n";
    }

    RunRecord rec("train-svm");
    rec.config(summary);
    rec.input_file("embeddings", embeddings_file);
    rec.input_file("patches_csv", patches_dir / "patches.csv");
    rec.output_file("model", stage.file("model.svm1"));
    rec.output_file("summary", stage.file("summary.json"));
    rec.write(stage.file("run.json"));
    stage.promote();
    return model;
}

/// Runs the full evaluation protocol for one feature source and writes the
/// reports.
inline ExperimentResult stage_eval(const std::filesystem::path& embeddings_file,
                                   const std::filesystem::path& patches_dir,
                                   const ExperimentConfig& config,
                                   const std::filesystem::path& out_dir) {
    const DatasetManifest manifest = read_patch_manifest(patches_dir / "patches.csv");
    const auto by_id = embeddings_by_patch(import_embeddings(embeddings_file));
    const ExperimentResult result = run_experiment(manifest, by_id, config);

    StageDir stage(out_dir);
    nlohmann::json reports;
    reports["extractor"] = config.extractor;
    reports["patch"] = report_to_json(result.patch_report);
    reports["vote"] = report_to_json(result.vote_report);
    reports["concat_cv"] = cv_to_json(result.concat_cv);
    reports["sum_cv"] = cv_to_json(result.sum_cv);
    reports["patch_svm_converged"] = result.patch_svm_converged;
    reports["slice_svm_converged"] = result.slice_svm_converged;
    {
        std::ofstream out(stage.file("reports.json"));
        out << reports.dump(2) << "\n";
    }
    {
        std::ofstream out(stage.file("summary.csv"));
        out << "extractor,method,level,class,sensitivity\n";
        append_summary_rows(out, result.patch_report.extractor, result.patch_report.method,
                            result.patch_report.level, result.patch_report.per_class,
                            result.patch_report.overall);
        append_summary_rows(out, result.vote_report.extractor, result.vote_report.method,
                            result.vote_report.level, result.vote_report.per_class,
                            result.vote_report.overall);
        append_summary_rows(out, result.concat_cv.extractor, result.concat_cv.method,
                            result.concat_cv.level, result.concat_cv.mean_per_class,
                            result.concat_cv.mean_overall);
        append_summary_rows(out, result.sum_cv.extractor, result.sum_cv.method, result.sum_cv.level,
                            result.sum_cv.mean_per_class, result.sum_cv.mean_overall);
    }

    RunRecord rec("eval");
    nlohmann::json j;
    j["extractor"] = config.extractor;
    j["patch_svm_c"] = config.patch_svm.C;
    j["patch_svm_gamma"] = config.patch_svm.kernel.gamma;
    j["slice_svm_c"] = config.slice_svm.C;
    j["holdout_fraction"] = config.holdout.train_fraction;
    j["folds"] = config.cv.folds;
    j["seed"] = config.holdout.seed;
    j["standardize"] = config.standardize;
    rec.config(j);
    rec.input_file("embeddings", embeddings_file);
    rec.input_file("patches_csv", patches_dir / "patches.csv");
    rec.output_file("reports", stage.file("reports.json"));
    rec.output_file("summary", stage.file("summary.csv"));
    rec.write(stage.file("run.json"));
    stage.promote();
    return result;
}

/// 2-D scatter of an embedding file; labels come from the patch manifest
/// (ids may be patch ids or slice ids).
inline TsneResult stage_tsne(const std::filesystem::path& embeddings_file,
                             const std::filesystem::path& patches_dir, const TsneConfig& config,
                             const std::filesystem::path& out_dir, bool write_svg, int threads) {
    const DatasetManifest manifest = read_patch_manifest(patches_dir / "patches.csv");
    const std::vector<EmbeddingVector> vecs = import_embeddings(embeddings_file);
    if (vecs.empty()) throw EmptyDataset("no embeddings in " + embeddings_file.string());

    std::map<std::string, TissueClass> label_of;
    for (const auto& slice : manifest.slices) {
        label_of[slice.slice_id] = slice.label;
        for (const auto& p : slice.patches) label_of[p.patch_id] = slice.label;
    }

    std::vector<std::vector<double>> X;
    for (const auto& v : vecs) X.push_back(to_feature_row(v));
    const AffinityMatrix P = compute_affinities(X, config.perplexity, threads);
    const TsneResult result = run_tsne(P, config, threads);

    std::vector<ScatterPoint> points;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        const auto it = label_of.find(vecs[i].patch_id);
        if (it == label_of.end()) throw DataError("no manifest label for id " + vecs[i].patch_id);
        points.push_back({vecs[i].patch_id, result.layout[i * 2], result.layout[i * 2 + 1],
                          tissue_name(it->second)});
    }

    StageDir stage(out_dir);
    write_scatter_csv(points, stage.file("scatter.csv"));
    if (write_svg) write_scatter_svg(points, stage.file("scatter.svg"));
    {
        std::ofstream out(stage.file("kl_log.csv"));
        if (!out) throw IoError("cannot open for writing kl_log.csv");
        out << "iteration,kl\n";
        for (std::size_t i = 0; i < result.kl_log.size(); ++i)
            out << i << "," << format_float(result.kl_log[i]) << "\n";
    }

    RunRecord rec("tsne");
    nlohmann::json j;
    j["perplexity"] = config.perplexity;
    j["iterations"] = config.iterations;
    j["learning_rate"] = config.learning_rate;
    j["seed"] = config.seed;
    rec.config(j);
    rec.input_file("embeddings", embeddings_file);
    rec.output_file("scatter", stage.file("scatter.csv"));
    if (write_svg) rec.output_file("scatter_svg", stage.file("scatter.svg"));
    rec.output_file("kl_log", stage.file("kl_log.csv"));
    rec.write(stage.file("run.json"));
    stage.promote();
    return result;
}

// ----------------------------------------------------------------- run-all

struct ArmSummary {
    std::string tag;
    double pretext_val_accuracy = 0.0;  // 0 for the imported arm
    ExperimentResult experiment;
    bool concat_ge_vote = false;
};

struct RunAllResult {
    std::vector<ArmSummary> arms;
    std::filesystem::path out_dir;
};

/**
 * @brief The whole protocol: dataset -> tiling -> per-fraction pretext
 * training, embedding, evaluation and scatters -> comparison table, plus the
 * imported-embedding arm when one is provided.
 */
inline RunAllResult run_all(const RunConfig& cfg) {
    cfg.validate();
    const auto& out = cfg.out_dir;
    std::filesystem::create_directories(out);

    // dataset
    std::filesystem::path dataset_dir = cfg.dataset_dir;
    if (dataset_dir.empty()) {
        dataset_dir = out / "dataset";
        SynthConfig synth = cfg.synth;
        synth.seed = derive_seed(cfg.seed, 0x5717);
        synth.patch_side = cfg.patch_side;
        stage_synth(synth, dataset_dir, cfg.threads);
    }

    // tiling
    const auto patches_dir = out / "patches";
    stage_tile(dataset_dir, static_cast<int>(cfg.patch_side), patches_dir, cfg.threads);

    RunAllResult result;
    result.out_dir = out;
    std::vector<ExperimentResult> experiments;

    const auto eval_arm = [&](const std::string& tag, const std::filesystem::path& emb_file,
                              double val_accuracy) {
        ExperimentConfig exp;
        exp.patch_svm = cfg.patch_svm;
        exp.slice_svm = cfg.slice_svm;
        exp.holdout = SplitPlan{SplitKind::HoldOut, cfg.holdout_fraction, cfg.folds,
                                derive_seed(cfg.seed, 0xE7A1)};
        exp.cv = SplitPlan{SplitKind::KFold, cfg.holdout_fraction, cfg.folds,
                           derive_seed(cfg.seed, 0xE7A2)};
        exp.standardize = cfg.standardize;
        exp.extractor = tag;
        const ExperimentResult er = stage_eval(emb_file, patches_dir, exp, out / ("eval-" + tag));

        for (AggregationMethod method : {AggregationMethod::Concat, AggregationMethod::Sum}) {
            const auto agg_dir = out / ("aggregate-" + std::string(aggregation_name(method)) +
                                        "-" + tag);
            stage_aggregate(emb_file, patches_dir, method, agg_dir);
            TsneConfig tsne_cfg = cfg.tsne;
            tsne_cfg.seed = derive_seed(cfg.seed, 0x75E0 + static_cast<int>(method));
            stage_tsne(agg_dir / "slice_embeddings.emb1", patches_dir, tsne_cfg,
                       out / ("tsne-" + std::string(aggregation_name(method)) + "-" + tag),
                       cfg.write_svg, cfg.threads);
        }
        TsneConfig tsne_cfg = cfg.tsne;
        tsne_cfg.seed = derive_seed(cfg.seed, 0x75EF);
        stage_tsne(emb_file, patches_dir, tsne_cfg, out / ("tsne-patch-" + tag), cfg.write_svg,
                   cfg.threads);

        ArmSummary arm;
        arm.tag = tag;
        arm.pretext_val_accuracy = val_accuracy;
        arm.experiment = er;
        arm.concat_ge_vote = er.concat_cv.mean_overall >= er.vote_report.overall;
        result.arms.push_back(arm);
        experiments.push_back(er);
    };

    // self-supervised arms, one per pretext fraction
    for (double fraction : cfg.fractions) {
        const std::string tag = "S-CNN-" + fraction_tag(fraction);
        const auto pretext_dir = out / ("pretext-" + fraction_tag(fraction));
        const auto model_dir = out / ("model-" + fraction_tag(fraction));
        const auto emb_dir = out / ("embeddings-" + tag);

        PretextSampling sampling{fraction, derive_seed(cfg.seed, 0x9E78)};
        stage_pretext_gen(patches_dir, sampling, pretext_dir, cfg.threads);

        TrainConfig train = cfg.train;
        train.seed = derive_seed(cfg.seed, 0xF000 + static_cast<int>(std::llround(fraction * 100)));
        const TrainStageResult trained = stage_train_pretext(
            pretext_dir, cfg.network_spec(), train, cfg.pretext_val_fraction, model_dir,
            cfg.threads);

        stage_embed(patches_dir, trained.params, cfg.patch_side, emb_dir, cfg.threads);
        eval_arm(tag, emb_dir / "embeddings.emb1", trained.val_accuracy);
    }

    // imported transfer arm, when provided
    const bool imported = !cfg.import_path.empty();
    if (imported) {
        const auto import_dir = out / ("embeddings-" + cfg.import_tag);
        stage_import_embeddings(cfg.import_path, patches_dir, import_dir);
        eval_arm(cfg.import_tag, import_dir / "embeddings.emb1", 0.0);
    }

    write_summary_csv(experiments, out / "summary.csv");
    write_comparison_csv(experiments, out / "comparison.csv");

    RunRecord rec("run-all");
    rec.config(config_echo(cfg));
    nlohmann::json arms = nlohmann::json::array();
    for (const auto& arm : result.arms) {
        nlohmann::json a;
        a["tag"] = arm.tag;
        a["pretext_val_accuracy"] = arm.pretext_val_accuracy;
        a["patch_overall"] = arm.experiment.patch_report.overall;
        a["vote_overall"] = arm.experiment.vote_report.overall;
        a["concat_cv_overall"] = arm.experiment.concat_cv.mean_overall;
        a["sum_cv_overall"] = arm.experiment.sum_cv.mean_overall;
        a["concat_ge_vote"] = arm.concat_ge_vote;
        arms.push_back(a);
    }
    rec.note("arms", arms);
    rec.note("imported_arm", imported ? nlohmann::json(cfg.import_tag)
                                      : nlohmann::json("not provided"));
    rec.input_tree("dataset", dataset_dir);
    rec.output_file("summary", out / "summary.csv");
    rec.output_file("comparison", out / "comparison.csv");
    rec.write(out / "run.json");
    return result;
}

}  // namespace dupless
