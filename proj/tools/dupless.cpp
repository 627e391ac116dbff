// Command line driver. Each subcommand wraps one pipeline stage; `run-all`
// chains them. Exit codes: 0 success, 1 usage, 2 data, 3 numerical.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dupless/pipeline.hpp"

namespace {

std::uint64_t env_seed() {
    const char* v = std::getenv("DUPLESS_SEED");
    if (v == nullptr || *v == '\0') return 0;
    return static_cast<std::uint64_t>(dupless::parse_long(v));
}

struct SetOnce {
    std::string value;
    bool set = false;
};

}  // namespace

int main(int argc, char** argv) {
    using namespace dupless;

    CLI::App app{"region-duplication self-supervision pipeline for tiled tissue images"};
    app.require_subcommand(1);
    app.get_formatter()->column_width(34);

    // ---------------------------------------------------------------- synth
    auto synth_cfg = std::make_shared<SynthConfig>();
    auto synth_out = std::make_shared<std::string>();
    auto synth_threads = std::make_shared<int>(1);
    {
        auto* cmd = app.add_subcommand("synth", "generate a synthetic slice dataset");
        synth_cfg->seed = env_seed();
        cmd->add_option("--out", *synth_out, "output dataset directory")->required();
        cmd->add_option("--slices-per-class", synth_cfg->slices_per_class, "slices per tissue class");
        cmd->add_option("--width", synth_cfg->slice_width, "slice width in pixels");
        cmd->add_option("--height", synth_cfg->slice_height, "slice height in pixels");
        cmd->add_option("--patch-side", synth_cfg->patch_side, "patch side the slices must tile into");
        cmd->add_option("--seed", synth_cfg->seed, "master seed (default: DUPLESS_SEED or 0)");
        cmd->add_option("--gradient-x", synth_cfg->gradient_x, "horizontal density ramp strength");
        cmd->add_option("--gradient-y", synth_cfg->gradient_y, "vertical density ramp strength");
        cmd->add_option("--shade-x", synth_cfg->shade_x, "tile shading x-ramp swing in levels");
        cmd->add_option("--shade-y", synth_cfg->shade_y, "tile shading y-ramp swing in levels");
        cmd->add_option("--shade-saddle", synth_cfg->shade_saddle, "tile shading saddle swing in levels");
        cmd->add_option("--image-ext", synth_cfg->image_ext, "image format, .png or .ppm");
        cmd->add_option("--threads", *synth_threads, "worker threads (0 = hardware)");
        cmd->callback([=] {
            const auto manifest = stage_synth(*synth_cfg, *synth_out, *synth_threads);
            std::cout << "wrote " << manifest.slices.size() << " slices to " << *synth_out << "\n";
        });
    }

    // ----------------------------------------------------------------- tile
    auto tile_dataset = std::make_shared<std::string>();
    auto tile_out = std::make_shared<std::string>();
    auto tile_side = std::make_shared<int>(128);
    auto tile_threads = std::make_shared<int>(1);
    {
        auto* cmd = app.add_subcommand("tile", "cut slices into a grid of square patches");
        cmd->add_option("--dataset", *tile_dataset, "dataset directory holding slices.csv")->required();
        cmd->add_option("--out", *tile_out, "output directory for patches + patches.csv")->required();
        cmd->add_option("--patch-side", *tile_side, "patch side in pixels (even)");
        cmd->add_option("--threads", *tile_threads, "worker threads (0 = hardware)");
        cmd->callback([=] {
            const auto manifest = stage_tile(*tile_dataset, *tile_side, *tile_out, *tile_threads);
            std::size_t n = 0;
            for (const auto& s : manifest.slices) n += s.patches.size();
            std::cout << "wrote " << n << " patches to " << *tile_out << "\n";
        });
    }

    // ----------------------------------------------------------- pretext-gen
    auto pg_patches = std::make_shared<std::string>();
    auto pg_out = std::make_shared<std::string>();
    auto pg_sampling = std::make_shared<PretextSampling>();
    auto pg_threads = std::make_shared<int>(1);
    {
        auto* cmd = app.add_subcommand("pretext-gen",
                                       "expand sampled slices into duplication-labelled examples");
        pg_sampling->seed = env_seed();
        cmd->add_option("--patches", *pg_patches, "directory holding patches.csv")->required();
        cmd->add_option("--out", *pg_out, "output directory for examples + pretext.csv")->required();
        cmd->add_option("--fraction", pg_sampling->fraction, "fraction of slices to sample");
        cmd->add_option("--seed", pg_sampling->seed, "sampling seed (default: DUPLESS_SEED or 0)");
        cmd->add_option("--threads", *pg_threads, "worker threads (0 = hardware)");
        cmd->callback([=] {
            const auto result = stage_pretext_gen(*pg_patches, *pg_sampling, *pg_out, *pg_threads);
            std::cout << "sampled " << result.sampled_slices.size() << " slices, wrote "
                      << result.rows.size() << " examples to " << *pg_out << "\n";
        });
    }

    // ---------------------------------------------------------- train-pretext
    auto tp_pretext = std::make_shared<std::string>();
    auto tp_out = std::make_shared<std::string>();
    auto tp_side = std::make_shared<std::size_t>(128);
    auto tp_channels = std::make_shared<std::string>("8,16,32,64");
    auto tp_train = std::make_shared<TrainConfig>();
    auto tp_optimizer = std::make_shared<std::string>("adam");
    auto tp_val = std::make_shared<double>(0.25);
    auto tp_threads = std::make_shared<int>(1);
    {
        auto* cmd = app.add_subcommand("train-pretext", "train the duplication classifier");
        tp_train->seed = env_seed();
        cmd->add_option("--pretext", *tp_pretext, "directory holding pretext.csv")->required();
        cmd->add_option("--out", *tp_out, "output directory for params + training log")->required();
        cmd->add_option("--patch-side", *tp_side, "network input side");
        cmd->add_option("--channels", *tp_channels, "conv block widths, comma separated");
        cmd->add_option("--batch-size", tp_train->batch_size, "minibatch size");
        cmd->add_option("--learning-rate", tp_train->learning_rate, "step size");
        cmd->add_option("--epochs", tp_train->epochs, "training epochs");
        cmd->add_option("--optimizer", *tp_optimizer, "adam or sgd");
        cmd->add_option("--seed", tp_train->seed, "training seed (default: DUPLESS_SEED or 0)");
        cmd->add_option("--val-fraction", *tp_val, "fraction of source slices held out");
        cmd->add_option("--threads", *tp_threads, "worker threads (0 = hardware)");
        cmd->callback([=] {
            tp_train->optimizer = parse_optimizer(*tp_optimizer);
            NetworkSpec spec{*tp_side, detail::parse_size_list(*tp_channels),
                             static_cast<std::size_t>(kNumDuplicationClasses)};
            const auto result =
                stage_train_pretext(*tp_pretext, spec, *tp_train, *tp_val, *tp_out, *tp_threads);
            std::cout << "trained on " << result.train_examples << " examples, val accuracy "
                      << format_float(result.val_accuracy) << "\n";
        });
    }

    // ---------------------------------------------------------------- embed
    auto em_patches = std::make_shared<std::string>();
    auto em_params = std::make_shared<std::string>();
    auto em_out = std::make_shared<std::string>();
    auto em_side = std::make_shared<std::size_t>(128);
    auto em_threads = std::make_shared<int>(1);
    {
        auto* cmd = app.add_subcommand("embed", "extract one embedding per patch");
        cmd->add_option("--patches", *em_patches, "directory holding patches.csv")->required();
        cmd->add_option("--params", *em_params, "trained network parameter file")->required();
        cmd->add_option("--out", *em_out, "output directory for embeddings.emb1")->required();
        cmd->add_option("--patch-side", *em_side, "network input side");
        cmd->add_option("--threads", *em_threads, "worker threads (0 = hardware)");
        cmd->callback([=] {
            const auto params = load_params(*em_params);
            const auto vecs = stage_embed(*em_patches, params, *em_side, *em_out, *em_threads);
            std::cout << "wrote " << vecs.size() << " embeddings of dim " << vecs.front().dim
                      << " to " << *em_out << "\n";
        });
    }

    // ------------------------------------------------------ import-embeddings
    auto im_source = std::make_shared<std::string>();
    auto im_patches = std::make_shared<std::string>();
    auto im_out = std::make_shared<std::string>();
    {
        auto* cmd = app.add_subcommand("import-embeddings",
                                       "validate and adopt externally computed patch embeddings");
        cmd->add_option("--source", *im_source, "EMB1 or CSV embedding file")->required();
        cmd->add_option("--patches", *im_patches, "directory holding patches.csv")->required();
        cmd->add_option("--out", *im_out, "output directory")->required();
        cmd->callback([=] {
            const auto vecs = stage_import_embeddings(*im_source, *im_patches, *im_out);
            std::cout << "imported " << vecs.size() << " embeddings to " << *im_out << "\n";
        });
    }

    // ------------------------------------------------------------- aggregate
    auto ag_emb = std::make_shared<std::string>();
    auto ag_patches = std::make_shared<std::string>();
    auto ag_out = std::make_shared<std::string>();
    auto ag_method = std::make_shared<std::string>("concat");
    {
        auto* cmd = app.add_subcommand("aggregate", "combine patch embeddings per slice");
        cmd->add_option("--embeddings", *ag_emb, "patch embedding file")->required();
        cmd->add_option("--patches", *ag_patches, "directory holding patches.csv")->required();
        cmd->add_option("--out", *ag_out, "output directory")->required();
        cmd->add_option("--method", *ag_method, "concat or sum");
        cmd->callback([=] {
            const auto out = stage_aggregate(*ag_emb, *ag_patches, parse_aggregation(*ag_method),
                                             *ag_out);
            std::cout << "aggregated " << out.size() << " slices (" << *ag_method << ") to "
                      << *ag_out << "\n";
        });
    }

    // ------------------------------------------------------------- train-svm
    auto sv_emb = std::make_shared<std::string>();
    auto sv_patches = std::make_shared<std::string>();
    auto sv_out = std::make_shared<std::string>();
    auto sv_kernel = std::make_shared<std::string>("rbf");
    auto sv_cfg = std::make_shared<SvmConfig>();
    {
        auto* cmd = app.add_subcommand("train-svm",
                                       "fit a one-vs-rest kernel SVM on an embedding file");
        cmd->add_option("--embeddings", *sv_emb, "embedding file (patch or slice level)")->required();
        cmd->add_option("--patches", *sv_patches, "directory holding patches.csv")->required();
        cmd->add_option("--out", *sv_out, "output directory for model.svm1")->required();
        cmd->add_option("--kernel", *sv_kernel, "rbf or linear");
        cmd->add_option("--c", sv_cfg->C, "soft margin penalty");
        cmd->add_option("--gamma", sv_cfg->kernel.gamma, "RBF width");
        cmd->add_option("--tolerance", sv_cfg->tolerance, "KKT tolerance");
        cmd->add_option("--max-passes", sv_cfg->max_passes, "optimizer sweep cap");
        cmd->callback([=] {
            sv_cfg->kernel.kind = parse_kernel(*sv_kernel);
            const auto model = stage_train_svm(*sv_emb, *sv_patches, *sv_cfg, *sv_out);
            std::cout << "trained " << model.models.size() << " one-vs-rest machines to " << *sv_out
                      << "\n";
        });
    }

    // ------------------------------------------------------------------ eval
    auto ev_emb = std::make_shared<std::string>();
    auto ev_patches = std::make_shared<std::string>();
    auto ev_out = std::make_shared<std::string>();
    auto ev_cfg = std::make_shared<ExperimentConfig>();
    auto ev_seed = std::make_shared<std::uint64_t>(env_seed());
    {
        auto* cmd = app.add_subcommand("eval",
                                       "hold-out + cross-validated sensitivity for one extractor");
        cmd->add_option("--embeddings", *ev_emb, "patch embedding file")->required();
        cmd->add_option("--patches", *ev_patches, "directory holding patches.csv")->required();
        cmd->add_option("--out", *ev_out, "output directory for reports")->required();
        cmd->add_option("--extractor", ev_cfg->extractor, "extractor tag for the reports");
        cmd->add_option("--svm-c", ev_cfg->patch_svm.C, "patch-level soft margin penalty");
        cmd->add_option("--svm-gamma", ev_cfg->patch_svm.kernel.gamma, "patch-level RBF width");
        cmd->add_option("--slice-svm-c", ev_cfg->slice_svm.C, "slice-level soft margin penalty");
        cmd->add_option("--holdout-fraction", ev_cfg->holdout.train_fraction, "train share");
        cmd->add_option("--folds", ev_cfg->cv.folds, "cross-validation folds");
        cmd->add_option("--seed", *ev_seed, "split seed (default: DUPLESS_SEED or 0)");
        cmd->add_flag("--standardize", ev_cfg->standardize,
                      "standardize features on the training split");
        cmd->callback([=] {
            ev_cfg->holdout.seed = derive_seed(*ev_seed, 0xE7A1);
            ev_cfg->cv.seed = derive_seed(*ev_seed, 0xE7A2);
            const auto result = stage_eval(*ev_emb, *ev_patches, *ev_cfg, *ev_out);
            std::cout << "patch overall " << format_float(result.patch_report.overall)
                      << ", vote overall " << format_float(result.vote_report.overall)
                      << ", concat cv " << format_float(result.concat_cv.mean_overall)
                      << ", sum cv " << format_float(result.sum_cv.mean_overall) << "\n";
        });
    }

    // ------------------------------------------------------------------ tsne
    auto ts_emb = std::make_shared<std::string>();
    auto ts_patches = std::make_shared<std::string>();
    auto ts_out = std::make_shared<std::string>();
    auto ts_cfg = std::make_shared<TsneConfig>();
    auto ts_no_svg = std::make_shared<bool>(false);
    auto ts_threads = std::make_shared<int>(1);
    {
        auto* cmd = app.add_subcommand("tsne", "2-D scatter of an embedding file");
        ts_cfg->seed = env_seed();
        cmd->add_option("--embeddings", *ts_emb, "embedding file (patch or slice level)")->required();
        cmd->add_option("--patches", *ts_patches, "directory holding patches.csv")->required();
        cmd->add_option("--out", *ts_out, "output directory for scatter.csv")->required();
        cmd->add_option("--perplexity", ts_cfg->perplexity, "neighborhood size");
        cmd->add_option("--iterations", ts_cfg->iterations, "gradient steps");
        cmd->add_option("--learning-rate", ts_cfg->learning_rate, "step size");
        cmd->add_option("--seed", ts_cfg->seed, "layout seed (default: DUPLESS_SEED or 0)");
        cmd->add_flag("--no-svg", *ts_no_svg, "skip the SVG rendering");
        cmd->add_option("--threads", *ts_threads, "worker threads (0 = hardware)");
        cmd->callback([=] {
            const auto result =
                stage_tsne(*ts_emb, *ts_patches, *ts_cfg, *ts_out, !*ts_no_svg, *ts_threads);
            std::cout << "final kl " << format_float(result.kl_log.back()) << ", wrote " << *ts_out
                      << "\n";
        });
    }

    // --------------------------------------------------------------- run-all
    auto ra_config = std::make_shared<std::string>();
    auto ra_sets = std::make_shared<std::vector<std::string>>();
    auto ra_flags = std::make_shared<std::map<std::string, SetOnce>>();
    {
        auto* cmd = app.add_subcommand("run-all", "the whole pipeline end to end");
        cmd->add_option("--config", *ra_config, "key=value config file");
        // Dedicated flags shadow config-file keys; anything else goes through --set.
        for (const char* key : {"out", "dataset", "seed", "threads", "patch_side",
                                "slices_per_class", "fractions", "epochs", "import",
                                "import_tag"}) {
            std::string flag = "--" + std::string(key);
            std::replace(flag.begin(), flag.end(), '_', '-');
            auto& slot = (*ra_flags)[key];
            cmd->add_option(flag, slot.value, std::string("config key ") + key)
                ->each([&slot](const std::string&) { slot.set = true; });
        }
        cmd->add_option("--set", *ra_sets, "extra key=value overrides")->take_all();
        cmd->callback([=] {
            RunConfig cfg;
            cfg.seed = env_seed();
            if (!ra_config->empty()) load_config_file(cfg, *ra_config);
            for (const auto& [key, slot] : *ra_flags)
                if (slot.set) apply_config_key(cfg, key, slot.value);
            for (const auto& kv : *ra_sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw UsageError("--set expects key=value, got '" + kv + "'");
                apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
            }
            const RunAllResult result = run_all(cfg);
            for (const auto& arm : result.arms) {
                std::cout << arm.tag << ": pretext val "
                          << format_float(arm.pretext_val_accuracy) << ", patch "
                          << format_float(arm.experiment.patch_report.overall) << ", vote "
                          << format_float(arm.experiment.vote_report.overall) << ", concat cv "
                          << format_float(arm.experiment.concat_cv.mean_overall) << ", sum cv "
                          << format_float(arm.experiment.sum_cv.mean_overall) << "\n";
            }
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
