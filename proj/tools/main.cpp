// stainfocus command-line interface.
//
// Exit codes: 0 success, 2 configuration error, 3 validation error (bad data
// or inputs), 4 runtime failure, 5 evaluation produced an undefined metric.

#include "stainfocus/checkpoint.hpp"
#include "stainfocus/config.hpp"
#include "stainfocus/errors.hpp"
#include "stainfocus/focus_analysis.hpp"
#include "stainfocus/platform.hpp"
#include "stainfocus/version.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <memory>

namespace fs = std::filesystem;
using namespace stainfocus;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitValidation = 3;
constexpr int kExitRuntime = 4;
constexpr int kExitNaN = 5;

// Flags shared by every subcommand; unset flags leave file values alone.
struct CommonFlags {
    std::optional<std::string> config_file;
    std::optional<std::string> out;
    std::optional<std::string> run_name;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("-c,--config", f.config_file, "Run config file (dotted key = value lines)");
    cmd->add_option("-o,--out", f.out, "Output root; results go to <out>/<run-name>/");
    cmd->add_option("-n,--run-name", f.run_name, "Run name");
    cmd->add_option("-s,--seed", f.seed, "Global seed (falls back to FLUO_SEED, then 0)");
    cmd->add_option("--set", f.overrides, "Override any config key: --set train.stage2_epochs=30")->take_all();
}

RunConfig resolve(const CommonFlags& f, KeyValues extra) {
    RunConfig cfg = load_run_config(f.config_file ? std::optional<fs::path>(*f.config_file) : std::nullopt);
    KeyValues flags;
    for (const auto& item : f.overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + item + "'");
        flags[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
    }
    if (f.out) flags["paths.out"] = *f.out;
    if (f.run_name) flags["run.name"] = *f.run_name;
    if (f.seed) flags["run.seed"] = std::to_string(*f.seed);
    for (auto& [k, v] : extra) flags[k] = v;
    apply_key_values(cfg, flags);
    cfg.train.seed = cfg.seed;
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

// Resolved config plus code version and seed; makes every run directory self-describing.
fs::path prepare_run_dir(const RunConfig& cfg, const std::string& command) {
    const fs::path dir = cfg.run_dir();
    fs::create_directories(dir);
    write_text(dir / "config.resolved", format_key_values(to_key_values(cfg)));
    write_json(dir / "run_info.json", {{"command", command},
                                       {"seed", cfg.seed},
                                       {"version", kVersion},
                                       {"source_digest", kSourceDigest}});
    return dir;
}

void log_epoch(std::ostream& jsonl, const EpochRecord& r) {
    jsonl << to_json(r).dump() << '\n';
    std::cerr << "  stage " << r.stage << " epoch " << r.epoch << "  loss " << r.loss << "  train acc " << r.train_accuracy;
    if (r.val_accuracy) std::cerr << "  val acc " << *r.val_accuracy;
    if (r.val_mae) std::cerr << "  val mae " << *r.val_mae;
    std::cerr << '\n';
}

int finish_metrics(const MetricsReport& m, const fs::path& dir) {
    write_json(dir / "metrics.json", to_json(m));
    std::cout << "accuracy " << m.accuracy << "  plcc " << m.plcc << "  srcc " << m.srcc << "  mae " << m.mae << "  (n=" << m.count
              << ")\n";
    if (m.has_nan()) {
        std::cerr << "error: at least one metric is undefined (NaN); see " << (dir / "metrics.json").string() << '\n';
        return kExitNaN;
    }
    return 0;
}

// ---- commands --------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg) {
    const fs::path dir = prepare_run_dir(cfg, "gen-data");
    const fs::path data = dir / "data";
    fs::remove_all(data);
    const DatasetManifest m = generate_dataset(cfg.resolved_gen(), data);
    const std::string digest = dataset_digest(data);
    write_text(dir / "dataset_hash.txt", digest + "\n");
    std::cout << "wrote " << m.entries.size() << " images to " << data.string() << "\ndataset hash " << digest << '\n';
    return 0;
}

int cmd_analyze(const RunConfig& cfg) {
    const fs::path dir = prepare_run_dir(cfg, "analyze");
    const AnalysisReport report = analyze_dataset(load_manifest(cfg.manifest_path()));
    write_analysis_outputs(report, dir);
    for (const auto& [stain, rho] : report.per_stain_srcc) {
        std::cout << stain << "  srcc ";
        if (rho) std::cout << *rho; else std::cout << "undefined";
        std::cout << '\n';
    }
    std::cout << "mean |srcc| " << report.mean_abs_srcc << " +/- " << report.std_abs_srcc << '\n';
    return 0;
}

struct Split {
    DatasetManifest manifest, train_manifest, test_manifest;
    std::vector<Sample> train, test;
};

Split load_split(const RunConfig& cfg, const fs::path& dir) {
    Split s;
    s.manifest = load_manifest(cfg.manifest_path());
    std::tie(s.train_manifest, s.test_manifest) = split_by_fov(s.manifest, cfg.test_fraction, cfg.seed);
    if (s.train_manifest.entries.empty() || s.test_manifest.entries.empty())
        throw ValidationError("the field-of-view split left an empty train or test set");
    save_manifest(with_absolute_paths(s.test_manifest), dir / "test_manifest.csv");
    s.train = load_samples(s.train_manifest);
    s.test = load_samples(s.test_manifest);
    return s;
}

int cmd_train(const RunConfig& cfg, const std::string& stage) {
    if (stage != "1" && stage != "2" && stage != "all") throw ConfigError("--stage must be 1, 2 or all");
    if (!cfg.baseline) {
        if (stage == "2" && needs_grounding(cfg.variant) && cfg.checkpoint.empty())
            throw ConfigError("variant " + variant_name(cfg.variant) +
                              " needs a grounded model: run `train --stage 1` first and pass its stage1.ckpt via "
                              "--checkpoint, or use --stage all");
        if (stage == "1" && !needs_grounding(cfg.variant))
            throw ConfigError("variant " + variant_name(cfg.variant) + " has no grounding stage; use --stage 2");
    }
    const fs::path dir = prepare_run_dir(cfg, "train --stage " + stage);
    const Split data = load_split(cfg, dir);
    const int image_size = data.train.front().image.height;
    std::ofstream jsonl(dir / "train_log.jsonl");

    if (cfg.baseline) {
        VisionConfig vision;
        vision.image_size = image_size;
        BaselineModel model(*cfg.baseline, vision, data.manifest.num_levels,
                            static_cast<int>(data.manifest.stain_vocabulary.size()), cfg.seed);
        std::cerr << "training " << baseline_name(*cfg.baseline) << " baseline\n";
        for (const auto& r : baseline_train(model, data.train, &data.test, cfg.train).log) log_epoch(jsonl, r);
        model.save(dir / "model.ckpt");
        return finish_metrics(evaluate_samples(model, data.test, data.manifest.stain_vocabulary), dir);
    }

    ModelConfig mc = cfg.model_config(data.manifest.stain_vocabulary, data.manifest.num_levels);
    mc.vision.image_size = image_size;
    std::unique_ptr<StainRankModel> model;
    if (stage == "1" || stage == "all") {
        model = std::make_unique<StainRankModel>(mc);
        std::cerr << "stage 1: stain grounding\n";
        const StageResult r = stage1_train(*model, data.train, &data.test, cfg.train);
        for (const auto& rec : r.log) log_epoch(jsonl, rec);
        model->save(dir / "stage1.ckpt");
        const double acc = stain_accuracy(*model, data.test);
        write_json(dir / "stage1_metrics.json", {{"stain_accuracy", acc}, {"count", data.test.size()}});
        std::cout << "held-out stain accuracy " << acc << '\n';
    }
    if (stage == "2" || stage == "all") {
        if (!model) {
            if (needs_grounding(cfg.variant)) {
                model = std::make_unique<StainRankModel>(StainRankModel::load(cfg.checkpoint));
                if (model->completed_stage() < 1)
                    throw ConfigError("checkpoint " + cfg.checkpoint.string() + " has not completed stage 1");
                if (model->config().stains != data.manifest.stain_vocabulary)
                    throw ValidationError("checkpoint stain vocabulary differs from the manifest's");
                model->set_variant(cfg.variant);
            } else {
                model = std::make_unique<StainRankModel>(mc);
            }
        }
        std::cerr << "stage 2: ranking, variant " << variant_name(cfg.variant) << '\n';
        const StageResult r = stage2_train(*model, data.train, &data.test, cfg.train);
        for (const auto& rec : r.log) log_epoch(jsonl, rec);
        model->save(dir / "model.ckpt");
        return finish_metrics(evaluate_samples(*model, data.test, data.manifest.stain_vocabulary), dir);
    }
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    const fs::path dir = prepare_run_dir(cfg, "eval");
    const DatasetManifest manifest = load_manifest(cfg.manifest_path());
    const std::string kind = read_checkpoint(cfg.checkpoint).config.value("kind", "");
    if (kind == "baseline") return finish_metrics(evaluate(BaselineModel::load(cfg.checkpoint), manifest), dir);
    const StainRankModel model = StainRankModel::load(cfg.checkpoint);
    if (model.config().stains != manifest.stain_vocabulary)
        throw ValidationError("checkpoint stain vocabulary differs from the manifest's");
    return finish_metrics(evaluate(model, manifest), dir);
}

int cmd_ablate(const RunConfig& cfg) {
    const fs::path dir = prepare_run_dir(cfg, "ablate");
    const Split data = load_split(cfg, dir);
    ModelConfig mc = cfg.model_config(data.manifest.stain_vocabulary, data.manifest.num_levels);
    mc.vision.image_size = data.train.front().image.height;
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < cfg.ablation_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
    const AblationTable table = run_ablation_ladder(data.train, data.test, mc, cfg.train, cfg.ablation_variants, seeds,
                                                    [](const AblationRun& run) {
                                                        std::cerr << "  " << run.tag << " seed " << run.seed << "  accuracy "
                                                                  << run.metrics.accuracy << "  mae " << run.metrics.mae << '\n';
                                                    });
    write_json(dir / "ablation_table.json", to_json(table));
    write_text(dir / "ablation_table.csv", ablation_csv(table));
    std::cout << ablation_csv(table);
    return 0;
}

int cmd_fewshot(const RunConfig& cfg, int shots) {
    const fs::path dir = prepare_run_dir(cfg, "fewshot-sample");
    const DatasetManifest sampled = fewshot_sample(load_manifest(cfg.manifest_path()), shots, cfg.seed);
    save_manifest(with_absolute_paths(sampled), dir / "fewshot_manifest.csv");
    std::cout << "sampled " << sampled.entries.size() << " entries into " << (dir / "fewshot_manifest.csv").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    configure_allocator();
    CLI::App app{"Stain-aware ordinal focus assessment: synthetic data, analysis, training and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion) + " (" + std::string(kSourceDigest).substr(0, 12) + ")");

    CommonFlags common;
    std::string stage = "all";
    std::optional<std::string> variant, baseline, manifest, checkpoint, variants;
    std::optional<int> seeds;
    int shots = 1;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-stain z-stack dataset");
    add_common(gen, common);

    auto* analyze = app.add_subcommand("analyze", "Spatial-frequency analysis of a manifest");
    add_common(analyze, common);
    analyze->add_option("-m,--manifest", manifest, "Manifest CSV");

    auto* train = app.add_subcommand("train", "Train the two-stage model or a baseline");
    add_common(train, common);
    train->add_option("--stage", stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}));
    train->add_option("--variant", variant, "Ablation variant A-E");
    train->add_option("--baseline", baseline, "Train a baseline instead: CE or OE");
    train->add_option("-m,--manifest", manifest, "Manifest CSV");
    train->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint for --stage 2 with variants D/E");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
    add_common(eval, common);
    eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    eval->add_option("-m,--manifest", manifest, "Manifest CSV")->required();

    auto* ablate = app.add_subcommand("ablate", "Run the ablation ladder over seeds");
    add_common(ablate, common);
    ablate->add_option("-m,--manifest", manifest, "Manifest CSV");
    ablate->add_option("--variants", variants, "Comma-separated tags from A-E, CE, OE");
    ablate->add_option("--seeds", seeds, "Number of seeds");

    auto* fewshot = app.add_subcommand("fewshot-sample", "Draw k samples per (stain, rank) cell");
    add_common(fewshot, common);
    fewshot->add_option("-m,--manifest", manifest, "Manifest CSV")->required();
    fewshot->add_option("-k,--k", shots, "Samples per cell")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        KeyValues extra;
        if (manifest) extra["paths.manifest"] = *manifest;
        if (checkpoint) extra["paths.checkpoint"] = *checkpoint;
        if (variant) extra["ablation.variant"] = *variant;
        if (baseline) extra["ablation.baseline"] = *baseline;
        if (variants) extra["ablation.variants"] = *variants;
        if (seeds) extra["ablation.seeds"] = std::to_string(*seeds);
        const RunConfig cfg = resolve(common, extra);
        cfg.train.validate();

        if (gen->parsed()) return cmd_gen_data(cfg);
        if (analyze->parsed()) return cmd_analyze(cfg);
        if (train->parsed()) return cmd_train(cfg, stage);
        if (eval->parsed()) return cmd_eval(cfg);
        if (ablate->parsed()) return cmd_ablate(cfg);
        if (fewshot->parsed()) return cmd_fewshot(cfg, shots);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const ParseError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
