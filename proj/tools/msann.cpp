// Command-line front end: synthetic data generation, stage training,
// evaluation, annotation, gradient checking and the ablation experiment.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "msann/msann.hpp"
#include "msann/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace msann;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value
    std::optional<std::uint64_t> seed;
};

KvConfig load_config(const CommonOpts& opts) {
    KvConfig kv;
    if (!opts.config_path.empty()) kv = KvConfig::parse_file(opts.config_path);
    for (const auto& kvpair : opts.overrides) {
        const auto eq = kvpair.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kvpair + "'");
        kv.set(kvpair.substr(0, eq), kvpair.substr(eq + 1));
    }
    if (opts.seed) {
        kv.set("seed", static_cast<std::int64_t>(*opts.seed));
        kv.set("train_seed", static_cast<std::int64_t>(*opts.seed));
    }
    return kv;
}

ModelConfig model_config_from(const KvConfig& kv, const Dataset& data) {
    ModelConfig cfg = ModelConfig::desk();
    if (kv.has("spatials")) cfg.fusion = FusionNetConfig::from_kv(kv);
    cfg.fusion.input_size = data.manifest.image_size;
    cfg.fusion.input_channels = data.manifest.image_channels;
    if (kv.has("fusion_mode")) cfg.fusion.mode = fusion_mode_from_name(kv.get_string("fusion_mode"));
    if (kv.has("fuse_from")) cfg.fusion.fuse_from = kv.get_int("fuse_from");
    cfg.use_tags = kv.get_bool("use_tags", cfg.use_tags);
    cfg.num_classes = data.num_classes();
    cfg.vocab_size = data.vocab.size();
    cfg.text_hidden = kv.get_int("text_hidden", cfg.text_hidden);
    cfg.lqp_hidden1 = kv.get_int("lqp_hidden1", cfg.lqp_hidden1);
    cfg.lqp_hidden2 = kv.get_int("lqp_hidden2", cfg.lqp_hidden2);
    cfg.max_quantity = data.manifest.max_quantity;
    cfg.validate();
    return cfg;
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << contents;
}

int run_gen_data(const CommonOpts& opts, const std::string& out_dir) {
    KvConfig kv = load_config(opts);
    SynthConfig cfg = SynthConfig::from_kv(kv);
    Dataset ds = generate(cfg);
    save(ds, out_dir);
    std::cout << "generated " << ds.manifest.train_ids.size() << " train / "
              << ds.manifest.test_ids.size() << " test samples in " << out_dir << "\n";
    return 0;
}

int run_train(const CommonOpts& opts, const std::string& data_dir, const std::string& stage_arg,
              const std::string& out_dir, const std::string& init_ckpt) {
    KvConfig kv = load_config(opts);
    Dataset data = load(data_dir);
    ModelConfig mcfg = model_config_from(kv, data);
    TrainConfig tcfg = TrainConfig::from_kv(kv);

    AnnotationModel model(mcfg, tcfg.seed);
    if (!init_ckpt.empty()) model.load(init_ckpt);

    std::vector<Stage> plan;
    if (stage_arg == "all") {
        plan = {Stage::kMainBranch, Stage::kFusionBlocks, Stage::kTextual, Stage::kClassifier,
                Stage::kRegressor};
    } else if (stage_arg == "e2e") {
        plan = {Stage::kEndToEnd};
    } else if (stage_arg.size() == 1 && stage_arg[0] >= '1' && stage_arg[0] <= '5') {
        plan = {static_cast<Stage>(stage_arg[0] - '0')};
    } else {
        throw ConfigError("--stage must be 1..5, e2e or all, got '" + stage_arg + "'");
    }

    fs::create_directories(out_dir);
    TrainLog log;
    for (Stage s : plan) {
        std::cout << "training " << stage_name(s) << "...\n";
        TrainLog stage_log = train_stage(model, s, data, tcfg);
        log.insert(log.end(), stage_log.begin(), stage_log.end());
        model.save((fs::path(out_dir) / (stage_name(s) + ".ckpt")).string());
    }
    model.save((fs::path(out_dir) / "model.ckpt").string());
    write_file((fs::path(out_dir) / "train_log.csv").string(), render_train_log_csv(log));
    std::cout << "saved checkpoints and train_log.csv to " << out_dir << "\n";
    return 0;
}

int run_eval(const CommonOpts& opts, const std::string& data_dir, const std::string& ckpt,
             const std::string& strategy_arg, const std::string& pred_file,
             const std::string& truth_file, const std::string& out_dir) {
    KvConfig kv = load_config(opts);
    if (!pred_file.empty()) {
        // Standalone evaluation of prediction/truth record files.
        PredictionRecords pred = load_predictions(pred_file);
        PredictionRecords truth = load_predictions(truth_file);
        if (pred.ids != truth.ids)
            throw ConfigError("prediction and truth files list different image ids");
        std::int64_t C = 0;
        for (const auto& set : truth.label_sets)
            for (auto j : set) C = std::max(C, j + 1);
        for (const auto& set : pred.label_sets)
            for (auto j : set) C = std::max(C, j + 1);
        MetricsReport report = compute_metrics(tally(pred.label_sets, truth.label_sets, C));
        if (!pred.m_hat.empty()) {
            std::vector<double> m_true;
            for (const auto& set : truth.label_sets) m_true.push_back(static_cast<double>(set.size()));
            std::int64_t max_q = 1;
            for (double m : m_true) max_q = std::max(max_q, static_cast<std::int64_t>(m));
            auto [acc, mse] = lqp_quality(pred.m_hat, m_true, max_q);
            report.lqp_accuracy = acc;
            report.lqp_mse = mse;
        }
        std::cout << report_render_text({{"eval", report}});
        if (!out_dir.empty()) {
            fs::create_directories(out_dir);
            write_file((fs::path(out_dir) / "metrics.csv").string(), report_render(report));
        }
        return 0;
    }

    Dataset data = load(data_dir);
    ModelConfig mcfg = model_config_from(kv, data);
    TrainConfig tcfg = TrainConfig::from_kv(kv);
    AnnotationModel model(mcfg, tcfg.seed);
    model.load(ckpt);
    Strategy strategy = Strategy::parse(strategy_arg);

    auto test = data.test_samples();
    const bool with_lqp = strategy.kind == StrategyKind::kLqp ||
                          strategy.kind == StrategyKind::kGroundTruthQuantity;
    const bool with_qcls = strategy.kind == StrategyKind::kLqpClassification;
    SplitOutputs outputs =
        compute_split_outputs(model, test, ProbsSource::kFinal, with_lqp, with_qcls, tcfg.bn_decay);
    MetricsReport report = evaluate_with_strategy(outputs, strategy, mcfg.max_quantity);
    std::cout << report_render_text({{strategy.name(), report}});
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file((fs::path(out_dir) / "metrics.csv").string(),
                   report_render({{strategy.name(), report}}));
    }
    return 0;
}

int run_annotate(const CommonOpts& opts, const std::string& data_dir, const std::string& ckpt,
                 const std::string& strategy_arg, const std::string& out_file,
                 const std::string& split) {
    KvConfig kv = load_config(opts);
    Dataset data = load(data_dir);
    ModelConfig mcfg = model_config_from(kv, data);
    TrainConfig tcfg = TrainConfig::from_kv(kv);
    AnnotationModel model(mcfg, tcfg.seed);
    model.load(ckpt);
    Strategy strategy = Strategy::parse(strategy_arg);

    auto samples = split == "train" ? data.train_samples() : data.test_samples();
    const bool with_qcls = strategy.kind == StrategyKind::kLqpClassification;
    SplitOutputs outputs =
        compute_split_outputs(model, samples, ProbsSource::kFinal, true, with_qcls, tcfg.bn_decay);
    auto results = annotate_batch(outputs.ids, outputs.probs_tensor(), strategy, mcfg.max_quantity,
                                  &outputs.m_hat, with_qcls ? &outputs.qcls : nullptr,
                                  &outputs.truth_m);

    PredictionRecords records;
    for (const auto& r : results) {
        records.ids.push_back(r.id);
        records.label_sets.push_back(r.selected);
        records.m_hat.push_back(r.m_hat);
    }
    save_predictions(out_file, records);
    std::cout << "wrote " << records.ids.size() << " annotations (" << strategy.name() << ") to "
              << out_file << "\n";
    return 0;
}

int run_ablate(const CommonOpts& opts, const std::string& data_dir, const std::string& out_dir) {
    KvConfig kv = load_config(opts);
    Dataset data = data_dir.empty() ? generate(SynthConfig::from_kv(kv)) : load(data_dir);
    ModelConfig mcfg = model_config_from(kv, data);
    if (!mcfg.use_tags) throw ConfigError("the ablation grid needs use_tags = true");
    TrainConfig tcfg = TrainConfig::from_kv(kv);

    ExperimentResult result = run_experiment(data, mcfg, tcfg);
    std::cout << report_render_text(result.grid) << "\n"
              << report_render_text(result.strategies);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file((fs::path(out_dir) / "metrics.csv").string(), experiment_csv(result));
        write_file((fs::path(out_dir) / "train_log.csv").string(),
                   render_train_log_csv(result.log));
        result.model_tags->save((fs::path(out_dir) / "model_tags.ckpt").string());
        result.model_visual->save((fs::path(out_dir) / "model_visual.ckpt").string());
        std::cout << "wrote metrics.csv, train_log.csv and checkpoints to " << out_dir << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-scale multi-modal image annotation"};
    app.require_subcommand(1);
    app.fallthrough();

    CommonOpts common;
    app.add_option("--config", common.config_path, "key-value config file")
        ->check(CLI::ExistingFile);
    app.add_option("--set", common.overrides, "override a config key, key=value")->take_all();
    app.add_option("--seed", common.seed, "override data and train seeds");

    std::string out_dir, data_dir, stage_arg = "all", init_ckpt, ckpt;
    std::string strategy_arg = "lqp", pred_file, truth_file, out_file, split = "test";
    std::int64_t gradcheck_seeds = 20;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "train pipeline stages");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--stage", stage_arg, "1..5, e2e or all");
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--init", init_ckpt, "checkpoint to start from");

    auto* eval = app.add_subcommand("eval", "evaluate a model or prediction files");
    eval->add_option("--data", data_dir, "dataset directory");
    eval->add_option("--ckpt", ckpt, "model checkpoint");
    eval->add_option("--strategy", strategy_arg, "lqp|topk:K|threshold:P|lqp-cls|gt");
    eval->add_option("--pred", pred_file, "prediction records file");
    eval->add_option("--truth", truth_file, "truth records file");
    eval->add_option("--out", out_dir, "directory for metrics.csv");

    auto* annotate = app.add_subcommand("annotate", "write annotations for a split");
    annotate->add_option("--data", data_dir, "dataset directory")->required();
    annotate->add_option("--ckpt", ckpt, "model checkpoint")->required();
    annotate->add_option("--strategy", strategy_arg, "lqp|topk:K|threshold:P|lqp-cls|gt");
    annotate->add_option("--out", out_file, "output records file")->required();
    annotate->add_option("--split", split, "train or test");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--seeds", gradcheck_seeds, "random seeds per operation");

    auto* ablate = app.add_subcommand("ablate", "run the component ablation grid");
    ablate->add_option("--data", data_dir, "dataset directory (generated when omitted)");
    ablate->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen_data(common, out_dir);
        if (train->parsed()) return run_train(common, data_dir, stage_arg, out_dir, init_ckpt);
        if (eval->parsed()) {
            if (pred_file.empty() && (data_dir.empty() || ckpt.empty()))
                throw ConfigError("eval needs either --pred/--truth or --data/--ckpt");
            if (!pred_file.empty() && truth_file.empty())
                throw ConfigError("eval with --pred also needs --truth");
            return run_eval(common, data_dir, ckpt, strategy_arg, pred_file, truth_file, out_dir);
        }
        if (annotate->parsed())
            return run_annotate(common, data_dir, ckpt, strategy_arg, out_file, split);
        if (gradcheck->parsed()) return run_gradcheck(gradcheck_seeds) ? 0 : 3;
        if (ablate->parsed()) return run_ablate(common, data_dir, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
