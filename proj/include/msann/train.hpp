#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msann/annotate.hpp"
#include "msann/dataset.hpp"
#include "msann/model.hpp"
#include "msann/optimizer.hpp"

namespace msann {

class LineageError : public ConfigError {
public:
    explicit LineageError(const std::string& msg) : ConfigError(msg) {}
};

struct TrainConfig {
    // Per-stage learning rates and step budgets (desk-scale defaults).
    double lr_stage1 = 0.0015, lr_stage2 = 0.002, lr_stage3 = 0.002;
    double lr_stage4 = 0.01, lr_stage5 = 0.0002, lr_e2e = 0.0002;
    double lr_lqp_cls = 0.002;  // the classification-LQP baseline head
    std::int64_t steps_stage1 = 5000, steps_stage2 = 2000, steps_stage3 = 1200;
    std::int64_t steps_stage4 = 1200, steps_stage5 = 2500, steps_e2e = 400;

    std::int64_t batch_size = 16;
    double momentum = 0.9;
    // Batch-norm running-statistics decay. The full-size schedule uses
    // 0.9997; the desk default shortens the horizon to match the shorter
    // runs, in the same 1/40 proportion as the step counts.
    double bn_decay = 0.99;
    // Parameters decay multiplicatively by this factor per step absent
    // gradients; the optimizer coefficient is (1 - rate) / lr.
    double weight_decay_rate = 0.9997;
    double lr_decay_factor = 0.1;
    std::int64_t lr_decay_interval = 2000;
    // Global gradient-norm cap applied before each update; 0 disables. The
    // summed losses make early-step gradients scale with batch size and
    // residual magnitude, so uncapped momentum steps can oscillate.
    double clip_norm = 25.0;
    std::int64_t eval_interval = 100;
    std::int64_t patience = 5;  // evaluation intervals without improvement
    double val_fraction = 0.1;
    std::int64_t eval_topk = 3;  // ranking cut for feature-stage validation
    std::uint64_t seed = 42;

    double lr_for(Stage s) const {
        switch (s) {
            case Stage::kMainBranch: return lr_stage1;
            case Stage::kFusionBlocks: return lr_stage2;
            case Stage::kTextual: return lr_stage3;
            case Stage::kClassifier: return lr_stage4;
            case Stage::kRegressor: return lr_stage5;
            case Stage::kEndToEnd: return lr_e2e;
        }
        throw ConfigError("unknown stage");
    }
    std::int64_t steps_for(Stage s) const {
        switch (s) {
            case Stage::kMainBranch: return steps_stage1;
            case Stage::kFusionBlocks: return steps_stage2;
            case Stage::kTextual: return steps_stage3;
            case Stage::kClassifier: return steps_stage4;
            case Stage::kRegressor: return steps_stage5;
            case Stage::kEndToEnd: return steps_e2e;
        }
        throw ConfigError("unknown stage");
    }

    void validate() const {
        for (double lr : {lr_stage1, lr_stage2, lr_stage3, lr_stage4, lr_stage5, lr_e2e})
            if (lr <= 0.0) throw ConfigError("learning rates must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (weight_decay_rate <= 0.0 || weight_decay_rate > 1.0)
            throw ConfigError("weight_decay_rate must lie in (0,1]");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw ConfigError("val_fraction must lie in [0,1)");
        if (eval_interval < 1 || patience < 1) throw ConfigError("invalid evaluation schedule");
    }

    void to_kv(KvConfig& kv) const {
        kv.set("lr_stage1", lr_stage1);
        kv.set("lr_stage2", lr_stage2);
        kv.set("lr_stage3", lr_stage3);
        kv.set("lr_stage4", lr_stage4);
        kv.set("lr_stage5", lr_stage5);
        kv.set("lr_e2e", lr_e2e);
        kv.set("lr_lqp_cls", lr_lqp_cls);
        kv.set("steps_stage1", steps_stage1);
        kv.set("steps_stage2", steps_stage2);
        kv.set("steps_stage3", steps_stage3);
        kv.set("steps_stage4", steps_stage4);
        kv.set("steps_stage5", steps_stage5);
        kv.set("steps_e2e", steps_e2e);
        kv.set("batch_size", batch_size);
        kv.set("momentum", momentum);
        kv.set("bn_decay", bn_decay);
        kv.set("weight_decay_rate", weight_decay_rate);
        kv.set("lr_decay_factor", lr_decay_factor);
        kv.set("lr_decay_interval", lr_decay_interval);
        kv.set("clip_norm", clip_norm);
        kv.set("eval_interval", eval_interval);
        kv.set("patience", patience);
        kv.set("val_fraction", val_fraction);
        kv.set("eval_topk", eval_topk);
        kv.set("train_seed", static_cast<std::int64_t>(seed));
    }

    static TrainConfig from_kv(const KvConfig& kv) {
        TrainConfig c;
        c.lr_stage1 = kv.get_double("lr_stage1", c.lr_stage1);
        c.lr_stage2 = kv.get_double("lr_stage2", c.lr_stage2);
        c.lr_stage3 = kv.get_double("lr_stage3", c.lr_stage3);
        c.lr_stage4 = kv.get_double("lr_stage4", c.lr_stage4);
        c.lr_stage5 = kv.get_double("lr_stage5", c.lr_stage5);
        c.lr_e2e = kv.get_double("lr_e2e", c.lr_e2e);
        c.lr_lqp_cls = kv.get_double("lr_lqp_cls", c.lr_lqp_cls);
        c.steps_stage1 = kv.get_int("steps_stage1", c.steps_stage1);
        c.steps_stage2 = kv.get_int("steps_stage2", c.steps_stage2);
        c.steps_stage3 = kv.get_int("steps_stage3", c.steps_stage3);
        c.steps_stage4 = kv.get_int("steps_stage4", c.steps_stage4);
        c.steps_stage5 = kv.get_int("steps_stage5", c.steps_stage5);
        c.steps_e2e = kv.get_int("steps_e2e", c.steps_e2e);
        c.batch_size = kv.get_int("batch_size", c.batch_size);
        c.momentum = kv.get_double("momentum", c.momentum);
        c.bn_decay = kv.get_double("bn_decay", c.bn_decay);
        c.weight_decay_rate = kv.get_double("weight_decay_rate", c.weight_decay_rate);
        c.lr_decay_factor = kv.get_double("lr_decay_factor", c.lr_decay_factor);
        c.lr_decay_interval = kv.get_int("lr_decay_interval", c.lr_decay_interval);
        c.clip_norm = kv.get_double("clip_norm", c.clip_norm);
        c.eval_interval = kv.get_int("eval_interval", c.eval_interval);
        c.patience = kv.get_int("patience", c.patience);
        c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
        c.eval_topk = kv.get_int("eval_topk", c.eval_topk);
        c.seed = static_cast<std::uint64_t>(kv.get_int("train_seed", static_cast<std::int64_t>(c.seed)));
        c.validate();
        return c;
    }
};

struct TrainLogRow {
    std::string stage;
    std::int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;     // mean loss since the previous row
    double val_hf1 = 0.0;  // percent
};

using TrainLog = std::vector<TrainLogRow>;

inline std::string render_train_log_csv(const TrainLog& log) {
    std::string out = "stage,step,lr,loss,val_hf1\n";
    for (const auto& row : log)
        out += row.stage + "," + std::to_string(row.step) + "," + fixed(row.lr, 6) + "," +
               fixed(row.loss, 6) + "," + fixed(row.val_hf1, 4) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Split evaluation helpers
// ---------------------------------------------------------------------------

enum class ProbsSource { kAuxMain, kAuxFusion, kAuxText, kFinal };

struct SplitOutputs {
    std::vector<std::string> ids;
    std::int64_t C = 0;
    std::vector<double> probs;            // N x C
    std::vector<double> m_hat;            // empty unless requested
    std::vector<std::int64_t> qcls;       // empty unless requested
    std::vector<double> truth_m;
    LabelSets truth;

    Tensor probs_tensor() const {
        return Tensor::from_data({static_cast<std::int64_t>(ids.size()), C}, probs);
    }
};

// Runs the model over a sample list in eval mode (chunked, no taping) and
// collects probabilities plus, optionally, both quantity heads' outputs.
inline SplitOutputs compute_split_outputs(AnnotationModel& model,
                                          const std::vector<const Sample*>& samples,
                                          ProbsSource source, bool with_lqp, bool with_lqp_cls,
                                          double bn_decay, std::int64_t chunk = 64) {
    NoGradGuard guard;
    SplitOutputs out;
    out.C = model.cfg.num_classes;
    Rng unused_dropout_rng(0);  // dropout is inert in eval mode
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(chunk));
        std::vector<const Sample*> group(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                         samples.begin() + static_cast<std::ptrdiff_t>(end));
        Batch batch = assemble_batch(group, model.cfg.num_classes);
        Tensor probs;
        std::optional<Tensor> features;
        switch (source) {
            case ProbsSource::kAuxMain:
                probs = classify(model.aux_main, model.main_features(batch.images, Mode::kEval, bn_decay)).probs;
                break;
            case ProbsSource::kAuxFusion:
                probs = classify(model.aux_fusion, model.visual_features(batch.images, Mode::kEval, bn_decay)).probs;
                break;
            case ProbsSource::kAuxText:
                probs = classify(model.aux_text, model.text_features(batch.tags)).probs;
                break;
            case ProbsSource::kFinal:
                features = model.features(batch.images, batch.tags, Mode::kEval, bn_decay);
                probs = classify(model.cls, *features).probs;
                break;
        }
        if ((with_lqp || with_lqp_cls) && !features)
            features = model.features(batch.images, batch.tags, Mode::kEval, bn_decay);
        if (with_lqp) {
            Tensor m_hat = model.lqp.forward(*features, Mode::kEval, unused_dropout_rng);
            out.m_hat.insert(out.m_hat.end(), m_hat.data().begin(), m_hat.data().end());
        }
        if (with_lqp_cls) {
            Tensor logits = model.lqp_cls.forward(*features, Mode::kEval, unused_dropout_rng);
            auto q = model.lqp_cls.predict(logits);
            out.qcls.insert(out.qcls.end(), q.begin(), q.end());
        }
        out.probs.insert(out.probs.end(), probs.data().begin(), probs.data().end());
        for (const Sample* s : group) {
            out.ids.push_back(s->id);
            out.truth.push_back(s->labels);
            out.truth_m.push_back(static_cast<double>(s->quantity));
        }
    }
    return out;
}

inline MetricsReport evaluate_with_strategy(const SplitOutputs& outputs, const Strategy& strategy,
                                            std::int64_t max_quantity) {
    auto results = annotate_batch(outputs.ids, outputs.probs_tensor(), strategy, max_quantity,
                                  outputs.m_hat.empty() ? nullptr : &outputs.m_hat,
                                  outputs.qcls.empty() ? nullptr : &outputs.qcls,
                                  &outputs.truth_m);
    MetricsReport report = compute_metrics(tally(selected_sets(results), outputs.truth, outputs.C));
    if (!outputs.m_hat.empty() &&
        (strategy.kind == StrategyKind::kLqp || strategy.kind == StrategyKind::kGroundTruthQuantity)) {
        auto [acc, mse] = lqp_quality(outputs.m_hat, outputs.truth_m, max_quantity);
        report.lqp_accuracy = acc;
        report.lqp_mse = mse;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Stage training
// ---------------------------------------------------------------------------

namespace detail {

// Frozen main-branch maps, precomputed per sample so feature-stage training
// never re-runs the main branch.
struct MapCache {
    std::map<const Sample*, std::size_t> index;
    // maps[scale][sample] = flattened [C,H,W] values
    std::vector<std::vector<std::vector<double>>> maps;

    Tensor batch_scale(const FusionNetConfig& cfg, std::int64_t scale,
                       const std::vector<const Sample*>& group) const {
        const auto& spec = cfg.scales[static_cast<std::size_t>(scale)];
        std::vector<double> data;
        data.reserve(group.size() * maps[static_cast<std::size_t>(scale)].front().size());
        for (const Sample* s : group) {
            const auto& row = maps[static_cast<std::size_t>(scale)][index.at(s)];
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor::from_data(
            {static_cast<std::int64_t>(group.size()), spec.channels, spec.spatial, spec.spatial},
            std::move(data));
    }
};

inline MapCache build_map_cache(AnnotationModel& model, const std::vector<const Sample*>& samples,
                                double bn_decay, std::int64_t chunk = 64) {
    NoGradGuard guard;
    MapCache cache;
    const auto& cfg = model.cfg.fusion;
    cache.maps.resize(static_cast<std::size_t>(cfg.num_scales()));
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(chunk));
        std::vector<const Sample*> group(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                         samples.begin() + static_cast<std::ptrdiff_t>(end));
        Batch batch = assemble_batch(group, model.cfg.num_classes);
        Tensor h = batch.images;
        for (std::int64_t l = 0; l < cfg.num_scales(); ++l) {
            h = model.visual.stages()[static_cast<std::size_t>(l)].forward(h, Mode::kEval, bn_decay);
            const auto per = static_cast<std::size_t>(shape_numel(h.shape()) / h.dim(0));
            for (std::size_t i = 0; i < group.size(); ++i)
                cache.maps[static_cast<std::size_t>(l)].emplace_back(
                    h.data().begin() + static_cast<std::ptrdiff_t>(i * per),
                    h.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
        }
        for (const Sample* s : group) cache.index.emplace(s, cache.index.size());
    }
    return cache;
}

// Fusion recursion on cached main-branch maps.
inline Tensor fused_feature_from_cache(AnnotationModel& model, const MapCache& cache,
                                       const std::vector<const Sample*>& group, Mode mode,
                                       double bn_decay) {
    const auto& cfg = model.cfg.fusion;
    if (cfg.mode == FusionMode::kNone)
        return global_avg_pool(cache.batch_scale(cfg, cfg.num_scales() - 1, group));
    if (cfg.mode == FusionMode::kConcatAvgPool) {
        Tensor f = global_avg_pool(cache.batch_scale(cfg, cfg.fuse_from - 1, group));
        for (std::int64_t l = cfg.fuse_from; l < cfg.num_scales(); ++l)
            f = concat(f, global_avg_pool(cache.batch_scale(cfg, l, group)));
        return f;
    }
    Tensor fused = cache.batch_scale(cfg, cfg.fuse_from - 1, group);
    for (std::int64_t l = cfg.fuse_from; l < cfg.num_scales(); ++l) {
        Tensor contribution = model.visual.blocks()[static_cast<std::size_t>(l - cfg.fuse_from)]
                                  .forward(fused, mode, bn_decay);
        fused = add(cache.batch_scale(cfg, l, group), contribution);
    }
    return global_avg_pool(fused);
}

struct FeatureCache {
    std::map<const Sample*, std::size_t> index;
    std::vector<std::vector<double>> rows;
    std::int64_t dim = 0;

    Tensor batch(const std::vector<const Sample*>& group) const {
        std::vector<double> data;
        data.reserve(group.size() * static_cast<std::size_t>(dim));
        for (const Sample* s : group) {
            const auto& row = rows[index.at(s)];
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor::from_data({static_cast<std::int64_t>(group.size()), dim}, std::move(data));
    }
};

inline FeatureCache build_feature_cache(AnnotationModel& model,
                                        const std::vector<const Sample*>& samples, double bn_decay,
                                        std::int64_t chunk = 64) {
    NoGradGuard guard;
    FeatureCache cache;
    cache.dim = model.cfg.joint_dim();
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(chunk));
        std::vector<const Sample*> group(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                         samples.begin() + static_cast<std::ptrdiff_t>(end));
        Batch batch = assemble_batch(group, model.cfg.num_classes);
        Tensor f = model.features(batch.images, batch.tags, Mode::kEval, bn_decay);
        const auto per = static_cast<std::size_t>(cache.dim);
        for (std::size_t i = 0; i < group.size(); ++i) {
            cache.rows.emplace_back(f.data().begin() + static_cast<std::ptrdiff_t>(i * per),
                                    f.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
            cache.index.emplace(group[i], cache.index.size());
        }
    }
    return cache;
}

}  // namespace detail

// Trains one stage of the plan. Only stage-owned parameters change; frozen
// components run in eval mode from per-sample caches. Logs mean loss and
// validation H-F1 every eval_interval steps and stops early when the
// validation score plateaus for `patience` consecutive evaluations.
inline TrainLog train_stage(AnnotationModel& model, Stage stage, const Dataset& data,
                            const TrainConfig& cfg) {
    cfg.validate();
    const bool has_fusion = model.cfg.fusion.mode == FusionMode::kSum ||
                            model.cfg.fusion.mode == FusionMode::kMaxPoolPhi1;

    // Lineage requirements.
    auto require = [&](Stage s) {
        if (!model.stage_completed(s))
            throw LineageError("stage '" + stage_name(stage) + "' requires completed '" +
                               stage_name(s) + "'; train that stage first or load its checkpoint");
    };
    switch (stage) {
        case Stage::kMainBranch:
        case Stage::kTextual:
            break;
        case Stage::kFusionBlocks:
            require(Stage::kMainBranch);
            break;
        case Stage::kClassifier:
            require(Stage::kMainBranch);
            if (has_fusion) require(Stage::kFusionBlocks);
            if (model.cfg.use_tags) require(Stage::kTextual);
            break;
        case Stage::kRegressor:
            require(Stage::kClassifier);
            break;
        case Stage::kEndToEnd:
            require(Stage::kMainBranch);
            if (has_fusion) require(Stage::kFusionBlocks);
            if (model.cfg.use_tags) require(Stage::kTextual);
            break;
    }

    TrainLog log;
    // Vacuous stages complete immediately: nothing to train.
    if ((stage == Stage::kFusionBlocks && !has_fusion) ||
        (stage == Stage::kTextual && !model.cfg.use_tags)) {
        model.mark_completed(stage);
        return log;
    }

    // Deterministic train/validation carve-out of the train split.
    std::vector<const Sample*> pool = data.train_samples();
    {
        Rng rng(Rng::derive(cfg.seed, "val-split"));
        rng.shuffle(pool);
    }
    const auto val_n = static_cast<std::size_t>(
        std::max<std::int64_t>(cfg.val_fraction > 0.0 ? 1 : 0,
                               static_cast<std::int64_t>(cfg.val_fraction * static_cast<double>(pool.size()))));
    std::vector<const Sample*> val(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(val_n));
    std::vector<const Sample*> train(pool.begin() + static_cast<std::ptrdiff_t>(val_n), pool.end());
    if (train.empty()) throw ConfigError("no training samples left after the validation carve-out");

    std::vector<ParamRef> owned = model.stage_params(stage);
    std::vector<ParamRef> owned_reg, owned_qcls;
    if (stage == Stage::kRegressor) {
        model.lqp.params("lqp", owned_reg);
        model.lqp_cls.params("lqp_cls", owned_qcls);
    }
    SgdMomentum optimizer(cfg.momentum);
    SgdMomentum qcls_optimizer(cfg.momentum);

    // Caches of everything frozen for this stage.
    std::optional<detail::MapCache> map_cache;
    std::optional<detail::FeatureCache> feature_cache;
    std::vector<const Sample*> everything = train;
    everything.insert(everything.end(), val.begin(), val.end());
    if (stage == Stage::kFusionBlocks || stage == Stage::kEndToEnd)
        map_cache = detail::build_map_cache(model, everything, cfg.bn_decay);
    if (stage == Stage::kClassifier || stage == Stage::kRegressor)
        feature_cache = detail::build_feature_cache(model, everything, cfg.bn_decay);

    Rng dropout_rng(Rng::derive(cfg.seed, "dropout", static_cast<std::uint64_t>(stage)));

    // One training step: forward the stage's subgraph and return the loss.
    auto step_loss = [&](const Batch& batch) -> Tensor {
        switch (stage) {
            case Stage::kMainBranch: {
                Tensor f = model.main_features(batch.images, Mode::kTrain, cfg.bn_decay);
                return cls_loss(classify(model.aux_main, f).logits, batch.labels);
            }
            case Stage::kFusionBlocks: {
                Tensor f = detail::fused_feature_from_cache(model, *map_cache, batch.samples,
                                                            Mode::kTrain, cfg.bn_decay);
                return cls_loss(classify(model.aux_fusion, f).logits, batch.labels);
            }
            case Stage::kTextual: {
                Tensor f = model.text_features(batch.tags);
                return cls_loss(classify(model.aux_text, f).logits, batch.labels);
            }
            case Stage::kClassifier: {
                Tensor f = feature_cache->batch(batch.samples);
                return cls_loss(classify(model.cls, f).logits, batch.labels);
            }
            case Stage::kRegressor: {
                Tensor f = feature_cache->batch(batch.samples);
                Tensor m_hat = model.lqp.forward(f, Mode::kTrain, dropout_rng);
                return reg_loss(m_hat, batch.labels.quantities);
            }
            case Stage::kEndToEnd: {
                Tensor f_v = detail::fused_feature_from_cache(model, *map_cache, batch.samples,
                                                              Mode::kTrain, cfg.bn_decay);
                Tensor f = model.cfg.use_tags ? joint_feature(f_v, model.text_features(batch.tags))
                                              : f_v;
                Tensor cls = cls_loss(classify(model.cls, f).logits, batch.labels);
                Tensor m_hat = model.lqp.forward(f, Mode::kTrain, dropout_rng);
                return add(cls, reg_loss(m_hat, batch.labels.quantities));
            }
        }
        throw ConfigError("unknown stage");
    };

    // Validation H-F1 with the stage-appropriate probability source.
    auto validation_hf1 = [&]() -> double {
        ProbsSource source = ProbsSource::kFinal;
        Strategy strategy;
        strategy.kind = StrategyKind::kTopK;
        strategy.k = cfg.eval_topk;
        switch (stage) {
            case Stage::kMainBranch: source = ProbsSource::kAuxMain; break;
            case Stage::kFusionBlocks: source = ProbsSource::kAuxFusion; break;
            case Stage::kTextual: source = ProbsSource::kAuxText; break;
            case Stage::kClassifier: source = ProbsSource::kFinal; break;
            case Stage::kRegressor:
            case Stage::kEndToEnd:
                source = ProbsSource::kFinal;
                strategy.kind = StrategyKind::kLqp;
                break;
        }
        const bool with_lqp = strategy.kind == StrategyKind::kLqp;
        SplitOutputs outputs = compute_split_outputs(model, val, source, with_lqp, false, cfg.bn_decay);
        return evaluate_with_strategy(outputs, strategy, model.cfg.max_quantity).h_f1;
    };

    const double base_lr = cfg.lr_for(stage);
    const std::int64_t max_steps = cfg.steps_for(stage);
    double best_val = -1.0;
    std::int64_t stale_evals = 0;
    double loss_accum = 0.0;
    std::int64_t loss_count = 0;
    std::uint64_t epoch = 0;
    BatchIterator batches(train, model.cfg.num_classes, cfg.batch_size, cfg.seed, epoch, true);

    for (std::int64_t step = 1; step <= max_steps; ++step) {
        auto batch = batches.next();
        if (!batch) {
            ++epoch;
            batches = BatchIterator(train, model.cfg.num_classes, cfg.batch_size, cfg.seed, epoch, true);
            batch = batches.next();
        }
        const double lr =
            base_lr * std::pow(cfg.lr_decay_factor, static_cast<double>((step - 1) / cfg.lr_decay_interval));
        optimizer.set_weight_decay((1.0 - cfg.weight_decay_rate) / lr);

        auto clip_gradients = [&](std::vector<ParamRef>& params) {
            if (cfg.clip_norm <= 0.0) return;
            double sq = 0.0;
            for (auto& p : params)
                if (p.tensor.has_grad())
                    for (double g : p.tensor.grad()) sq += g * g;
            const double norm = std::sqrt(sq);
            if (norm > cfg.clip_norm) {
                const double scale = cfg.clip_norm / norm;
                for (auto& p : params)
                    if (p.tensor.has_grad())
                        for (double& g : p.tensor.grad_ref()) g *= scale;
            }
        };
        auto run_update = [&](std::vector<ParamRef>& params, SgdMomentum& opt, Tensor loss,
                              double rate) {
            if (!std::isfinite(loss.item()))
                throw NumericError("non-finite loss at " + stage_name(stage) + " step " +
                                   std::to_string(step));
            loss.backward();
            clip_gradients(params);
            opt.step(params, rate);
            return loss.item();
        };

        if (stage == Stage::kRegressor) {
            // The regressor and the classification baseline are independent
            // heads on the same frozen features; each trains on its own loss
            // with its own rate so neither starves the other.
            Tensor f = feature_cache->batch(batch->samples);
            zero_all_grads(owned_reg);
            Tensor m_hat = model.lqp.forward(f, Mode::kTrain, dropout_rng);
            loss_accum += run_update(owned_reg, optimizer, reg_loss(m_hat, batch->labels.quantities), lr);
            zero_all_grads(owned_qcls);
            Tensor qc_logits = model.lqp_cls.forward(f, Mode::kTrain, dropout_rng);
            qcls_optimizer.set_weight_decay((1.0 - cfg.weight_decay_rate) / cfg.lr_lqp_cls);
            run_update(owned_qcls, qcls_optimizer,
                       model.lqp_cls.loss(qc_logits, batch->labels.quantities), cfg.lr_lqp_cls);
        } else {
            zero_all_grads(owned);
            loss_accum += run_update(owned, optimizer, step_loss(*batch), lr);
        }
        ++loss_count;

        if (step % cfg.eval_interval == 0 || step == max_steps) {
            const double val_hf1 = val.empty() ? 0.0 : validation_hf1();
            log.push_back({stage_name(stage), step, lr, loss_accum / static_cast<double>(loss_count),
                           val_hf1});
            loss_accum = 0.0;
            loss_count = 0;
            if (val_hf1 > best_val + 1e-12) {
                best_val = val_hf1;
                stale_evals = 0;
            } else if (++stale_evals >= cfg.patience) {
                break;
            }
        }
    }

    model.mark_completed(stage);
    return log;
}

}  // namespace msann
