#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "msann/train.hpp"

namespace msann {

// The five-variant component grid plus the ground-truth-quantity upper
// bound, in the canonical table order.
inline const std::vector<std::string>& experiment_row_names() {
    static const std::vector<std::string> names = {
        "UpperBound", "MS-CNN+Tags+LQP", "MS-CNN+LQP", "MS-CNN+Tags", "MS-CNN", "CNN",
    };
    return names;
}

struct ExperimentResult {
    std::vector<std::pair<std::string, MetricsReport>> grid;        // canonical 6 rows
    std::vector<std::pair<std::string, MetricsReport>> strategies;  // quantity-strategy sweep
    TrainLog log;
    std::unique_ptr<AnnotationModel> model_tags;    // full multi-modal model
    std::unique_ptr<AnnotationModel> model_visual;  // tag-free variant sharing the visual branch

    const MetricsReport& row(const std::string& name) const {
        for (const auto& [n, r] : grid)
            if (n == name) return r;
        for (const auto& [n, r] : strategies)
            if (n == name) return r;
        throw ConfigError("experiment has no row named '" + name + "'");
    }
};

// Trains the stage plan once for the multi-modal model, re-trains the heads
// on a tag-free variant that shares the same visual branch, and evaluates
// every variant of the component grid plus the label-quantity strategy
// sweep on the test split. The classifier is shared within each feature
// configuration, exactly as in the component-effectiveness tables: rows
// differ by the quantity source, not by re-trained classifiers.
inline ExperimentResult run_experiment(const Dataset& data, const ModelConfig& base_config,
                                       const TrainConfig& tcfg) {
    if (!base_config.use_tags)
        throw ConfigError("run_experiment needs the multi-modal base config (use_tags = true)");
    ExperimentResult result;

    // Multi-modal model: full stage plan.
    result.model_tags = std::make_unique<AnnotationModel>(base_config, tcfg.seed);
    AnnotationModel& model_a = *result.model_tags;
    for (Stage s : {Stage::kMainBranch, Stage::kFusionBlocks, Stage::kTextual, Stage::kClassifier,
                    Stage::kRegressor}) {
        TrainLog stage_log = train_stage(model_a, s, data, tcfg);
        result.log.insert(result.log.end(), stage_log.begin(), stage_log.end());
    }

    // Tag-free variant: adopt the trained visual branch, then train its own
    // classifier and quantity heads on the visual-only feature.
    ModelConfig visual_config = base_config;
    visual_config.use_tags = false;
    result.model_visual = std::make_unique<AnnotationModel>(visual_config, tcfg.seed);
    AnnotationModel& model_b = *result.model_visual;
    model_b.adopt_visual_branch(model_a);
    for (Stage s : {Stage::kTextual, Stage::kClassifier, Stage::kRegressor}) {
        TrainLog stage_log = train_stage(model_b, s, data, tcfg);
        for (auto& row : stage_log) row.stage = "visual-" + row.stage;
        result.log.insert(result.log.end(), stage_log.begin(), stage_log.end());
    }

    // One evaluation pass per probability source; the strategies reuse them.
    auto test = data.test_samples();
    SplitOutputs out_tags =
        compute_split_outputs(model_a, test, ProbsSource::kFinal, true, false, tcfg.bn_decay);
    SplitOutputs out_visual =
        compute_split_outputs(model_b, test, ProbsSource::kFinal, true, true, tcfg.bn_decay);
    SplitOutputs out_cnn =
        compute_split_outputs(model_a, test, ProbsSource::kAuxMain, false, false, tcfg.bn_decay);

    const std::int64_t max_q = base_config.max_quantity;
    Strategy lqp;
    Strategy topk;
    topk.kind = StrategyKind::kTopK;
    topk.k = tcfg.eval_topk;
    Strategy gt;
    gt.kind = StrategyKind::kGroundTruthQuantity;

    result.grid.emplace_back("UpperBound", evaluate_with_strategy(out_tags, gt, max_q));
    result.grid.emplace_back("MS-CNN+Tags+LQP", evaluate_with_strategy(out_tags, lqp, max_q));
    result.grid.emplace_back("MS-CNN+LQP", evaluate_with_strategy(out_visual, lqp, max_q));
    result.grid.emplace_back("MS-CNN+Tags", evaluate_with_strategy(out_tags, topk, max_q));
    result.grid.emplace_back("MS-CNN", evaluate_with_strategy(out_visual, topk, max_q));
    result.grid.emplace_back("CNN", evaluate_with_strategy(out_cnn, topk, max_q));

    // Quantity-determination sweep on the visual-only model.
    result.strategies.emplace_back("strategy:lqp", evaluate_with_strategy(out_visual, lqp, max_q));
    for (std::int64_t k : {1, 2, 3}) {
        Strategy s;
        s.kind = StrategyKind::kTopK;
        s.k = k;
        result.strategies.emplace_back("strategy:topk:" + std::to_string(k),
                                       evaluate_with_strategy(out_visual, s, max_q));
    }
    for (double p : {0.1, 0.3, 0.5, 0.7}) {
        Strategy s;
        s.kind = StrategyKind::kThreshold;
        s.threshold = p;
        result.strategies.emplace_back("strategy:threshold:" + fixed(p, 1),
                                       evaluate_with_strategy(out_visual, s, max_q));
    }
    Strategy qcls;
    qcls.kind = StrategyKind::kLqpClassification;
    result.strategies.emplace_back("strategy:lqp-cls",
                                   evaluate_with_strategy(out_visual, qcls, max_q));

    return result;
}

inline std::string experiment_csv(const ExperimentResult& result) {
    std::vector<std::pair<std::string, MetricsReport>> rows = result.grid;
    rows.insert(rows.end(), result.strategies.begin(), result.strategies.end());
    return report_render(rows);
}

}  // namespace msann
