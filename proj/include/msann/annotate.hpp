#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "msann/metrics.hpp"
#include "msann/model.hpp"

namespace msann {

enum class StrategyKind { kLqp, kTopK, kThreshold, kLqpClassification, kGroundTruthQuantity };

// How many labels to keep from the probability ranking.
struct Strategy {
    StrategyKind kind = StrategyKind::kLqp;
    std::int64_t k = 3;        // topk
    double threshold = 0.3;    // threshold

    // "lqp" | "topk:K" | "threshold:P" | "lqp-cls" | "gt"
    static Strategy parse(const std::string& text) {
        Strategy s;
        if (text == "lqp") {
            s.kind = StrategyKind::kLqp;
        } else if (text.rfind("topk:", 0) == 0) {
            s.kind = StrategyKind::kTopK;
            s.k = std::stoll(text.substr(5));
            if (s.k < 1) throw ConfigError("topk strategy needs k >= 1");
        } else if (text.rfind("threshold:", 0) == 0) {
            s.kind = StrategyKind::kThreshold;
            s.threshold = std::stod(text.substr(10));
            if (s.threshold <= 0.0 || s.threshold >= 1.0)
                throw ConfigError("threshold strategy needs p in (0,1)");
        } else if (text == "lqp-cls") {
            s.kind = StrategyKind::kLqpClassification;
        } else if (text == "gt") {
            s.kind = StrategyKind::kGroundTruthQuantity;
        } else {
            throw ConfigError("unknown strategy '" + text +
                              "'; expected lqp|topk:K|threshold:P|lqp-cls|gt");
        }
        return s;
    }

    std::string name() const {
        switch (kind) {
            case StrategyKind::kLqp: return "lqp";
            case StrategyKind::kTopK: return "topk:" + std::to_string(k);
            case StrategyKind::kThreshold: return "threshold:" + fixed(threshold, 1);
            case StrategyKind::kLqpClassification: return "lqp-cls";
            case StrategyKind::kGroundTruthQuantity: return "gt";
        }
        throw ConfigError("unknown strategy");
    }
};

struct AnnotationResult {
    std::string id;
    std::vector<std::int64_t> ranked;    // all classes by descending probability
    std::vector<std::int64_t> selected;  // the top of the ranking, per strategy
    double m_hat = 0.0;                  // raw regressor output when available
    std::string strategy;
};

// Ranks classes by descending probability; equal probabilities break by
// ascending class index, so selection is deterministic.
inline std::vector<std::int64_t> rank_classes(const double* probs, std::int64_t C) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(C));
    for (std::int64_t j = 0; j < C; ++j) order[static_cast<std::size_t>(j)] = j;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int64_t a, std::int64_t b) { return probs[a] > probs[b]; });
    return order;
}

inline std::vector<std::int64_t> tie_break(const std::vector<double>& probs,
                                           std::int64_t quantity) {
    const auto C = static_cast<std::int64_t>(probs.size());
    auto order = rank_classes(probs.data(), C);
    const std::int64_t take = std::min(quantity, C);
    return {order.begin(), order.begin() + take};
}

inline std::int64_t clamp_quantity(double m_hat, std::int64_t max_quantity) {
    const double rounded = std::round(m_hat);
    return static_cast<std::int64_t>(std::min(static_cast<double>(max_quantity),
                                              std::max(1.0, rounded)));
}

// Applies a quantity strategy to precomputed per-image probabilities.
//   probs        [N,C] classifier probabilities
//   m_hat        raw regressor outputs (required by lqp)
//   cls_quantity categorical-head argmax quantities (required by lqp-cls)
//   truth_m      ground-truth quantities (required by gt)
inline std::vector<AnnotationResult> annotate_batch(
    const std::vector<std::string>& ids, const Tensor& probs, const Strategy& strategy,
    std::int64_t max_quantity, const std::vector<double>* m_hat = nullptr,
    const std::vector<std::int64_t>* cls_quantity = nullptr,
    const std::vector<double>* truth_m = nullptr) {
    const std::int64_t N = probs.dim(0), C = probs.dim(1);
    if (static_cast<std::size_t>(N) != ids.size())
        throw DimensionError("annotate: " + std::to_string(ids.size()) + " ids for " +
                             std::to_string(N) + " probability rows");
    if (strategy.kind == StrategyKind::kLqp && !m_hat)
        throw ContractError("lqp strategy requires regressor outputs");
    if (strategy.kind == StrategyKind::kLqpClassification && !cls_quantity)
        throw ContractError("lqp-cls strategy requires the classification head's quantities");
    if (strategy.kind == StrategyKind::kGroundTruthQuantity && !truth_m)
        throw ContractError("ground_truth_quantity strategy requires ground-truth quantities");

    std::vector<AnnotationResult> out(static_cast<std::size_t>(N));
    for (std::int64_t i = 0; i < N; ++i) {
        auto& r = out[static_cast<std::size_t>(i)];
        r.id = ids[static_cast<std::size_t>(i)];
        r.strategy = strategy.name();
        const double* row = probs.data().data() + i * C;
        r.ranked = rank_classes(row, C);
        std::int64_t quantity = 0;
        switch (strategy.kind) {
            case StrategyKind::kLqp:
                r.m_hat = (*m_hat)[static_cast<std::size_t>(i)];
                quantity = clamp_quantity(r.m_hat, max_quantity);
                break;
            case StrategyKind::kTopK:
                quantity = strategy.k;
                break;
            case StrategyKind::kThreshold: {
                for (std::int64_t j = 0; j < C; ++j)
                    if (row[j] >= strategy.threshold) ++quantity;
                break;
            }
            case StrategyKind::kLqpClassification:
                quantity = (*cls_quantity)[static_cast<std::size_t>(i)];
                break;
            case StrategyKind::kGroundTruthQuantity:
                quantity = static_cast<std::int64_t>((*truth_m)[static_cast<std::size_t>(i)]);
                break;
        }
        if (m_hat) r.m_hat = (*m_hat)[static_cast<std::size_t>(i)];
        quantity = std::min(quantity, C);
        r.selected.assign(r.ranked.begin(), r.ranked.begin() + quantity);
    }
    return out;
}

inline LabelSets selected_sets(const std::vector<AnnotationResult>& results) {
    LabelSets sets;
    sets.reserve(results.size());
    for (const auto& r : results) sets.push_back(r.selected);
    return sets;
}

}  // namespace msann
