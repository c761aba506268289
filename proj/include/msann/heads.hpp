#pragma once

#include <string>
#include <vector>

#include "msann/layers.hpp"

namespace msann {

// Binary ground truth y (N x C) with the per-image label quantities
// m_i = sum_j y_ij. Every image must carry at least one label.
struct LabelMatrix {
    std::int64_t N = 0, C = 0;
    std::vector<double> y;           // row-major N x C
    std::vector<double> quantities;  // length N

    static LabelMatrix from_sets(const std::vector<std::vector<std::int64_t>>& label_sets,
                                 std::int64_t num_classes) {
        LabelMatrix lm;
        lm.N = static_cast<std::int64_t>(label_sets.size());
        lm.C = num_classes;
        lm.y.assign(static_cast<std::size_t>(lm.N * lm.C), 0.0);
        lm.quantities.resize(static_cast<std::size_t>(lm.N));
        for (std::int64_t i = 0; i < lm.N; ++i) {
            const auto& set = label_sets[static_cast<std::size_t>(i)];
            if (set.empty())
                throw ConfigError("image " + std::to_string(i) + " has no labels; m_i >= 1 required");
            for (auto j : set) {
                if (j < 0 || j >= num_classes)
                    throw DimensionError("label index " + std::to_string(j) + " out of range for " +
                                         std::to_string(num_classes) + " classes");
                lm.y[static_cast<std::size_t>(i * lm.C + j)] = 1.0;
            }
            double m = 0.0;
            for (std::int64_t j = 0; j < lm.C; ++j) m += lm.y[static_cast<std::size_t>(i * lm.C + j)];
            lm.quantities[static_cast<std::size_t>(i)] = m;
        }
        return lm;
    }
};

// Fully connected layer producing per-class logits, followed by a sigmoid.
struct ClassifierHead {
    LinearLayer fc;
    std::int64_t num_classes = 0;

    ClassifierHead() = default;
    ClassifierHead(std::int64_t feature_dim, std::int64_t classes, Rng& rng)
        : fc(feature_dim, classes, rng), num_classes(classes) {}

    void params(const std::string& prefix, std::vector<ParamRef>& out) { fc.params(prefix, out); }
    void state(const std::string& prefix, StateDict& out) const { fc.state(prefix, out); }
    void load(const std::string& prefix, StateLookup& in) { fc.load(prefix, in); }
};

struct ClassifierOutput {
    Tensor logits;  // [N,C]
    Tensor probs;   // [N,C], sigmoid of the logits
};

inline ClassifierOutput classify(const ClassifierHead& head, const Tensor& features) {
    Tensor z = head.fc.forward(features);
    return {z, sigmoid(z)};
}

// Scaling of a loss over the batch: summed (the default, matching the
// double-sum notation) or averaged over images, kept as a toggle for
// stability experiments.
enum class LossReduction { kSum, kBatchMean };

namespace detail {
inline Tensor reduce_loss(Tensor loss, LossReduction reduction, std::int64_t batch) {
    if (reduction == LossReduction::kSum) return loss;
    return mul(loss, Tensor::scalar(1.0 / static_cast<double>(batch)));
}
}  // namespace detail

// Sigmoid cross entropy over images and classes. Computed on logits for
// numerical stability; mathematically equal to the probability-space
// formula.
inline Tensor cls_loss(const Tensor& logits, const LabelMatrix& labels,
                       LossReduction reduction = LossReduction::kSum) {
    if (logits.shape() != Shape{labels.N, labels.C})
        throw DimensionError("cls_loss: logits " + shape_str(logits.shape()) +
                             " vs labels [" + std::to_string(labels.N) + ", " +
                             std::to_string(labels.C) + "]");
    return detail::reduce_loss(sigmoid_ce_with_logits(logits, labels.y), reduction, labels.N);
}

// Probability-space evaluation of the same loss, for callers that already
// hold probabilities. Values outside (0,1) are a domain error here; the
// logit path cannot produce them.
inline double cls_loss_from_probs(const std::vector<double>& probs, const LabelMatrix& labels) {
    if (static_cast<std::int64_t>(probs.size()) != labels.N * labels.C)
        throw DimensionError("cls_loss_from_probs: got " + std::to_string(probs.size()) +
                             " probabilities for " + std::to_string(labels.N * labels.C) +
                             " label entries");
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        if (p <= 0.0 || p >= 1.0)
            throw DomainError("probability " + std::to_string(p) + " outside (0,1) at entry " +
                              std::to_string(i));
        loss += labels.y[i] * -std::log(p) + (1.0 - labels.y[i]) * -std::log(1.0 - p);
    }
    return loss;
}

// Label-quantity regressor: two hidden ReLU layers with dropout 0.5, one
// unconstrained scalar output per image. Clamping to [1, max] happens only
// at inference quantization.
struct QuantityRegressor {
    LinearLayer fc1, fc2, fc3;
    double dropout_rate = 0.5;

    QuantityRegressor() = default;

    QuantityRegressor(std::int64_t feature_dim, std::int64_t h1, std::int64_t h2, Rng& rng)
        : fc1(feature_dim, h1, rng), fc2(h1, h2, rng), fc3(h2, 1, rng) {}

    // Returns m_hat with shape [N].
    Tensor forward(const Tensor& features, Mode mode, Rng& rng) const {
        Tensor h = dropout(relu(fc1.forward(features)), dropout_rate, mode, rng);
        h = dropout(relu(fc2.forward(h)), dropout_rate, mode, rng);
        Tensor out = fc3.forward(h);
        return reshape(out, {out.dim(0)});
    }

    void params(const std::string& prefix, std::vector<ParamRef>& out) {
        fc1.params(prefix + ".fc1", out);
        fc2.params(prefix + ".fc2", out);
        fc3.params(prefix + ".fc3", out);
    }
    void state(const std::string& prefix, StateDict& out) const {
        fc1.state(prefix + ".fc1", out);
        fc2.state(prefix + ".fc2", out);
        fc3.state(prefix + ".fc3", out);
    }
    void load(const std::string& prefix, StateLookup& in) {
        fc1.load(prefix + ".fc1", in);
        fc2.load(prefix + ".fc2", in);
        fc3.load(prefix + ".fc3", in);
    }
};

inline Tensor quantity_regress(const QuantityRegressor& reg, const Tensor& features, Mode mode,
                               Rng& rng) {
    return reg.forward(features, mode, rng);
}

// Squared quantity error over images, summed by default.
inline Tensor reg_loss(const Tensor& m_hat, const std::vector<double>& m,
                       LossReduction reduction = LossReduction::kSum) {
    return detail::reduce_loss(mse_sum(m_hat, m), reduction,
                               static_cast<std::int64_t>(m.size()));
}

// The "Classification" label-quantity baseline: one softmax category per
// quantity value 1..max_quantity (quantity 0 is impossible).
struct QuantityClassifierHead {
    LinearLayer fc1, fc2, fc3;
    std::int64_t max_quantity = 0;
    double dropout_rate = 0.5;

    QuantityClassifierHead() = default;

    QuantityClassifierHead(std::int64_t feature_dim, std::int64_t h1, std::int64_t h2,
                           std::int64_t max_q, Rng& rng)
        : fc1(feature_dim, h1, rng), fc2(h1, h2, rng), fc3(h2, max_q, rng), max_quantity(max_q) {}

    // Logits over quantity categories, [N, max_quantity].
    Tensor forward(const Tensor& features, Mode mode, Rng& rng) const {
        Tensor h = dropout(relu(fc1.forward(features)), dropout_rate, mode, rng);
        h = dropout(relu(fc2.forward(h)), dropout_rate, mode, rng);
        return fc3.forward(h);
    }

    Tensor loss(const Tensor& logits, const std::vector<double>& m) const {
        std::vector<std::int64_t> categories(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) {
            const auto q = static_cast<std::int64_t>(m[i]);
            if (q < 1 || q > max_quantity)
                throw ConfigError("quantity " + std::to_string(q) + " outside [1, " +
                                  std::to_string(max_quantity) + "] for the classification head");
            categories[i] = q - 1;
        }
        return softmax_ce(logits, categories);
    }

    // Predicted quantity per image: argmax category + 1, earliest on ties.
    std::vector<std::int64_t> predict(const Tensor& logits) const {
        const std::int64_t n = logits.dim(0), k = logits.dim(1);
        std::vector<std::int64_t> out(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const double* row = logits.data().data() + i * k;
            std::int64_t best = 0;
            for (std::int64_t j = 1; j < k; ++j)
                if (row[j] > row[best]) best = j;
            out[static_cast<std::size_t>(i)] = best + 1;
        }
        return out;
    }

    void params(const std::string& prefix, std::vector<ParamRef>& out) {
        fc1.params(prefix + ".fc1", out);
        fc2.params(prefix + ".fc2", out);
        fc3.params(prefix + ".fc3", out);
    }
    void state(const std::string& prefix, StateDict& out) const {
        fc1.state(prefix + ".fc1", out);
        fc2.state(prefix + ".fc2", out);
        fc3.state(prefix + ".fc3", out);
    }
    void load(const std::string& prefix, StateLookup& in) {
        fc1.load(prefix + ".fc1", in);
        fc2.load(prefix + ".fc2", in);
        fc3.load(prefix + ".fc3", in);
    }
};

}  // namespace msann
