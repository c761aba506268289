#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "msann/ops.hpp"

namespace msann {

// Live handle to a trainable tensor; the name doubles as the checkpoint key.
struct ParamRef {
    std::string name;
    Tensor tensor;
};

// Snapshot entry used by checkpoints: parameters and persistent buffers
// (batch-norm running statistics) share this representation.
struct StateEntry {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

using StateDict = std::vector<StateEntry>;

// Lookup wrapper that tracks which checkpoint entries were consumed, so a
// load can report both missing and unexpected keys.
class StateLookup {
public:
    explicit StateLookup(const StateDict& dict) {
        for (const auto& e : dict) by_name_.emplace(e.name, &e);
    }

    const StateEntry* find(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) return nullptr;
        consumed_.insert(name);
        return it->second;
    }

    const StateEntry& require(const std::string& name) {
        const StateEntry* e = find(name);
        if (!e) throw IoError("checkpoint is missing entry '" + name + "'");
        return *e;
    }

    std::vector<std::string> unconsumed() const {
        std::vector<std::string> out;
        for (const auto& [name, entry] : by_name_)
            if (!consumed_.count(name)) out.push_back(name);
        return out;
    }

private:
    std::map<std::string, const StateEntry*> by_name_;
    std::set<std::string> consumed_;
};

namespace detail {

inline void load_tensor(Tensor& t, const StateEntry& e) {
    if (t.shape() != e.shape)
        throw IoError("checkpoint entry '" + e.name + "' has shape " + shape_str(e.shape) +
                      ", expected " + shape_str(t.shape()));
    t.data() = e.values;
}

inline void push_state(StateDict& out, const std::string& name, const Tensor& t) {
    out.push_back({name, t.shape(), t.data()});
}

}  // namespace detail

// Conv -> (owned by composites; the layer itself is just conv + bias).
struct Conv2dLayer {
    Tensor weight;  // [K,C,kh,kw]
    Tensor bias;    // [K]
    std::int64_t stride = 1;
    std::int64_t padding = 0;

    Conv2dLayer() = default;

    // He fan-in initialization, zero bias.
    Conv2dLayer(std::int64_t out_ch, std::int64_t in_ch, std::int64_t kernel, std::int64_t stride_,
                std::int64_t padding_, Rng& rng)
        : stride(stride_), padding(padding_) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch * kernel * kernel));
        weight = Tensor::randn({out_ch, in_ch, kernel, kernel}, rng, stddev, true);
        bias = Tensor::zeros({out_ch}, true);
    }

    Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

    void params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
    void state(const std::string& prefix, StateDict& out) const {
        detail::push_state(out, prefix + ".weight", weight);
        detail::push_state(out, prefix + ".bias", bias);
    }
    void load(const std::string& prefix, StateLookup& in) {
        detail::load_tensor(weight, in.require(prefix + ".weight"));
        detail::load_tensor(bias, in.require(prefix + ".bias"));
    }
};

struct BatchNorm2d {
    Tensor gamma;
    Tensor beta;
    RunningStats stats;
    double epsilon = 1e-5;

    BatchNorm2d() = default;

    explicit BatchNorm2d(std::int64_t channels) {
        gamma = Tensor::filled({channels}, 1.0, true);
        beta = Tensor::zeros({channels}, true);
    }

    Tensor forward(const Tensor& x, Mode mode, double decay) {
        return batch_norm(x, gamma, beta, stats, mode, decay, epsilon);
    }

    void params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
    void state(const std::string& prefix, StateDict& out) const {
        detail::push_state(out, prefix + ".gamma", gamma);
        detail::push_state(out, prefix + ".beta", beta);
        if (stats.initialized) {
            const auto c = static_cast<std::int64_t>(stats.mean.size());
            out.push_back({prefix + ".running_mean", {c}, stats.mean});
            out.push_back({prefix + ".running_var", {c}, stats.var});
        }
    }
    void load(const std::string& prefix, StateLookup& in) {
        detail::load_tensor(gamma, in.require(prefix + ".gamma"));
        detail::load_tensor(beta, in.require(prefix + ".beta"));
        const StateEntry* mean = in.find(prefix + ".running_mean");
        const StateEntry* var = in.find(prefix + ".running_var");
        if (mean && var) {
            stats.mean = mean->values;
            stats.var = var->values;
            stats.initialized = true;
        } else {
            stats = RunningStats{};
        }
    }
};

struct LinearLayer {
    Tensor weight;  // [D,E]
    Tensor bias;    // [E]

    LinearLayer() = default;

    LinearLayer(std::int64_t in_dim, std::int64_t out_dim, Rng& rng) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_dim));
        weight = Tensor::randn({in_dim, out_dim}, rng, stddev, true);
        bias = Tensor::zeros({out_dim}, true);
    }

    Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }

    void params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
    void state(const std::string& prefix, StateDict& out) const {
        detail::push_state(out, prefix + ".weight", weight);
        detail::push_state(out, prefix + ".bias", bias);
    }
    void load(const std::string& prefix, StateLookup& in) {
        detail::load_tensor(weight, in.require(prefix + ".weight"));
        detail::load_tensor(bias, in.require(prefix + ".bias"));
    }
};

// Conv -> BN -> ReLU, the composite both scale stages and fusion blocks use.
struct ConvBnRelu {
    Conv2dLayer conv;
    BatchNorm2d bn;

    ConvBnRelu() = default;

    ConvBnRelu(std::int64_t out_ch, std::int64_t in_ch, std::int64_t kernel, std::int64_t stride,
               std::int64_t padding, Rng& rng)
        : conv(out_ch, in_ch, kernel, stride, padding, rng), bn(out_ch) {}

    Tensor forward(const Tensor& x, Mode mode, double decay) {
        return relu(bn.forward(conv.forward(x), mode, decay));
    }

    void params(const std::string& prefix, std::vector<ParamRef>& out) {
        conv.params(prefix + ".conv", out);
        bn.params(prefix + ".bn", out);
    }
    void state(const std::string& prefix, StateDict& out) const {
        conv.state(prefix + ".conv", out);
        bn.state(prefix + ".bn", out);
    }
    void load(const std::string& prefix, StateLookup& in) {
        conv.load(prefix + ".conv", in);
        bn.load(prefix + ".bn", in);
    }
};

inline void zero_all_grads(std::vector<ParamRef>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace msann
