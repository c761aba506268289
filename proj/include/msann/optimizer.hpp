#pragma once

#include <map>
#include <string>
#include <vector>

#include "msann/layers.hpp"

namespace msann {

struct OptimizerState {
    std::map<std::string, std::vector<double>> velocity;
};

// One SGD-with-momentum update:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
// A parameter that never received a gradient is treated as having a zero
// gradient, so weight decay still applies. Any non-finite gradient aborts the
// step before touching parameters.
inline void sgd_momentum_step(std::vector<ParamRef>& params, OptimizerState& state, double lr,
                              double momentum, double weight_decay) {
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad())
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in parameter '" + p.name +
                                   "'; aborting the update step");
    }
    for (auto& p : params) {
        auto& v = state.velocity[p.name];
        auto& data = p.tensor.data();
        if (v.empty()) v.assign(data.size(), 0.0);
        const bool has_grad = p.tensor.has_grad();
        const std::vector<double>* grad = has_grad ? &p.tensor.grad() : nullptr;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = (grad ? (*grad)[i] : 0.0) + weight_decay * data[i];
            v[i] = momentum * v[i] + g;
            data[i] -= lr * v[i];
        }
    }
}

class SgdMomentum {
public:
    explicit SgdMomentum(double momentum, double weight_decay = 0.0)
        : momentum_(momentum), weight_decay_(weight_decay) {}

    void set_weight_decay(double wd) { weight_decay_ = wd; }

    void step(std::vector<ParamRef>& params, double lr) {
        sgd_momentum_step(params, state_, lr, momentum_, weight_decay_);
    }

private:
    double momentum_;
    double weight_decay_;
    OptimizerState state_;
};

}  // namespace msann
