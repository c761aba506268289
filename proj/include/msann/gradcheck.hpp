#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "msann/ops.hpp"

namespace msann {

// Central finite differences of a re-runnable scalar forward against the
// taped gradients, reported as max |analytic - fd| / max(1, |fd|).
inline double gradcheck_max_rel_err(const std::function<Tensor()>& forward,
                                    std::vector<Tensor> leaves, double h = 1e-5) {
    for (auto& leaf : leaves) leaf.zero_grad();
    forward().backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& x = leaves[li].data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + h;
            const double fp = forward().item();
            x[i] = saved - h;
            const double fm = forward().item();
            x[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, std::abs(analytic[li][i] - fd) / std::max(1.0, std::abs(fd)));
        }
    }
    return worst;
}

// Runs the finite-difference suite over every differentiable op for the
// requested number of seeds, printing one line per op. Returns true when
// every check stays under the 1e-3 relative tolerance.
inline bool run_gradcheck(std::int64_t seeds = 20, double tol = 1e-3, std::ostream& out = std::cout) {
    struct Check {
        std::string name;
        std::function<double(std::uint64_t)> run;  // returns max rel err for one seed
    };

    const std::vector<Check> checks = {
        {"conv2d",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor in = Tensor::randn({2, 2, 4, 4}, rng, 1.0, true);
             Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 1.0, true);
             Tensor b = Tensor::randn({3}, rng, 1.0, true);
             return gradcheck_max_rel_err(
                 [&] { return sum(mul(conv2d(in, w, b, 2, 1), conv2d(in, w, b, 2, 1))); },
                 {in, w, b});
         }},
        {"max_pool2d",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor in = Tensor::randn({2, 2, 4, 4}, rng, 1.0, true);
             return gradcheck_max_rel_err(
                 [&] { return sum(mul(max_pool2d(in, 2, 2), max_pool2d(in, 2, 2))); }, {in});
         }},
        {"avg_pool2d",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor in = Tensor::randn({2, 2, 4, 4}, rng, 1.0, true);
             return gradcheck_max_rel_err(
                 [&] { return sum(mul(avg_pool2d(in, 2, 1), avg_pool2d(in, 2, 1))); }, {in});
         }},
        {"global_avg_pool",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor in = Tensor::randn({2, 3, 3, 3}, rng, 1.0, true);
             return gradcheck_max_rel_err(
                 [&] { return sum(mul(global_avg_pool(in), global_avg_pool(in))); }, {in});
         }},
        {"batch_norm(train)",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor in = Tensor::randn({3, 2, 2, 2}, rng, 1.0, true);
             Tensor gamma = Tensor::randn({2}, rng, 1.0, true);
             Tensor beta = Tensor::randn({2}, rng, 1.0, true);
             return gradcheck_max_rel_err(
                 [&] {
                     RunningStats stats;
                     Tensor y = batch_norm(in, gamma, beta, stats, Mode::kTrain, 0.9997, 1e-5);
                     return sum(mul(y, y));
                 },
                 {in, gamma, beta});
         }},
        {"batch_norm(eval)",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor in = Tensor::randn({3, 2, 2, 2}, rng, 1.0, true);
             Tensor gamma = Tensor::randn({2}, rng, 1.0, true);
             Tensor beta = Tensor::randn({2}, rng, 1.0, true);
             RunningStats stats;
             {
                 NoGradGuard guard;
                 Tensor warm = Tensor::randn({4, 2, 2, 2}, rng);
                 batch_norm(warm, gamma, beta, stats, Mode::kTrain, 0.9, 1e-5);
             }
             return gradcheck_max_rel_err(
                 [&] {
                     Tensor y = batch_norm(in, gamma, beta, stats, Mode::kEval, 0.9997, 1e-5);
                     return sum(mul(y, y));
                 },
                 {in, gamma, beta});
         }},
        {"relu+sigmoid",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor in = Tensor::randn({4, 4}, rng, 1.0, true);
             return gradcheck_max_rel_err([&] { return sum(mul(sigmoid(relu(in)), sigmoid(in))); },
                                          {in});
         }},
        {"linear+concat+add",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor a = Tensor::randn({2, 3}, rng, 1.0, true);
             Tensor b = Tensor::randn({2, 2}, rng, 1.0, true);
             Tensor w = Tensor::randn({5, 3}, rng, 1.0, true);
             Tensor bias = Tensor::randn({3}, rng, 1.0, true);
             return gradcheck_max_rel_err(
                 [&] {
                     Tensor h = linear(concat(a, b), w, bias);
                     return sum(mul(add(h, h), h));
                 },
                 {a, b, w, bias});
         }},
        {"dropout(fixed mask)",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor in = Tensor::randn({4, 4}, rng, 1.0, true);
             return gradcheck_max_rel_err(
                 [&] {
                     Rng mask_rng(42);
                     Tensor y = dropout(in, 0.5, Mode::kTrain, mask_rng);
                     return sum(mul(y, y));
                 },
                 {in});
         }},
        {"sigmoid_ce_with_logits",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor z = Tensor::randn({3, 4}, rng, 2.0, true);
             std::vector<double> y(12);
             for (auto& v : y) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
             return gradcheck_max_rel_err([&] { return sigmoid_ce_with_logits(z, y); }, {z});
         }},
        {"mse_sum",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor pred = Tensor::randn({5}, rng, 2.0, true);
             std::vector<double> target(5);
             for (auto& v : target) v = rng.uniform(1.0, 5.0);
             return gradcheck_max_rel_err([&] { return mse_sum(pred, target); }, {pred});
         }},
        {"softmax_ce",
         [](std::uint64_t seed) {
             Rng rng(seed);
             Tensor z = Tensor::randn({4, 5}, rng, 2.0, true);
             std::vector<std::int64_t> cls(4);
             for (auto& c : cls) c = rng.uniform_int(0, 4);
             return gradcheck_max_rel_err([&] { return softmax_ce(z, cls); }, {z});
         }},
    };

    bool all_ok = true;
    for (const auto& check : checks) {
        double worst = 0.0;
        for (std::int64_t seed = 0; seed < seeds; ++seed)
            worst = std::max(worst, check.run(static_cast<std::uint64_t>(7000 + seed)));
        const bool ok = worst < tol;
        all_ok = all_ok && ok;
        out << (ok ? "pass" : "FAIL") << "  " << check.name << "  max_rel_err=" << worst << "\n";
    }
    return all_ok;
}

}  // namespace msann
