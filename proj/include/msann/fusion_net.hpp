#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msann/config.hpp"
#include "msann/layers.hpp"

namespace msann {

enum class FusionMode { kSum, kConcatAvgPool, kMaxPoolPhi1, kNone };

inline std::string fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::kSum: return "sum";
        case FusionMode::kConcatAvgPool: return "concat_avgpool";
        case FusionMode::kMaxPoolPhi1: return "maxpool_phi1";
        case FusionMode::kNone: return "none";
    }
    throw ConfigError("unknown fusion mode");
}

inline FusionMode fusion_mode_from_name(const std::string& s) {
    if (s == "sum") return FusionMode::kSum;
    if (s == "concat_avgpool") return FusionMode::kConcatAvgPool;
    if (s == "maxpool_phi1") return FusionMode::kMaxPoolPhi1;
    if (s == "none") return FusionMode::kNone;
    throw ConfigError("unknown fusion mode '" + s + "'");
}

struct ScaleSpec {
    std::int64_t spatial;
    std::int64_t channels;
    bool operator==(const ScaleSpec&) const = default;
};

// Declarative description of the visual branch: the per-scale ladder of the
// main network plus how (and from which scale on) the fusion branch runs.
struct FusionNetConfig {
    std::int64_t input_channels = 3;
    std::int64_t input_size = 32;
    std::vector<ScaleSpec> scales;      // K entries, coarser towards the back
    FusionMode mode = FusionMode::kSum;
    std::int64_t fuse_from = 1;         // fused set is the suffix {fuse_from..K}, 1-based
    std::int64_t stage_depth = 1;       // conv->BN->ReLU units per scale stage

    std::int64_t num_scales() const { return static_cast<std::int64_t>(scales.size()); }

    void validate() const {
        if (num_scales() < 2)
            throw ConfigError("fusion net needs K >= 2 scales, got " + std::to_string(num_scales()));
        if (input_channels < 1 || input_size < 1) throw ConfigError("invalid input geometry");
        if (stage_depth < 1) throw ConfigError("stage_depth must be >= 1");
        std::int64_t prev = input_size;
        for (std::int64_t l = 0; l < num_scales(); ++l) {
            const auto& s = scales[l];
            if (s.spatial < 1 || s.channels < 1)
                throw ConfigError("scale " + std::to_string(l + 1) + " has invalid extents");
            if (prev % s.spatial != 0)
                throw ConfigError("impossible spatial ladder: scale " + std::to_string(l + 1) +
                                  " maps " + std::to_string(prev) + " to " + std::to_string(s.spatial) +
                                  " (non-integer downsampling)");
            prev = s.spatial;
        }
        if (fuse_from < 1 || fuse_from > num_scales())
            throw ConfigError("fuse_from must lie in [1, K]");
    }

    // Feature dimension produced by visual_feature() under this config.
    std::int64_t feature_dim() const {
        if (mode == FusionMode::kConcatAvgPool) {
            std::int64_t total = 0;
            for (std::int64_t l = fuse_from - 1; l < num_scales(); ++l) total += scales[l].channels;
            return total;
        }
        return scales.back().channels;
    }

    // Desk-scale default: 3x32x32 inputs through a five-scale ladder.
    static FusionNetConfig desk() {
        FusionNetConfig cfg;
        cfg.input_channels = 3;
        cfg.input_size = 32;
        cfg.scales = {{16, 8}, {8, 16}, {4, 32}, {2, 64}, {1, 128}};
        return cfg;
    }

    // Full-scale geometry: 224x224 inputs, five scales
    // at 112/56/28/14/7 spatial with 64/256/512/1024/2048 channels.
    static FusionNetConfig full_scale() {
        FusionNetConfig cfg;
        cfg.input_channels = 3;
        cfg.input_size = 224;
        cfg.scales = {{112, 64}, {56, 256}, {28, 512}, {14, 1024}, {7, 2048}};
        return cfg;
    }

    void to_kv(KvConfig& kv) const {
        kv.set("input_channels", input_channels);
        kv.set("input_size", input_size);
        std::string spat, chan;
        for (std::size_t i = 0; i < scales.size(); ++i) {
            if (i) spat += ",", chan += ",";
            spat += std::to_string(scales[i].spatial);
            chan += std::to_string(scales[i].channels);
        }
        kv.set("spatials", spat);
        kv.set("channels", chan);
        kv.set("fusion_mode", fusion_mode_name(mode));
        kv.set("fuse_from", fuse_from);
        kv.set("stage_depth", stage_depth);
    }

    static FusionNetConfig from_kv(const KvConfig& kv) {
        FusionNetConfig cfg;
        cfg.input_channels = kv.get_int("input_channels");
        cfg.input_size = kv.get_int("input_size");
        const auto spat = kv.get_int_list("spatials");
        const auto chan = kv.get_int_list("channels");
        if (spat.size() != chan.size())
            throw ConfigError("spatials and channels lists differ in length");
        for (std::size_t i = 0; i < spat.size(); ++i) cfg.scales.push_back({spat[i], chan[i]});
        cfg.mode = fusion_mode_from_name(kv.get_string("fusion_mode"));
        cfg.fuse_from = kv.get_int("fuse_from");
        cfg.stage_depth = kv.get_int("stage_depth");
        cfg.validate();
        return cfg;
    }

    bool operator==(const FusionNetConfig&) const = default;
};

// One scale of the main branch: a stride-matched conv->BN->ReLU followed by
// depth-1 stride-1 units. Applying the stage to a tensor of the declared
// input shape yields exactly the declared output shape.
struct ScaleStage {
    std::int64_t in_spatial = 0, out_spatial = 0;
    std::int64_t in_channels = 0, out_channels = 0;
    std::vector<ConvBnRelu> units;

    ScaleStage() = default;

    ScaleStage(std::int64_t in_sp, std::int64_t out_sp, std::int64_t in_ch, std::int64_t out_ch,
               std::int64_t depth, Rng& rng)
        : in_spatial(in_sp), out_spatial(out_sp), in_channels(in_ch), out_channels(out_ch) {
        const std::int64_t stride = in_sp / out_sp;
        units.emplace_back(out_ch, in_ch, 3, stride, 1, rng);
        for (std::int64_t d = 1; d < depth; ++d) units.emplace_back(out_ch, out_ch, 3, 1, 1, rng);
    }

    Tensor forward(const Tensor& x, Mode mode, double bn_decay) {
        Tensor h = x;
        for (auto& u : units) h = u.forward(h, mode, bn_decay);
        return h;
    }

    void params(const std::string& prefix, std::vector<ParamRef>& out) {
        for (std::size_t i = 0; i < units.size(); ++i)
            units[i].params(prefix + "." + std::to_string(i), out);
    }
    void state(const std::string& prefix, StateDict& out) const {
        for (std::size_t i = 0; i < units.size(); ++i)
            units[i].state(prefix + "." + std::to_string(i), out);
    }
    void load(const std::string& prefix, StateLookup& in) {
        for (std::size_t i = 0; i < units.size(); ++i)
            units[i].load(prefix + "." + std::to_string(i), in);
    }
};

// Fusion function F_l = phi2(phi1(.)): phi1 matches the spatial size of the
// next scale (3x3 conv, or max pooling in the maxpool variant) and phi2 is a
// 1x1 conv matching the channel count; both composites are Conv->BN->ReLU.
struct FusionBlock {
    bool maxpool_phi1 = false;
    std::int64_t pool_window = 1, pool_stride = 1;
    std::optional<Conv2dLayer> phi1_conv;
    BatchNorm2d phi1_bn;
    Conv2dLayer phi2_conv;
    BatchNorm2d phi2_bn;

    FusionBlock() = default;

    FusionBlock(std::int64_t in_spatial, std::int64_t out_spatial, std::int64_t in_ch,
                std::int64_t out_ch, bool maxpool, Rng& rng)
        : maxpool_phi1(maxpool) {
        const std::int64_t stride = in_spatial / out_spatial;
        if (maxpool) {
            pool_window = stride;
            pool_stride = stride;
        } else {
            phi1_conv.emplace(in_ch, in_ch, 3, stride, 1, rng);
        }
        phi1_bn = BatchNorm2d(in_ch);
        phi2_conv = Conv2dLayer(out_ch, in_ch, 1, 1, 0, rng);
        phi2_bn = BatchNorm2d(out_ch);
    }

    Tensor forward(const Tensor& x, Mode mode, double bn_decay) {
        Tensor h = maxpool_phi1 ? max_pool2d(x, pool_window, pool_stride) : phi1_conv->forward(x);
        h = relu(phi1_bn.forward(h, mode, bn_decay));
        h = relu(phi2_bn.forward(phi2_conv.forward(h), mode, bn_decay));
        return h;
    }

    void params(const std::string& prefix, std::vector<ParamRef>& out) {
        if (phi1_conv) phi1_conv->params(prefix + ".phi1.conv", out);
        phi1_bn.params(prefix + ".phi1.bn", out);
        phi2_conv.params(prefix + ".phi2.conv", out);
        phi2_bn.params(prefix + ".phi2.bn", out);
    }
    void state(const std::string& prefix, StateDict& out) const {
        if (phi1_conv) phi1_conv->state(prefix + ".phi1.conv", out);
        phi1_bn.state(prefix + ".phi1.bn", out);
        phi2_conv.state(prefix + ".phi2.conv", out);
        phi2_bn.state(prefix + ".phi2.bn", out);
    }
    void load(const std::string& prefix, StateLookup& in) {
        if (phi1_conv) phi1_conv->load(prefix + ".phi1.conv", in);
        phi1_bn.load(prefix + ".phi1.bn", in);
        phi2_conv.load(prefix + ".phi2.conv", in);
        phi2_bn.load(prefix + ".phi2.bn", in);
    }
};

// Everything one forward pass produces: the K main-branch maps, the fused
// maps (equal to the main maps below the fused suffix) and the pooled visual
// feature vector.
struct ForwardTrace {
    std::vector<Tensor> M;
    std::vector<Tensor> M_fused;
    Tensor f_v;
    FusionMode mode = FusionMode::kSum;
};

inline std::vector<ScaleStage> build_main_branch(const FusionNetConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<ScaleStage> stages;
    std::int64_t prev_sp = cfg.input_size, prev_ch = cfg.input_channels;
    for (const auto& s : cfg.scales) {
        stages.emplace_back(prev_sp, s.spatial, prev_ch, s.channels, cfg.stage_depth, rng);
        prev_sp = s.spatial;
        prev_ch = s.channels;
    }
    return stages;
}

inline std::vector<FusionBlock> build_fusion_blocks(const FusionNetConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<FusionBlock> blocks;
    if (cfg.mode == FusionMode::kNone || cfg.mode == FusionMode::kConcatAvgPool) return blocks;
    const bool maxpool = cfg.mode == FusionMode::kMaxPoolPhi1;
    for (std::int64_t l = cfg.fuse_from; l < cfg.num_scales(); ++l) {
        const auto& from = cfg.scales[l - 1];
        const auto& to = cfg.scales[l];
        blocks.emplace_back(from.spatial, to.spatial, from.channels, to.channels, maxpool, rng);
    }
    return blocks;
}

// Pools the trace into the visual feature vector f_v: global average pool of
// the terminal fused map, or the concatenation of per-scale pools in
// concat_avgpool mode.
inline Tensor visual_feature(const ForwardTrace& trace, std::int64_t fuse_from = 1) {
    if (trace.mode == FusionMode::kConcatAvgPool) {
        Tensor f = global_avg_pool(trace.M[fuse_from - 1]);
        for (std::size_t l = fuse_from; l < trace.M.size(); ++l)
            f = concat(f, global_avg_pool(trace.M[l]));
        return f;
    }
    return global_avg_pool(trace.M_fused.back());
}

// Runs the main branch and the fusion recursion
//   M~_s = M_s,  M~_l = M_l + F_l(M~_{l-1})  for l = s+1..K
// where s is the first fused scale. Blocks must be aligned with the
// consecutive fused scale pairs.
inline ForwardTrace fuse_forward(std::vector<ScaleStage>& stages, std::vector<FusionBlock>& blocks,
                                 const Tensor& image, const FusionNetConfig& cfg, Mode mode,
                                 double bn_decay = 0.99) {
    ForwardTrace trace;
    trace.mode = cfg.mode;
    Tensor h = image;
    for (auto& stage : stages) {
        h = stage.forward(h, mode, bn_decay);
        trace.M.push_back(h);
    }
    const std::int64_t K = cfg.num_scales();
    if (cfg.mode == FusionMode::kSum || cfg.mode == FusionMode::kMaxPoolPhi1) {
        if (static_cast<std::int64_t>(blocks.size()) != K - cfg.fuse_from)
            throw ConfigError("fusion blocks not aligned with fused scale pairs: have " +
                              std::to_string(blocks.size()) + ", need " +
                              std::to_string(K - cfg.fuse_from));
        trace.M_fused = trace.M;  // below the fused suffix M~_l == M_l
        for (std::int64_t l = cfg.fuse_from; l < K; ++l) {
            Tensor contribution = blocks[l - cfg.fuse_from].forward(trace.M_fused[l - 1], mode, bn_decay);
            if (contribution.shape() != trace.M[l].shape())
                throw DimensionError("fusion shape error at scale " + std::to_string(l + 1) +
                                     ": F_l produced " + shape_str(contribution.shape()) +
                                     " but M_l is " + shape_str(trace.M[l].shape()));
            trace.M_fused[l] = add(trace.M[l], contribution);
        }
    } else {
        trace.M_fused = trace.M;
    }
    trace.f_v = visual_feature(trace, cfg.fuse_from);
    return trace;
}

// The visual branch as a unit: config, stages and fusion blocks together.
class FusionNet {
public:
    FusionNet() = default;

    FusionNet(FusionNetConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        stages_ = build_main_branch(cfg_, rng);
        blocks_ = build_fusion_blocks(cfg_, rng);
    }

    const FusionNetConfig& config() const { return cfg_; }
    std::vector<ScaleStage>& stages() { return stages_; }
    std::vector<FusionBlock>& blocks() { return blocks_; }

    ForwardTrace forward(const Tensor& image, Mode mode, double bn_decay = 0.99) {
        return fuse_forward(stages_, blocks_, image, cfg_, mode, bn_decay);
    }

    // Feature vector from the main branch only (no fusion); the plain-CNN
    // baseline and stage-1 training use this path.
    Tensor main_feature(const Tensor& image, Mode mode, double bn_decay = 0.99) {
        Tensor h = image;
        for (auto& stage : stages_) h = stage.forward(h, mode, bn_decay);
        return global_avg_pool(h);
    }

    std::int64_t feature_dim() const { return cfg_.feature_dim(); }
    std::int64_t main_feature_dim() const { return cfg_.scales.back().channels; }

    void main_params(std::vector<ParamRef>& out) {
        for (std::size_t l = 0; l < stages_.size(); ++l)
            stages_[l].params("main." + std::to_string(l + 1), out);
    }
    void fusion_params(std::vector<ParamRef>& out) {
        for (std::size_t b = 0; b < blocks_.size(); ++b)
            blocks_[b].params("fusion." + std::to_string(cfg_.fuse_from + 1 + b), out);
    }

    void state(StateDict& out) const {
        for (std::size_t l = 0; l < stages_.size(); ++l)
            stages_[l].state("main." + std::to_string(l + 1), out);
        for (std::size_t b = 0; b < blocks_.size(); ++b)
            blocks_[b].state("fusion." + std::to_string(cfg_.fuse_from + 1 + b), out);
    }
    void load(StateLookup& in) {
        for (std::size_t l = 0; l < stages_.size(); ++l)
            stages_[l].load("main." + std::to_string(l + 1), in);
        for (std::size_t b = 0; b < blocks_.size(); ++b)
            blocks_[b].load("fusion." + std::to_string(cfg_.fuse_from + 1 + b), in);
    }

private:
    FusionNetConfig cfg_;
    std::vector<ScaleStage> stages_;
    std::vector<FusionBlock> blocks_;
};

}  // namespace msann
