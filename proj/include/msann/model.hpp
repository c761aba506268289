#pragma once

#include <set>
#include <string>
#include <vector>

#include "msann/checkpoint.hpp"
#include "msann/dataset.hpp"
#include "msann/fusion_net.hpp"
#include "msann/heads.hpp"
#include "msann/tag_branch.hpp"

namespace msann {

struct ModelConfig {
    FusionNetConfig fusion = FusionNetConfig::desk();
    bool use_tags = true;
    std::int64_t num_classes = 8;
    std::int64_t vocab_size = 64;
    std::int64_t text_hidden = 64;
    std::int64_t lqp_hidden1 = 32;
    std::int64_t lqp_hidden2 = 16;
    std::int64_t max_quantity = 6;

    void validate() const {
        fusion.validate();
        if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
        if (use_tags && vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
        if (max_quantity < 1) throw ConfigError("max_quantity must be >= 1");
        if (text_hidden < 1 || lqp_hidden1 < 1 || lqp_hidden2 < 1)
            throw ConfigError("hidden widths must be >= 1");
    }

    // Feature dimension seen by the classifier and the quantity heads.
    std::int64_t joint_dim() const {
        return use_tags ? 2 * fusion.feature_dim() : fusion.feature_dim();
    }

    static ModelConfig desk() { return ModelConfig{}; }

    // Full-scale preset: 1000 tags through a
    // 2048-wide textual MLP, quantity regressor with 512/256 hidden units.
    static ModelConfig full_scale() {
        ModelConfig cfg;
        cfg.fusion = FusionNetConfig::full_scale();
        cfg.vocab_size = 1000;
        cfg.text_hidden = 2048;
        cfg.lqp_hidden1 = 512;
        cfg.lqp_hidden2 = 256;
        cfg.max_quantity = 14;
        return cfg;
    }

    void to_kv(KvConfig& kv) const {
        fusion.to_kv(kv);
        kv.set("use_tags", use_tags);
        kv.set("num_classes", num_classes);
        kv.set("vocab_size", vocab_size);
        kv.set("text_hidden", text_hidden);
        kv.set("lqp_hidden1", lqp_hidden1);
        kv.set("lqp_hidden2", lqp_hidden2);
        kv.set("max_quantity", max_quantity);
    }

    static ModelConfig from_kv(const KvConfig& kv) {
        ModelConfig cfg;
        cfg.fusion = FusionNetConfig::from_kv(kv);
        cfg.use_tags = kv.get_bool("use_tags", cfg.use_tags);
        cfg.num_classes = kv.get_int("num_classes", cfg.num_classes);
        cfg.vocab_size = kv.get_int("vocab_size", cfg.vocab_size);
        cfg.text_hidden = kv.get_int("text_hidden", cfg.text_hidden);
        cfg.lqp_hidden1 = kv.get_int("lqp_hidden1", cfg.lqp_hidden1);
        cfg.lqp_hidden2 = kv.get_int("lqp_hidden2", cfg.lqp_hidden2);
        cfg.max_quantity = kv.get_int("max_quantity", cfg.max_quantity);
        cfg.validate();
        return cfg;
    }

    bool operator==(const ModelConfig&) const = default;
};

// Training stages of the multi-stage plan, plus the end-to-end variant that
// replaces the two head stages with joint training on L_cls + L_reg.
enum class Stage {
    kMainBranch = 1,   // main branch with its own classifier
    kFusionBlocks = 2, // fusion blocks, main branch frozen
    kTextual = 3,      // textual MLP with its own classifier
    kClassifier = 4,   // final classifier on frozen features
    kRegressor = 5,    // quantity heads on frozen features
    kEndToEnd = 6,
};

inline std::string stage_name(Stage s) {
    switch (s) {
        case Stage::kMainBranch: return "stage1";
        case Stage::kFusionBlocks: return "stage2";
        case Stage::kTextual: return "stage3";
        case Stage::kClassifier: return "stage4";
        case Stage::kRegressor: return "stage5";
        case Stage::kEndToEnd: return "e2e";
    }
    throw ConfigError("unknown stage");
}

// The complete annotation model: visual branch, textual branch, final
// classifier, quantity heads, and the per-stage auxiliary classifiers that
// drive feature training.
class AnnotationModel {
public:
    ModelConfig cfg;
    FusionNet visual;
    TextualMLP text;
    ClassifierHead cls;
    QuantityRegressor lqp;
    QuantityClassifierHead lqp_cls;
    ClassifierHead aux_main;    // on the unfused main-branch feature
    ClassifierHead aux_fusion;  // on the fused visual feature
    ClassifierHead aux_text;    // on the textual feature
    std::set<std::int64_t> completed_stages;

    AnnotationModel(ModelConfig config, std::uint64_t seed) : cfg(std::move(config)) {
        cfg.validate();
        Rng rng(Rng::derive(seed, "model-init"));
        visual = FusionNet(cfg.fusion, rng);
        const std::int64_t d_v = cfg.fusion.feature_dim();
        if (cfg.use_tags) text = TextualMLP(cfg.vocab_size, cfg.text_hidden, d_v, rng);
        cls = ClassifierHead(cfg.joint_dim(), cfg.num_classes, rng);
        lqp = QuantityRegressor(cfg.joint_dim(), cfg.lqp_hidden1, cfg.lqp_hidden2, rng);
        lqp_cls = QuantityClassifierHead(cfg.joint_dim(), cfg.lqp_hidden1, cfg.lqp_hidden2,
                                         cfg.max_quantity, rng);
        aux_main = ClassifierHead(visual.main_feature_dim(), cfg.num_classes, rng);
        aux_fusion = ClassifierHead(d_v, cfg.num_classes, rng);
        if (cfg.use_tags) aux_text = ClassifierHead(d_v, cfg.num_classes, rng);
    }

    // ---- forward paths ----

    Tensor main_features(const Tensor& images, Mode mode, double bn_decay) {
        return visual.main_feature(images, mode, bn_decay);
    }

    Tensor visual_features(const Tensor& images, Mode mode, double bn_decay) {
        return visual.forward(images, mode, bn_decay).f_v;
    }

    Tensor text_features(const Tensor& tags) { return encode_tags(text, tags); }

    // The feature the final classifier and quantity heads consume.
    Tensor features(const Tensor& images, const Tensor& tags, Mode mode, double bn_decay) {
        Tensor f_v = visual_features(images, mode, bn_decay);
        if (!cfg.use_tags) return f_v;
        return joint_feature(f_v, text_features(tags));
    }

    // ---- parameter groups (ownership follows the stage plan) ----

    std::vector<ParamRef> stage_params(Stage stage) {
        std::vector<ParamRef> out;
        switch (stage) {
            case Stage::kMainBranch:
                visual.main_params(out);
                aux_main.params("aux_main", out);
                break;
            case Stage::kFusionBlocks:
                visual.fusion_params(out);
                aux_fusion.params("aux_fusion", out);
                break;
            case Stage::kTextual:
                if (cfg.use_tags) {
                    text.params("text", out);
                    aux_text.params("aux_text", out);
                }
                break;
            case Stage::kClassifier:
                cls.params("cls", out);
                break;
            case Stage::kRegressor:
                lqp.params("lqp", out);
                lqp_cls.params("lqp_cls", out);
                break;
            case Stage::kEndToEnd:
                // Everything except the vanilla main branch.
                visual.fusion_params(out);
                if (cfg.use_tags) text.params("text", out);
                cls.params("cls", out);
                lqp.params("lqp", out);
                break;
        }
        return out;
    }

    std::vector<ParamRef> all_params() {
        std::vector<ParamRef> out;
        visual.main_params(out);
        visual.fusion_params(out);
        if (cfg.use_tags) text.params("text", out);
        cls.params("cls", out);
        lqp.params("lqp", out);
        lqp_cls.params("lqp_cls", out);
        aux_main.params("aux_main", out);
        aux_fusion.params("aux_fusion", out);
        if (cfg.use_tags) aux_text.params("aux_text", out);
        return out;
    }

    // ---- checkpointing ----

    StateDict state() const {
        StateDict out;
        visual.state(out);
        if (cfg.use_tags) text.state("text", out);
        cls.state("cls", out);
        lqp.state("lqp", out);
        lqp_cls.state("lqp_cls", out);
        aux_main.state("aux_main", out);
        aux_fusion.state("aux_fusion", out);
        if (cfg.use_tags) aux_text.state("aux_text", out);
        double stage_bits = 0.0;
        for (auto s : completed_stages) stage_bits += std::pow(2.0, static_cast<double>(s));
        out.push_back({"meta.completed_stages", {1}, {stage_bits}});
        return out;
    }

    void load_state(const StateDict& dict) {
        StateLookup in(dict);
        visual.load(in);
        if (cfg.use_tags) text.load("text", in);
        cls.load("cls", in);
        lqp.load("lqp", in);
        lqp_cls.load("lqp_cls", in);
        aux_main.load("aux_main", in);
        aux_fusion.load("aux_fusion", in);
        if (cfg.use_tags) aux_text.load("aux_text", in);
        completed_stages.clear();
        if (const StateEntry* meta = in.find("meta.completed_stages")) {
            const auto bits = static_cast<std::int64_t>(meta->values[0]);
            for (std::int64_t s = 1; s <= 6; ++s)
                if (bits & (std::int64_t{1} << s)) completed_stages.insert(s);
        }
        const auto leftover = in.unconsumed();
        if (!leftover.empty()) {
            std::string names;
            for (const auto& n : leftover) names += (names.empty() ? "" : ", ") + n;
            throw IoError("checkpoint contains entries this model does not expect: " + names);
        }
    }

    void save(const std::string& path) const { save_checkpoint(path, state()); }
    void load(const std::string& path) { load_state(load_checkpoint(path)); }

    // Copies the shared visual-branch weights (main + fusion + their batch
    // norm statistics) from another model, e.g. to evaluate a tag-free
    // variant against the same trained features.
    void adopt_visual_branch(const AnnotationModel& other) {
        StateDict dict;
        other.visual.state(dict);
        StateLookup in(dict);
        visual.load(in);
        for (auto s : {1, 2})
            if (other.completed_stages.count(s)) completed_stages.insert(s);
    }

    bool stage_completed(Stage s) const {
        return completed_stages.count(static_cast<std::int64_t>(s)) > 0;
    }
    void mark_completed(Stage s) { completed_stages.insert(static_cast<std::int64_t>(s)); }
};

}  // namespace msann
