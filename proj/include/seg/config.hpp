#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "json.hpp"
#include "seg/kg.hpp"
#include "seg/loss.hpp"
#include "seg/text_embed.hpp"

namespace seg {

// Every knob of a training run. JSON keys equal the field names.
struct TrainConfig {
    // optimisation
    std::size_t epochs = 1500;
    std::size_t layers = 2;
    std::size_t dim = 64;
    double lr = 0.005;
    double momentum = 0.9;
    std::size_t patience = 0;  // stop after this many epochs without a new best validation hit@1; 0 disables
    std::uint64_t rng_seed = 0;
    std::string init_mode = "anchor";  // input features without a file: "anchor" (seed-anchored proximity) or "random"
    double init_scale = 1.0;           // std-dev scale of "random" features
    double anchor_restart = 0.3;       // restart probability of the anchor random walks

    // encoder
    double attention_epsilon = 1.0;
    double leaky_slope = 0.01;
    bool use_highway = true;
    bool normalize_output = true;  // L2-normalize encoded rows before the losses
    double gate_init = 1.0;
    double attn_init_scale = 0.1;
    double highway_bias_init = 0.0;

    // matching and soft labels
    double candidate_threshold = 0.95;
    bool enable_soft_labels = true;
    double sim_e = 0.98;
    std::size_t match_e = 10;
    double sim_r = 0.98;
    std::size_t match_r = 600;
    std::size_t max_seed_neighbors = 982;
    double prune_lambda = 0.5;
    std::size_t text_dim = 512;

    // losses
    double beta = 1.0;
    double decay_gamma = 1.0;
    double margin_gamma = 3.0;
    double weighted_margin = 3.0;
    std::size_t k_negatives = 50;
    bool enable_weighted = true;
    bool enable_margin = true;
    std::string loss_form = "hinge";

    // semi-supervised expansion
    bool enable_expansion = true;
    std::size_t expansion_interval = 50;
    double mnn_threshold = 0.95;
    double pseudo_weight = 1.0;

    // data split
    double train_ratio = 0.2;
    double val_ratio = 0.1;
    double test_ratio = 0.7;
    std::size_t folds = 5;
    std::size_t fold = 0;

    LossConfig loss() const {
        LossConfig c;
        c.beta = beta;
        c.decay_gamma = decay_gamma;
        c.margin_gamma = margin_gamma;
        c.weighted_margin = weighted_margin;
        c.k = k_negatives;
        c.enable_weighted = enable_weighted;
        c.enable_margin = enable_margin;
        c.form = loss_form == "literal" ? LossForm::literal : LossForm::hinge;
        return c;
    }

    SplitRatios ratios() const { return {train_ratio, val_ratio, test_ratio}; }

    void validate() const {
        auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (layers < 1) throw ConfigError("layers must be >= 1");
        if (dim < 1) throw ConfigError("dim must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
        if (init_mode != "anchor" && init_mode != "random") throw ConfigError("init_mode must be 'anchor' or 'random'");
        if (!(init_scale > 0.0)) throw ConfigError("init_scale must be > 0");
        if (!(anchor_restart > 0.0 && anchor_restart < 1.0)) throw ConfigError("anchor_restart must be in (0, 1)");
        if (!(attention_epsilon > 0.0)) throw ConfigError("attention_epsilon must be > 0");
        if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must be in [0, 1)");
        if (!(candidate_threshold > -1.0 && candidate_threshold <= 1.0)) throw ConfigError("candidate_threshold must be in (-1, 1]");
        if (!(sim_e > -1.0 && sim_e <= 1.0)) throw ConfigError("sim_e must be in (-1, 1]");
        if (!(sim_r > -1.0 && sim_r <= 1.0)) throw ConfigError("sim_r must be in (-1, 1]");
        if (!(prune_lambda >= 0.0 && prune_lambda <= 1.0)) throw ConfigError("prune_lambda must be in [0, 1]");
        if (text_dim < 1) throw ConfigError("text_dim must be >= 1");
        if (loss_form != "hinge" && loss_form != "literal") throw ConfigError("loss_form must be 'hinge' or 'literal'");
        if (expansion_interval < 1) throw ConfigError("expansion_interval must be >= 1");
        if (!in_unit(mnn_threshold)) throw ConfigError("mnn_threshold must be in (0, 1]");
        if (!(pseudo_weight >= 0.0)) throw ConfigError("pseudo_weight must be >= 0");
        if (folds < 1) throw ConfigError("folds must be >= 1");
        if (fold >= folds) throw ConfigError("fold must be < folds");
        if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) throw ConfigError("train_ratio + val_ratio + test_ratio must equal 1");
        if (train_ratio <= 0.0 || val_ratio < 0.0 || test_ratio < 0.0) throw ConfigError("split ratios must be non-negative with train_ratio > 0");
        loss().validate();
    }
};

#define SEG_CONFIG_FIELDS(X)                                                                                           \
    X(epochs) X(layers) X(dim) X(lr) X(momentum) X(patience) X(rng_seed) X(init_mode) X(init_scale) X(anchor_restart) X(attention_epsilon) X(leaky_slope)         \
    X(use_highway) X(normalize_output) X(gate_init) X(attn_init_scale) X(highway_bias_init) X(candidate_threshold) X(enable_soft_labels)   \
    X(sim_e) X(match_e) X(sim_r) X(match_r) X(max_seed_neighbors) X(prune_lambda) X(text_dim) X(beta) X(decay_gamma)   \
    X(margin_gamma) X(weighted_margin) X(k_negatives) X(enable_weighted) X(enable_margin) X(loss_form)                 \
    X(enable_expansion) X(expansion_interval) X(mnn_threshold) X(pseudo_weight) X(train_ratio) X(val_ratio)            \
    X(test_ratio) X(folds) X(fold)

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json::object();
#define SEG_TO_JSON(f) j[#f] = c.f;
    SEG_CONFIG_FIELDS(SEG_TO_JSON)
#undef SEG_TO_JSON
}

// Applies the keys present in `j` on top of `c`. Unknown keys and type
// mismatches raise ConfigError naming the field.
inline void apply_json(TrainConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const nlohmann::json known = c;
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError("unknown config field '" + key + "'");
        const auto& ref = known[key];
        const bool ok = (ref.is_boolean() && value.is_boolean()) || (ref.is_string() && value.is_string()) ||
                        (ref.is_number_unsigned() && value.is_number_unsigned()) ||
                        (ref.is_number_float() && value.is_number());
        if (!ok) throw ConfigError("config field '" + key + "' has the wrong type");
    }
#define SEG_FROM_JSON(f) \
    if (j.contains(#f)) j.at(#f).get_to(c.f);
    SEG_CONFIG_FIELDS(SEG_FROM_JSON)
#undef SEG_FROM_JSON
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    apply_json(c, j);
}

// Defaults for small synthetic runs: match thresholds scaled to a few hundred
// entities and a training length that fits a desk CPU.
inline TrainConfig desk_preset() {
    TrainConfig c;
    c.epochs = 500;
    c.lr = 0.001;
    c.patience = 100;
    c.match_e = 2;
    c.match_r = 3;
    return c;
}

inline TrainConfig preset(const std::string& name) {
    if (name == "default") return TrainConfig{};
    if (name == "desk") return desk_preset();
    throw ConfigError("unknown preset '" + name + "' (expected default or desk)");
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string config_digest(const TrainConfig& c) { return hex64(fnv1a(nlohmann::json(c).dump())); }

}  // namespace seg
