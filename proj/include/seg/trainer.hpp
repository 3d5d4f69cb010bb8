#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "seg/anchor_init.hpp"
#include "seg/config.hpp"
#include "seg/encoder.hpp"
#include "seg/kg.hpp"
#include "seg/loss.hpp"
#include "seg/matcher.hpp"
#include "seg/soft_labels.hpp"
#include "seg/text_embed.hpp"

namespace seg {

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::size_t epoch, std::optional<std::size_t> last_finite)
        : std::runtime_error(what), epoch(epoch), last_finite_epoch(last_finite) {}
    std::size_t epoch;
    std::optional<std::size_t> last_finite_epoch;
};

// Adds every unseeded mutual nearest neighbor pair with similarity >=
// threshold. Argmax ties go to the lower entity index. Existing seeds are
// kept in order; new pairs are appended in row order.
inline PairList expand_seeds(const SimilarityMatrix& sim, const PairList& current, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("expand_seeds: threshold must be in (0, 1]");
    const std::size_t nr = sim.row_ids.size(), nc = sim.col_ids.size();
    PairList out = current;
    if (nr == 0 || nc == 0) return out;
    std::set<std::size_t> seeded1, seeded2;
    for (const auto& [u, v] : current) {
        seeded1.insert(u);
        seeded2.insert(v);
    }
    std::vector<std::size_t> row_best(nr, 0), col_best(nc, 0);
    for (std::size_t i = 0; i < nr; ++i)
        for (std::size_t j = 1; j < nc; ++j) {
            const double a = sim.values(i, j), b = sim.values(i, row_best[i]);
            if (a > b || (a == b && sim.col_ids[j] < sim.col_ids[row_best[i]])) row_best[i] = j;
        }
    for (std::size_t j = 0; j < nc; ++j)
        for (std::size_t i = 1; i < nr; ++i) {
            const double a = sim.values(i, j), b = sim.values(col_best[j], j);
            if (a > b || (a == b && sim.row_ids[i] < sim.row_ids[col_best[j]])) col_best[j] = i;
        }
    for (std::size_t i = 0; i < nr; ++i) {
        const std::size_t j = row_best[i];
        if (col_best[j] != i || sim.values(i, j) < threshold) continue;
        const std::size_t u = sim.row_ids[i], v = sim.col_ids[j];
        if (seeded1.contains(u) || seeded2.contains(v)) continue;
        out.emplace_back(u, v);
    }
    return out;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double val_hit1 = 0.0;
    std::size_t n_pseudo = 0;
};

// Everything needed to reproduce and evaluate the selected epoch.
struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    TrainConfig config;
    std::size_t epoch = 0;
    EncoderParams params;
    Matrix features1, features2;  // trainable input features of both graphs
    PruningWeights pruning;
    SoftLabelSet soft_labels;
    PairList pseudo_seeds;
    DatasetSplit split;
    std::vector<EpochRecord> history;
    Matrix out1, out2;  // encoded entities at `epoch`
};

struct ExpansionEvent {
    std::size_t epoch = 0;              // similarities were computed from this epoch's parameters
    const SimilarityMatrix* sim = nullptr;
    PairList before;                    // gold + pseudo seeds before admission
    PairList admitted;
};

struct TrainHooks {
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(const ExpansionEvent&)> on_expansion;
};

struct TrainInputs {
    const KnowledgeGraph* kg1 = nullptr;
    const KnowledgeGraph* kg2 = nullptr;
    DatasetSplit split;
    std::optional<Matrix> init1, init2;          // initial entity features; random when absent
    std::optional<Matrix> rel_text1, rel_text2;  // relation description vectors; trigram hashing when absent
};

inline Matrix random_features(std::size_t rows, std::size_t dim, double scale, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale / std::sqrt(static_cast<double>(dim)));
    Matrix m(rows, dim);
    for (double& v : m.data()) v = n(rng);
    return m;
}

namespace detail {

inline std::vector<double> pair_weights(std::size_t n_gold, std::size_t n_pseudo, double pseudo_weight) {
    std::vector<double> w(n_gold + n_pseudo, 1.0);
    for (std::size_t i = n_gold; i < w.size(); ++i) w[i] = pseudo_weight;
    return w;
}

struct Momentum {
    std::vector<Matrix> velocity;

    void step(std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads, double lr, double mu) {
        if (velocity.empty())
            for (const Matrix* p : params) velocity.emplace_back(p->rows(), p->cols());
        for (std::size_t k = 0; k < params.size(); ++k) {
            Matrix& v = velocity[k];
            Matrix& p = *params[k];
            const Matrix& g = *grads[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                v[i] = mu * v[i] + g[i];
                p[i] -= lr * v[i];
            }
        }
    }
};

}  // namespace detail

// Semi-supervised training. Each epoch encodes both graphs with shared
// parameters, mines hard negatives for gold + pseudo seeds, and takes one
// gradient step on the enabled losses. Every expansion_interval epochs the
// soft labels and pruning weights are rebuilt and mutual nearest neighbors
// are admitted as pseudo-seeds. Returns the epoch with the best validation
// Hit@1 (later epochs win ties).
inline Checkpoint train(const TrainInputs& in, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    if (!in.kg1 || !in.kg2) throw std::invalid_argument("train: both graphs are required");
    if (in.split.train.empty()) throw std::invalid_argument("train: no training seeds");
    const KnowledgeGraph& kg1 = *in.kg1;
    const KnowledgeGraph& kg2 = *in.kg2;
    const LossConfig loss_cfg = cfg.loss();

    Checkpoint state;
    state.config = cfg;
    state.split = in.split;
    state.params = EncoderParams::make(cfg.dim, cfg.layers, cfg.rng_seed,
                                       {cfg.gate_init, cfg.attn_init_scale, cfg.highway_bias_init});
    state.params.epsilon = cfg.attention_epsilon;
    state.params.leaky_slope = cfg.leaky_slope;
    if (in.init1.has_value() != in.init2.has_value()) throw std::invalid_argument("train: give initial features for both graphs or neither");
    if (in.init1) {
        state.features1 = *in.init1;
        state.features2 = *in.init2;
    } else if (cfg.init_mode == "anchor") {
        std::tie(state.features1, state.features2) =
            anchor_features(kg1, kg2, in.split.train, cfg.dim, {cfg.anchor_restart, 30, cfg.rng_seed});
    } else {
        state.features1 = random_features(kg1.num_entities(), cfg.dim, cfg.init_scale, cfg.rng_seed * 2 + 1);
        state.features2 = random_features(kg2.num_entities(), cfg.dim, cfg.init_scale, cfg.rng_seed * 2 + 2);
    }
    if (state.features1.rows() != kg1.num_entities() || state.features1.cols() != cfg.dim ||
        state.features2.rows() != kg2.num_entities() || state.features2.cols() != cfg.dim)
        throw DimensionError("train: initial features must be |entities| x dim");
    state.pruning = unit_pruning(kg1, kg2);

    const TrigramHashEmbedder trigram(cfg.text_dim);
    const Matrix text1 = in.rel_text1 ? *in.rel_text1 : embed_relation_text(trigram, kg1);
    const Matrix text2 = in.rel_text2 ? *in.rel_text2 : embed_relation_text(trigram, kg2);

    const GraphStructure g1 = build_structure(kg1);
    const GraphStructure g2 = build_structure(kg2);
    std::vector<double> slots1 = slot_multipliers(g1, state.pruning.kg1);
    std::vector<double> slots2 = slot_multipliers(g2, state.pruning.kg2);

    const PairList& gold = in.split.train;
    PairList pseudo;
    detail::Momentum opt;
    Checkpoint best;
    bool have_best = false;
    std::optional<std::size_t> last_finite;
    std::size_t last_improvement = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tape tape;
        EncoderVars vars = register_params(tape, state.params);
        Var x1 = tape.param(state.features1, "features1");
        Var x2 = tape.param(state.features2, "features2");
        Var o1 = encode(g1, x1, vars, state.params, cfg.use_highway, &slots1);
        Var o2 = encode(g2, x2, vars, state.params, cfg.use_highway, &slots2);
        if (cfg.normalize_output) {
            o1 = row_normalize(o1);
            o2 = row_normalize(o2);
        }

        const SimilarityMatrix sim = similarity_matrix(o1.value(), o2.value());
        PairList positives = gold;
        positives.insert(positives.end(), pseudo.begin(), pseudo.end());
        const auto weights = detail::pair_weights(gold.size(), pseudo.size(), cfg.pseudo_weight);
        const NegativeBatch negs = mine_negatives(sim, positives, loss_cfg.k);
        Var loss = total_loss(o1, o2, positives, negs, loss_cfg, &weights);
        const double loss_value = loss.value()[0];
        if (!std::isfinite(loss_value) || !o1.value().all_finite() || !o2.value().all_finite()) {
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      (last_finite ? "; last finite epoch " + std::to_string(*last_finite) : std::string{}),
                                  epoch, last_finite);
        }
        last_finite = epoch;

        EpochRecord rec{epoch, loss_value, 0.0, pseudo.size()};
        if (!in.split.validation.empty()) rec.val_hit1 = evaluate(sim, in.split.validation, {1}).hit(1);
        state.history.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(rec);

        if (have_best && rec.val_hit1 > best.history.back().val_hit1) last_improvement = epoch;
        if (!have_best || in.split.validation.empty() || rec.val_hit1 >= best.history.back().val_hit1) {
            best.config = cfg;
            best.epoch = epoch;
            best.params = state.params;
            best.features1 = state.features1;
            best.features2 = state.features2;
            best.pruning = state.pruning;
            best.soft_labels = state.soft_labels;
            best.pseudo_seeds = pseudo;
            best.out1 = o1.value();
            best.out2 = o2.value();
            best.history = {rec};
            have_best = true;
        }

        if (cfg.patience > 0 && !in.split.validation.empty() && epoch - last_improvement >= cfg.patience) break;

        tape.backward(loss);
        std::vector<Matrix*> ps;
        std::vector<const Matrix*> gs;
        std::size_t k = 0;
        state.params.for_each([&](const std::string&, Matrix& m) { ps.push_back(&m); });
        for (; k < vars.gates.size(); ++k) gs.push_back(&vars.gates[k].grad());
        for (const Var& a : vars.attn) gs.push_back(&a.grad());
        for (const Var* v : {&vars.rel_attn, &vars.proj_w, &vars.proj_b, &vars.hw_w, &vars.hw_b}) gs.push_back(&v->grad());
        ps.push_back(&state.features1);
        gs.push_back(&x1.grad());
        ps.push_back(&state.features2);
        gs.push_back(&x2.grad());
        opt.step(ps, gs, cfg.lr, cfg.momentum);

        const bool expand_now = cfg.enable_expansion && (epoch + 1) % cfg.expansion_interval == 0 && epoch + 1 < cfg.epochs;
        if (expand_now) {
            if (cfg.enable_soft_labels) {
                const auto ent = entity_mode_labels(kg1, kg2, o1.value(), o2.value(), positives, {cfg.sim_e, cfg.match_e},
                                                    cfg.max_seed_neighbors);
                const auto rel = relation_mode_labels(kg1, kg2, text1, text2, candidates(sim, cfg.candidate_threshold),
                                                      {cfg.sim_r, cfg.match_r});
                state.soft_labels = fuse(ent, rel);
                state.pruning = pruning_weights(state.soft_labels, kg1, kg2, cfg.prune_lambda);
                slots1 = slot_multipliers(g1, state.pruning.kg1);
                slots2 = slot_multipliers(g2, state.pruning.kg2);
            }
            PairList expanded = expand_seeds(sim, positives, cfg.mnn_threshold);
            ExpansionEvent ev;
            ev.epoch = epoch;
            ev.sim = &sim;
            ev.before = positives;
            ev.admitted.assign(expanded.begin() + static_cast<std::ptrdiff_t>(positives.size()), expanded.end());
            pseudo.insert(pseudo.end(), ev.admitted.begin(), ev.admitted.end());
            if (hooks.on_expansion) hooks.on_expansion(ev);
        }
    }
    best.split = in.split;
    best.history = state.history;
    return best;
}

// Test-split metrics from the checkpoint's stored encodings; columns range
// over every KG2 entity.
inline Metrics evaluate_checkpoint(const Checkpoint& ckpt, const DatasetSplit& split, const std::vector<std::size_t>& ks = {1, 5}) {
    std::vector<std::size_t> rows;
    for (const auto& p : split.test) rows.push_back(p.first);
    return evaluate(similarity_matrix(ckpt.out1, ckpt.out2, rows, detail::all_indices(ckpt.out2.rows())), split.test, ks);
}

inline Matrix normalize_rows(Matrix m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double n = l2_norm(m.row(i));
        if (n == 0.0) continue;
        for (double& v : m.row(i)) v /= n;
    }
    return m;
}

// Recomputes both graphs' encodings from the checkpoint's parameters.
inline std::pair<Matrix, Matrix> reencode(const Checkpoint& ckpt, const KnowledgeGraph& kg1, const KnowledgeGraph& kg2) {
    const GraphStructure g1 = build_structure(kg1);
    const GraphStructure g2 = build_structure(kg2);
    const auto s1 = slot_multipliers(g1, ckpt.pruning.kg1);
    const auto s2 = slot_multipliers(g2, ckpt.pruning.kg2);
    Matrix o1 = encode_values(g1, ckpt.features1, ckpt.params, ckpt.config.use_highway, &s1);
    Matrix o2 = encode_values(g2, ckpt.features2, ckpt.params, ckpt.config.use_highway, &s2);
    if (ckpt.config.normalize_output) {
        o1 = normalize_rows(std::move(o1));
        o2 = normalize_rows(std::move(o2));
    }
    return {std::move(o1), std::move(o2)};
}

// ---- checkpoint serialization -------------------------------------------

inline nlohmann::json matrix_to_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), j.at("data").get<std::vector<double>>());
}

inline nlohmann::json pairs_to_json(const PairList& p) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& [u, v] : p) a.push_back({u, v});
    return a;
}

inline PairList pairs_from_json(const nlohmann::json& j) {
    PairList p;
    for (const auto& e : j) p.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    return p;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    nlohmann::json params = nlohmann::json::object();
    c.params.for_each([&](const std::string& name, const Matrix& m) { params[name] = matrix_to_json(m); });
    nlohmann::json labels = nlohmann::json::array();
    for (const SoftLabel& l : c.soft_labels.labels)
        labels.push_back({{"kind", to_string(l.kind)}, {"r1", l.r1}, {"r2", l.r2}, {"support1", l.support1},
                          {"support2", l.support2}, {"similarity", l.similarity}, {"match_count", l.match_count}});
    nlohmann::json history = nlohmann::json::array();
    for (const EpochRecord& r : c.history)
        history.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"val_hit1", r.val_hit1}, {"n_pseudo", r.n_pseudo}});
    return {{"format_version", Checkpoint::kFormatVersion},
            {"config", c.config},
            {"config_digest", config_digest(c.config)},
            {"epoch", c.epoch},
            {"encoder",
             {{"dim", c.params.dim}, {"epsilon", c.params.epsilon}, {"leaky_slope", c.params.leaky_slope}, {"params", params}}},
            {"features1", matrix_to_json(c.features1)},
            {"features2", matrix_to_json(c.features2)},
            {"pruning", {{"kg1", c.pruning.kg1}, {"kg2", c.pruning.kg2}}},
            {"soft_labels", labels},
            {"pseudo_seeds", pairs_to_json(c.pseudo_seeds)},
            {"split",
             {{"fold", c.split.fold},
              {"train", pairs_to_json(c.split.train)},
              {"validation", pairs_to_json(c.split.validation)},
              {"test", pairs_to_json(c.split.test)}}},
            {"history", history},
            {"out1", matrix_to_json(c.out1)},
            {"out2", matrix_to_json(c.out2)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    const int version = j.at("format_version").get<int>();
    if (version != Checkpoint::kFormatVersion)
        throw DataError("unsupported checkpoint format_version " + std::to_string(version));
    Checkpoint c;
    c.config = j.at("config").get<TrainConfig>();
    c.epoch = j.at("epoch").get<std::size_t>();
    const auto& enc = j.at("encoder");
    const auto& params = enc.at("params");
    c.params.dim = enc.at("dim").get<std::size_t>();
    c.params.epsilon = enc.at("epsilon").get<double>();
    c.params.leaky_slope = enc.at("leaky_slope").get<double>();
    for (std::size_t l = 0; params.contains("gate" + std::to_string(l)); ++l) {
        c.params.gates.push_back(matrix_from_json(params.at("gate" + std::to_string(l))));
        c.params.attn.push_back(matrix_from_json(params.at("attn" + std::to_string(l))));
    }
    c.params.rel_attn = matrix_from_json(params.at("rel_attn"));
    c.params.proj_w = matrix_from_json(params.at("proj_w"));
    c.params.proj_b = matrix_from_json(params.at("proj_b"));
    c.params.hw_w = matrix_from_json(params.at("hw_w"));
    c.params.hw_b = matrix_from_json(params.at("hw_b"));
    c.params.validate();
    c.features1 = matrix_from_json(j.at("features1"));
    c.features2 = matrix_from_json(j.at("features2"));
    c.pruning.kg1 = j.at("pruning").at("kg1").get<std::vector<double>>();
    c.pruning.kg2 = j.at("pruning").at("kg2").get<std::vector<double>>();
    for (const auto& l : j.at("soft_labels")) {
        SoftLabel s;
        s.kind = l.at("kind").get<std::string>() == "relation" ? LabelKind::relation_mode : LabelKind::entity_mode;
        s.r1 = l.at("r1").get<std::size_t>();
        s.r2 = l.at("r2").get<std::size_t>();
        s.support1 = l.at("support1").get<std::size_t>();
        s.support2 = l.at("support2").get<std::size_t>();
        s.similarity = l.at("similarity").get<double>();
        s.match_count = l.at("match_count").get<std::size_t>();
        c.soft_labels.labels.push_back(s);
        c.soft_labels.map.emplace(s.r1, s.r2);
    }
    c.pseudo_seeds = pairs_from_json(j.at("pseudo_seeds"));
    const auto& sp = j.at("split");
    c.split.fold = sp.at("fold").get<std::size_t>();
    c.split.train = pairs_from_json(sp.at("train"));
    c.split.validation = pairs_from_json(sp.at("validation"));
    c.split.test = pairs_from_json(sp.at("test"));
    for (const auto& r : j.at("history"))
        c.history.push_back({r.at("epoch").get<std::size_t>(), r.at("loss").get<double>(), r.at("val_hit1").get<double>(),
                             r.at("n_pseudo").get<std::size_t>()});
    c.out1 = matrix_from_json(j.at("out1"));
    c.out2 = matrix_from_json(j.at("out2"));
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write " + file.string());
    out << checkpoint_to_json(c).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + file.string());
    nlohmann::json j;
    try {
        in >> j;
        return checkpoint_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint " + file.string() + ": " + e.what());
    }
}

}  // namespace seg
