#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "seg/matcher.hpp"
#include "seg/tape.hpp"

namespace seg {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class LossForm {
    hinge,    // w_j * max(0, weighted_margin - D_ij): pushes hard negatives out
    literal,  // w_j * D_ij as printed
};

struct LossConfig {
    double beta = 1.0;
    double decay_gamma = 1.0;
    double margin_gamma = 3.0;
    double weighted_margin = 3.0;
    std::size_t k = 50;
    bool enable_weighted = true;
    bool enable_margin = true;
    LossForm form = LossForm::hinge;

    void validate() const {
        if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
        if (!(decay_gamma >= 0.0)) throw ConfigError("decay_gamma must be >= 0");
        if (!(margin_gamma > 0.0)) throw ConfigError("margin_gamma must be > 0");
        if (!(weighted_margin > 0.0)) throw ConfigError("weighted_margin must be > 0");
        if (k < 1) throw ConfigError("k_negatives must be >= 1");
        if (!enable_weighted && !enable_margin) throw ConfigError("at least one of enable_weighted / enable_margin must be set");
    }
};

// Per positive pair (u, v): KG2 negatives of u and KG1 negatives of v, each
// ranked by similarity descending then entity index ascending.
struct NegativeBatch {
    std::vector<std::vector<std::size_t>> for_kg1;  // KG2 entities near u
    std::vector<std::vector<std::size_t>> for_kg2;  // KG1 entities near v
};

inline NegativeBatch mine_negatives(const SimilarityMatrix& sim, const PairList& positives, std::size_t k) {
    if (k < 1) throw std::invalid_argument("mine_negatives: K must be >= 1");
    NegativeBatch nb;
    nb.for_kg1.reserve(positives.size());
    nb.for_kg2.reserve(positives.size());
    std::vector<std::pair<double, std::size_t>> buf;
    auto top_k = [&](std::size_t keep) {
        const std::size_t n = std::min(keep, buf.size());
        auto cmp = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
        std::partial_sort(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(n), buf.end(), cmp);
        std::vector<std::size_t> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].second;
        return out;
    };
    for (const auto& [u, v] : positives) {
        const std::size_t r = sim.row_of(u);
        const std::size_t c = sim.col_of(v);
        if (r == SimilarityMatrix::npos || c == SimilarityMatrix::npos)
            throw std::invalid_argument("mine_negatives: positive (" + std::to_string(u) + ", " + std::to_string(v) +
                                        ") not covered by the similarity matrix");
        buf.clear();
        for (std::size_t j = 0; j < sim.col_ids.size(); ++j)
            if (sim.col_ids[j] != v) buf.emplace_back(sim.values(r, j), sim.col_ids[j]);
        nb.for_kg1.push_back(top_k(k));
        buf.clear();
        for (std::size_t i = 0; i < sim.row_ids.size(); ++i)
            if (sim.row_ids[i] != u) buf.emplace_back(sim.values(i, c), sim.row_ids[i]);
        nb.for_kg2.push_back(top_k(k));
    }
    return nb;
}

// beta * exp(-gamma * (j-1)/(K-1)) for rank j = 1..K; beta alone when K = 1.
inline double negative_weight(std::size_t rank, const LossConfig& cfg) {
    if (cfg.k <= 1) return cfg.beta;
    return cfg.beta * std::exp(-cfg.decay_gamma * static_cast<double>(rank - 1) / static_cast<double>(cfg.k - 1));
}

inline std::vector<double> negative_weights(const LossConfig& cfg) {
    std::vector<double> w(cfg.k);
    for (std::size_t j = 1; j <= cfg.k; ++j) w[j - 1] = negative_weight(j, cfg);
    return w;
}

namespace detail {

// Flattened (anchor, negative, rank, pair weight) rows for one direction.
struct NegativeRows {
    std::vector<std::size_t> anchor, negative, rank, owner;
};

inline NegativeRows flatten(const PairList& positives, const std::vector<std::vector<std::size_t>>& negs, bool from_kg1) {
    NegativeRows rows;
    for (std::size_t p = 0; p < positives.size(); ++p) {
        for (std::size_t j = 0; j < negs[p].size(); ++j) {
            rows.anchor.push_back(from_kg1 ? positives[p].first : positives[p].second);
            rows.negative.push_back(negs[p][j]);
            rows.rank.push_back(j + 1);
            rows.owner.push_back(p);
        }
    }
    return rows;
}

inline Matrix owner_weights(const NegativeRows& rows, const std::vector<double>* pair_weights, double extra(std::size_t, const LossConfig&),
                            const LossConfig& cfg) {
    Matrix w(rows.anchor.size(), 1);
    for (std::size_t i = 0; i < rows.anchor.size(); ++i) {
        const double pw = pair_weights ? (*pair_weights)[rows.owner[i]] : 1.0;
        w[i] = pw * (extra ? extra(rows.rank[i], cfg) : 1.0);
    }
    return w;
}

inline void check_batch(const PairList& positives, const NegativeBatch& negs, const std::vector<double>* pair_weights) {
    if (negs.for_kg1.size() != positives.size() || negs.for_kg2.size() != positives.size())
        throw std::invalid_argument("loss: negative batch does not match positives");
    if (pair_weights && pair_weights->size() != positives.size())
        throw std::invalid_argument("loss: pair weights do not match positives");
}

}  // namespace detail

// Rank-decayed bidirectional weighted loss over both negative directions.
// Hinge form: sum w_j * max(0, weighted_margin - D_ij); literal: sum w_j * D_ij.
// D is the L1 distance between the positive's anchor and the negative.
inline Var weighted_loss(const Var& out1, const Var& out2, const PairList& positives, const NegativeBatch& negs,
                         const LossConfig& cfg, const std::vector<double>* pair_weights = nullptr) {
    detail::check_batch(positives, negs, pair_weights);
    Tape& tape = detail::same_tape(out1, out2);
    Var total = tape.constant(Matrix::scalar(0.0));
    for (int dir = 0; dir < 2; ++dir) {
        const bool from_kg1 = dir == 0;
        auto rows = detail::flatten(positives, from_kg1 ? negs.for_kg1 : negs.for_kg2, from_kg1);
        if (rows.anchor.empty()) continue;
        const Var& anchors_src = from_kg1 ? out1 : out2;
        const Var& negs_src = from_kg1 ? out2 : out1;
        Var d = row_l1(gather_rows(anchors_src, rows.anchor), gather_rows(negs_src, rows.negative));
        Matrix w = detail::owner_weights(rows, pair_weights, negative_weight, cfg);
        Var term = cfg.form == LossForm::hinge ? relu(add_scalar(scale(d, -1.0), cfg.weighted_margin)) : d;
        total = add(total, sum(mul_const(term, w)));
    }
    return total;
}

// Bidirectional margin loss: for each positive (u, v) and each ranked
// negative, [D(u,v) + margin - D(u, v')]_+ + [D(u,v) + margin - D(u', v)]_+.
inline Var margin_loss(const Var& out1, const Var& out2, const PairList& positives, const NegativeBatch& negs,
                       const LossConfig& cfg, const std::vector<double>* pair_weights = nullptr) {
    detail::check_batch(positives, negs, pair_weights);
    Tape& tape = detail::same_tape(out1, out2);
    Var total = tape.constant(Matrix::scalar(0.0));
    for (int dir = 0; dir < 2; ++dir) {
        const bool corrupt_kg2 = dir == 0;
        auto rows = detail::flatten(positives, corrupt_kg2 ? negs.for_kg1 : negs.for_kg2, corrupt_kg2);
        if (rows.anchor.empty()) continue;
        std::vector<std::size_t> pu, pv;
        for (std::size_t owner : rows.owner) {
            pu.push_back(positives[owner].first);
            pv.push_back(positives[owner].second);
        }
        Var pos = row_l1(gather_rows(out1, pu), gather_rows(out2, pv));
        Var neg = corrupt_kg2 ? row_l1(gather_rows(out1, pu), gather_rows(out2, rows.negative))
                              : row_l1(gather_rows(out1, rows.negative), gather_rows(out2, pv));
        Var hinge = relu(add_scalar(sub(pos, neg), cfg.margin_gamma));
        Matrix w = detail::owner_weights(rows, pair_weights, nullptr, cfg);
        total = add(total, sum(mul_const(hinge, w)));
    }
    return total;
}

// Sum of the enabled terms.
inline Var total_loss(const Var& out1, const Var& out2, const PairList& positives, const NegativeBatch& negs,
                      const LossConfig& cfg, const std::vector<double>* pair_weights = nullptr) {
    cfg.validate();
    if (cfg.enable_weighted && cfg.enable_margin)
        return add(weighted_loss(out1, out2, positives, negs, cfg, pair_weights),
                   margin_loss(out1, out2, positives, negs, cfg, pair_weights));
    if (cfg.enable_weighted) return weighted_loss(out1, out2, positives, negs, cfg, pair_weights);
    return margin_loss(out1, out2, positives, negs, cfg, pair_weights);
}

}  // namespace seg
