#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seg/kg.hpp"
#include "seg/matrix.hpp"

namespace seg {

// Cosine similarities between a subset of KG1 entities (rows) and a subset
// of KG2 entities (columns). row_ids / col_ids hold dense entity indices.
struct SimilarityMatrix {
    Matrix values;
    std::vector<std::size_t> row_ids;
    std::vector<std::size_t> col_ids;
    std::vector<std::size_t> zero_rows;  // entity indices with zero-norm embeddings, either side

    std::size_t row_of(std::size_t entity) const {
        auto it = row_pos_.find(entity);
        return it == row_pos_.end() ? npos : it->second;
    }
    std::size_t col_of(std::size_t entity) const {
        auto it = col_pos_.find(entity);
        return it == col_pos_.end() ? npos : it->second;
    }
    double at(std::size_t e1, std::size_t e2) const { return values(row_of(e1), col_of(e2)); }

    void index() {
        row_pos_.clear();
        col_pos_.clear();
        for (std::size_t i = 0; i < row_ids.size(); ++i) row_pos_.emplace(row_ids[i], i);
        for (std::size_t j = 0; j < col_ids.size(); ++j) col_pos_.emplace(col_ids[j], j);
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::unordered_map<std::size_t, std::size_t> row_pos_, col_pos_;
};

namespace detail {
inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}
}  // namespace detail

inline SimilarityMatrix similarity_matrix(const Matrix& emb1, const Matrix& emb2, std::vector<std::size_t> rows,
                                          std::vector<std::size_t> cols) {
    if (emb1.cols() != emb2.cols())
        throw DimensionError("similarity_matrix: embedding widths differ " + emb1.shape() + " vs " + emb2.shape());
    SimilarityMatrix s;
    s.row_ids = std::move(rows);
    s.col_ids = std::move(cols);
    s.values = Matrix(s.row_ids.size(), s.col_ids.size());
    std::vector<double> inv1(s.row_ids.size()), inv2(s.col_ids.size());
    for (std::size_t i = 0; i < s.row_ids.size(); ++i) {
        const double n = l2_norm(emb1.row(s.row_ids[i]));
        inv1[i] = n > 0.0 ? 1.0 / n : 0.0;
        if (n == 0.0) s.zero_rows.push_back(s.row_ids[i]);
    }
    for (std::size_t j = 0; j < s.col_ids.size(); ++j) {
        const double n = l2_norm(emb2.row(s.col_ids[j]));
        inv2[j] = n > 0.0 ? 1.0 / n : 0.0;
        if (n == 0.0) s.zero_rows.push_back(s.col_ids[j]);
    }
    for (std::size_t i = 0; i < s.row_ids.size(); ++i) {
        auto a = emb1.row(s.row_ids[i]);
        auto out = s.values.row(i);
        for (std::size_t j = 0; j < s.col_ids.size(); ++j) {
            const double c = dot(a, emb2.row(s.col_ids[j])) * inv1[i] * inv2[j];
            out[j] = std::clamp(c, -1.0, 1.0);
        }
    }
    s.index();
    return s;
}

inline SimilarityMatrix similarity_matrix(const Matrix& emb1, const Matrix& emb2) {
    return similarity_matrix(emb1, emb2, detail::all_indices(emb1.rows()), detail::all_indices(emb2.rows()));
}

struct Candidate {
    std::size_t e1 = 0;
    std::size_t e2 = 0;
    double sim = 0.0;
};
using CandidateSet = std::vector<Candidate>;

// Every (e1, e2) with similarity >= threshold, in row-major order.
inline CandidateSet candidates(const SimilarityMatrix& sim, double threshold) {
    if (!(threshold > -1.0 && threshold <= 1.0)) throw std::invalid_argument("candidates: threshold must be in (-1, 1]");
    CandidateSet out;
    for (std::size_t i = 0; i < sim.row_ids.size(); ++i)
        for (std::size_t j = 0; j < sim.col_ids.size(); ++j)
            if (sim.values(i, j) >= threshold) out.push_back({sim.row_ids[i], sim.col_ids[j], sim.values(i, j)});
    return out;
}

// Similarity descending, then (e1, e2) ascending.
inline bool candidate_before(const Candidate& a, const Candidate& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    if (a.e1 != b.e1) return a.e1 < b.e1;
    return a.e2 < b.e2;
}

// Accepts pairs in candidate_before order while both endpoints are free.
inline std::vector<std::pair<std::size_t, std::size_t>> greedy_one_to_one(CandidateSet cands) {
    std::sort(cands.begin(), cands.end(), candidate_before);
    std::unordered_map<std::size_t, bool> used1, used2;
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const Candidate& c : cands) {
        if (used1[c.e1] || used2[c.e2]) continue;
        used1[c.e1] = used2[c.e2] = true;
        out.emplace_back(c.e1, c.e2);
    }
    return out;
}

struct Metrics {
    std::map<std::size_t, double> hits;  // k -> Hit@k
    double mrr = 0.0;
    std::size_t n = 0;

    double hit(std::size_t k) const {
        auto it = hits.find(k);
        if (it == hits.end()) throw std::out_of_range("Hit@" + std::to_string(k) + " was not computed");
        return it->second;
    }
};

// 1-based rank of column `target` in row `row`: similarity descending, ties
// broken by column entity index ascending.
inline std::size_t rank_in_row(const SimilarityMatrix& sim, std::size_t row, std::size_t target_col) {
    const double s = sim.values(row, target_col);
    const std::size_t tid = sim.col_ids[target_col];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < sim.col_ids.size(); ++j) {
        if (j == target_col) continue;
        const double v = sim.values(row, j);
        if (v > s || (v == s && sim.col_ids[j] < tid)) ++rank;
    }
    return rank;
}

inline Metrics evaluate(const SimilarityMatrix& sim, const std::vector<std::pair<std::size_t, std::size_t>>& gold,
                        const std::vector<std::size_t>& ks = {1, 5}) {
    Metrics m;
    m.n = gold.size();
    for (std::size_t k : ks) m.hits[k] = 0.0;
    if (gold.empty()) return m;
    std::vector<std::size_t> ranks;
    ranks.reserve(gold.size());
    for (const auto& [u, v] : gold) {
        const std::size_t r = sim.row_of(u);
        if (r == SimilarityMatrix::npos) throw std::invalid_argument("evaluate: KG1 entity " + std::to_string(u) + " missing from similarity rows");
        const std::size_t c = sim.col_of(v);
        if (c == SimilarityMatrix::npos) throw std::invalid_argument("evaluate: KG2 entity " + std::to_string(v) + " missing from similarity columns");
        ranks.push_back(rank_in_row(sim, r, c));
    }
    // Summing sorted ranks keeps the result independent of gold order.
    std::sort(ranks.begin(), ranks.end());
    for (std::size_t rank : ranks) {
        for (auto& [k, h] : m.hits)
            if (rank <= k) h += 1.0;
        m.mrr += 1.0 / static_cast<double>(rank);
    }
    for (auto& [k, h] : m.hits) h /= static_cast<double>(gold.size());
    m.mrr /= static_cast<double>(gold.size());
    return m;
}

}  // namespace seg
