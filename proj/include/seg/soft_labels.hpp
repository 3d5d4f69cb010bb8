#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "seg/kg.hpp"
#include "seg/matcher.hpp"

namespace seg {

enum class LabelKind { entity_mode, relation_mode };

inline const char* to_string(LabelKind k) { return k == LabelKind::entity_mode ? "entity" : "relation"; }

// A screened relation correspondence r1 (KG1) <-> r2 (KG2).
struct SoftLabel {
    LabelKind kind = LabelKind::entity_mode;
    std::size_t r1 = 0;
    std::size_t r2 = 0;
    std::size_t support1 = 0;  // entity_mode: best supporting neighbor pair
    std::size_t support2 = 0;
    double similarity = 0.0;
    std::size_t match_count = 0;

    friend bool operator==(const SoftLabel&, const SoftLabel&) = default;
};

struct SoftLabelSet {
    std::vector<SoftLabel> labels;           // accepted labels, relation_mode first
    std::map<std::size_t, std::size_t> map;  // fused r1 -> r2, one-to-one

    bool empty() const { return labels.empty(); }
};

struct SoftLabelThresholds {
    double sim = 0.98;
    std::size_t match = 10;
};

namespace detail {

struct IncidentEdge {
    std::size_t rel;
    std::size_t nbr;
    bool outgoing;
};

// Out-edges then in-edges of e, at most cap of them.
inline std::vector<IncidentEdge> incident(const KnowledgeGraph& kg, std::size_t e, std::size_t cap) {
    std::vector<IncidentEdge> out;
    for (const Neighbor& n : kg.out_index()[e]) {
        if (out.size() >= cap) return out;
        out.push_back({n.rel, n.entity, true});
    }
    for (const Neighbor& n : kg.in_index()[e]) {
        if (out.size() >= cap) return out;
        out.push_back({n.rel, n.entity, false});
    }
    return out;
}

// Similarity descending, match count descending, (r1, r2) ascending.
inline bool label_before(const SoftLabel& a, const SoftLabel& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.match_count != b.match_count) return a.match_count > b.match_count;
    return std::tie(a.r1, a.r2) < std::tie(b.r1, b.r2);
}

}  // namespace detail

// Seed-anchored neighborhood screening. For every seed (a, b), neighbor pairs
// in N(a) x N(b) with cosine >= th.sim are resolved one-to-one, highest first.
// Each kept pair adds one match to every relation pair (r_a, r_b) linking it
// to its seed with the same orientation. Relation pairs whose count over all
// seeds reaches th.match are emitted, sorted by (r1, r2).
inline std::vector<SoftLabel> entity_mode_labels(const KnowledgeGraph& kg1, const KnowledgeGraph& kg2, const Matrix& emb1,
                                                 const Matrix& emb2, const PairList& seeds, SoftLabelThresholds th,
                                                 std::size_t max_seed_neighbors = 982) {
    struct Acc {
        std::size_t count = 0;
        double best = -std::numeric_limits<double>::infinity();
        std::size_t s1 = 0, s2 = 0;
    };
    std::map<std::pair<std::size_t, std::size_t>, Acc> acc;
    for (const auto& [a, b] : seeds) {
        const auto n1 = detail::incident(kg1, a, max_seed_neighbors);
        const auto n2 = detail::incident(kg2, b, max_seed_neighbors);
        std::set<std::size_t> nb1, nb2;
        for (const auto& e : n1) nb1.insert(e.nbr);
        for (const auto& e : n2) nb2.insert(e.nbr);
        CandidateSet cands;
        for (std::size_t x : nb1)
            for (std::size_t y : nb2) {
                const double s = cosine(emb1.row(x), emb2.row(y));
                if (s >= th.sim) cands.push_back({x, y, s});
            }
        std::map<std::pair<std::size_t, std::size_t>, double> sim_of;
        for (const auto& c : cands) sim_of[{c.e1, c.e2}] = c.sim;
        for (const auto& [x, y] : greedy_one_to_one(cands)) {
            const double s = sim_of.at({x, y});
            for (const auto& e1 : n1) {
                if (e1.nbr != x) continue;
                for (const auto& e2 : n2) {
                    if (e2.nbr != y || e2.outgoing != e1.outgoing) continue;
                    Acc& ac = acc[{e1.rel, e2.rel}];
                    ++ac.count;
                    if (s > ac.best || (s == ac.best && std::tie(x, y) < std::tie(ac.s1, ac.s2))) {
                        ac.best = s;
                        ac.s1 = x;
                        ac.s2 = y;
                    }
                }
            }
        }
    }
    std::vector<SoftLabel> out;
    for (const auto& [rp, ac] : acc) {
        if (ac.count < th.match) continue;
        out.push_back({LabelKind::entity_mode, rp.first, rp.second, ac.s1, ac.s2, ac.best, ac.count});
    }
    return out;
}

// Number of candidate entity pairs (x, y) that instantiate each relation
// pair: x has an r1 edge and y has an r2 edge in the same orientation. Each
// candidate counts a relation pair at most once.
inline std::map<std::pair<std::size_t, std::size_t>, std::size_t> relation_cooccurrence(const KnowledgeGraph& kg1,
                                                                                       const KnowledgeGraph& kg2,
                                                                                       const CandidateSet& cands) {
    constexpr auto all = std::numeric_limits<std::size_t>::max();
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
    for (const Candidate& c : cands) {
        std::set<std::pair<std::size_t, std::size_t>> seen;
        const auto n1 = detail::incident(kg1, c.e1, all);
        const auto n2 = detail::incident(kg2, c.e2, all);
        for (const auto& a : n1)
            for (const auto& b : n2)
                if (a.outgoing == b.outgoing) seen.insert({a.rel, b.rel});
        for (const auto& rp : seen) ++counts[rp];
    }
    return counts;
}

// Relation-semantic screening: relation pairs whose description vectors have
// cosine >= th.sim and whose co-occurrence over candidate entity pairs
// reaches th.match, resolved one-to-one by similarity.
inline std::vector<SoftLabel> relation_mode_labels(const KnowledgeGraph& kg1, const KnowledgeGraph& kg2, const Matrix& text1,
                                                   const Matrix& text2, const CandidateSet& cands, SoftLabelThresholds th) {
    if (text1.rows() != kg1.num_relations() || text2.rows() != kg2.num_relations())
        throw DimensionError("relation_mode_labels: relation text rows do not match relation counts");
    std::vector<SoftLabel> pool;
    for (const auto& [rp, count] : relation_cooccurrence(kg1, kg2, cands)) {
        if (count < th.match) continue;
        const double s = cosine(text1.row(rp.first), text2.row(rp.second));
        if (s < th.sim) continue;
        pool.push_back({LabelKind::relation_mode, rp.first, rp.second, 0, 0, s, count});
    }
    std::sort(pool.begin(), pool.end(), detail::label_before);
    std::set<std::size_t> used1, used2;
    std::vector<SoftLabel> out;
    for (const SoftLabel& l : pool) {
        if (used1.contains(l.r1) || used2.contains(l.r2)) continue;
        used1.insert(l.r1);
        used2.insert(l.r2);
        out.push_back(l);
    }
    return out;
}

// Prioritized union: relation-mode labels are placed first, then entity-mode
// labels fill relations not yet claimed on either side.
inline SoftLabelSet fuse(std::vector<SoftLabel> entity_labels, std::vector<SoftLabel> relation_labels) {
    SoftLabelSet set;
    std::set<std::size_t> used1, used2;
    auto take = [&](std::vector<SoftLabel>& labels) {
        std::sort(labels.begin(), labels.end(), detail::label_before);
        for (const SoftLabel& l : labels) {
            if (used1.contains(l.r1) || used2.contains(l.r2)) continue;
            used1.insert(l.r1);
            used2.insert(l.r2);
            set.labels.push_back(l);
            set.map.emplace(l.r1, l.r2);
        }
    };
    take(relation_labels);
    take(entity_labels);
    return set;
}

// Splits a fused set back into (entity-mode, relation-mode) labels.
inline std::pair<std::vector<SoftLabel>, std::vector<SoftLabel>> split_by_kind(const SoftLabelSet& set) {
    std::pair<std::vector<SoftLabel>, std::vector<SoftLabel>> out;
    for (const SoftLabel& l : set.labels) (l.kind == LabelKind::entity_mode ? out.first : out.second).push_back(l);
    return out;
}

// Per-triple attention multipliers for both graphs.
struct PruningWeights {
    std::vector<double> kg1;
    std::vector<double> kg2;
};

inline PruningWeights unit_pruning(const KnowledgeGraph& kg1, const KnowledgeGraph& kg2) {
    return {std::vector<double>(kg1.num_triples(), 1.0), std::vector<double>(kg2.num_triples(), 1.0)};
}

// Triples whose relation takes part in the fused map keep weight 1; all other
// triples get `lambda`. An empty soft-label set prunes nothing.
inline PruningWeights pruning_weights(const SoftLabelSet& set, const KnowledgeGraph& kg1, const KnowledgeGraph& kg2,
                                      double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("prune_lambda must be in [0, 1]");
    PruningWeights w = unit_pruning(kg1, kg2);
    if (set.map.empty()) return w;
    std::set<std::size_t> matched1, matched2;
    for (const auto& [a, b] : set.map) {
        matched1.insert(a);
        matched2.insert(b);
    }
    for (std::size_t i = 0; i < kg1.num_triples(); ++i)
        if (!matched1.contains(kg1.triples()[i].rel)) w.kg1[i] = lambda;
    for (std::size_t i = 0; i < kg2.num_triples(); ++i)
        if (!matched2.contains(kg2.triples()[i].rel)) w.kg2[i] = lambda;
    return w;
}

// Audit lines: kind, r1 id, r2 id, similarity, count (tab-separated).
inline void write_soft_label_audit(std::ostream& os, const SoftLabelSet& set, const KnowledgeGraph& kg1,
                                   const KnowledgeGraph& kg2) {
    const auto old = os.precision(17);
    for (const SoftLabel& l : set.labels)
        os << to_string(l.kind) << '\t' << kg1.relation_id(l.r1) << '\t' << kg2.relation_id(l.r2) << '\t' << l.similarity
           << '\t' << l.match_count << '\n';
    os.precision(old);
}

}  // namespace seg
