#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace seg;
using seg::testing::make_graph;
using seg::testing::random_matrix;

namespace {

Matrix one_hot(std::size_t n) { return Matrix::identity(n); }

using RelPair = std::pair<std::size_t, std::size_t>;

// Counts relation pairs by scanning the raw triple lists around each seed.
std::map<RelPair, std::size_t> entity_count_oracle(const KnowledgeGraph& kg1, const KnowledgeGraph& kg2, const Matrix& emb1,
                                                   const Matrix& emb2, const PairList& seeds, double sim_th) {
    struct Edge {
        std::size_t rel, nbr;
        bool out;
    };
    auto edges = [](const KnowledgeGraph& kg, std::size_t e) {
        std::vector<Edge> v;
        for (const Triple& t : kg.triples()) {
            if (t.head == e) v.push_back({t.rel, t.tail, true});
            if (t.tail == e) v.push_back({t.rel, t.head, false});
        }
        return v;
    };
    std::map<RelPair, std::size_t> counts;
    for (const auto& [a, b] : seeds) {
        const auto ea = edges(kg1, a), eb = edges(kg2, b);
        std::set<std::size_t> na, nb;
        for (const auto& e : ea) na.insert(e.nbr);
        for (const auto& e : eb) nb.insert(e.nbr);
        std::vector<std::tuple<double, std::size_t, std::size_t>> pool;
        for (auto x : na)
            for (auto y : nb) {
                const double s = cosine(emb1.row(x), emb2.row(y));
                if (s >= sim_th) pool.emplace_back(-s, x, y);
            }
        std::sort(pool.begin(), pool.end());
        std::set<std::size_t> u1, u2;
        for (const auto& [ns, x, y] : pool) {
            if (u1.contains(x) || u2.contains(y)) continue;
            u1.insert(x);
            u2.insert(y);
            for (const auto& e1 : ea)
                for (const auto& e2 : eb)
                    if (e1.nbr == x && e2.nbr == y && e1.out == e2.out) ++counts[{e1.rel, e2.rel}];
        }
    }
    return counts;
}

SoftLabel lbl(LabelKind k, std::size_t r1, std::size_t r2, double s, std::size_t c = 10) {
    SoftLabel l;
    l.kind = k;
    l.r1 = r1;
    l.r2 = r2;
    l.similarity = s;
    l.match_count = c;
    return l;
}

}  // namespace

TEST(EntityMode, DefaultThresholds) {
    const TrainConfig cfg;
    EXPECT_EQ(cfg.sim_e, 0.98);
    EXPECT_EQ(cfg.match_e, 10u);
    EXPECT_EQ(cfg.sim_r, 0.98);
    EXPECT_EQ(cfg.match_r, 600u);
    EXPECT_EQ(cfg.prune_lambda, 0.5);
}

TEST(EntityMode, IsomorphicStarsCountEverySpoke) {
    std::vector<Triple> ts;
    for (std::size_t s = 1; s <= 6; ++s) ts.push_back({0, 0, s});
    const KnowledgeGraph kg1 = make_graph(7, 1, ts), kg2 = make_graph(7, 1, ts);
    const Matrix emb = one_hot(7);
    const auto labels = entity_mode_labels(kg1, kg2, emb, emb, {{0, 0}}, {0.98, 1});
    ASSERT_EQ(labels.size(), 1u);
    EXPECT_EQ(labels[0].match_count, 6u);
    EXPECT_EQ(labels[0].r1, 0u);
    EXPECT_EQ(labels[0].r2, 0u);
    EXPECT_EQ(labels[0].similarity, 1.0);
}

TEST(EntityMode, CraftedTwoSeedCountOfThree) {
    // Seed 0 reaches 1 and 2 through r0; seed 3 reaches 4 through r0 and 5 through r1 (incoming).
    const std::vector<Triple> ts{{0, 0, 1}, {0, 0, 2}, {3, 0, 4}, {5, 1, 3}};
    const KnowledgeGraph kg1 = make_graph(6, 2, ts), kg2 = make_graph(6, 2, ts);
    const Matrix emb = one_hot(6);
    const PairList seeds{{0, 0}, {3, 3}};
    const auto oracle = entity_count_oracle(kg1, kg2, emb, emb, seeds, 0.98);
    EXPECT_EQ(oracle.at({0, 0}), 3u);
    for (std::size_t th = 1; th <= 4; ++th) {
        const auto labels = entity_mode_labels(kg1, kg2, emb, emb, seeds, {0.98, th});
        const bool has = std::any_of(labels.begin(), labels.end(), [](const SoftLabel& l) { return l.r1 == 0 && l.r2 == 0; });
        EXPECT_EQ(has, th <= 3) << th;
        for (const auto& l : labels) EXPECT_EQ(l.match_count, oracle.at({l.r1, l.r2}));
    }
}

TEST(EntityMode, RandomInstancesMatchCountOracle) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 30; ++trial) {
        const auto pair = seg::testing::small_pair(40, 0.1, 100 + trial);
        Matrix emb1 = random_matrix(40, 3, rng, 0.0, 1.0);
        Matrix emb2(40, 3);
        for (const auto& [a, b] : pair.truth.pairs)
            for (std::size_t k = 0; k < 3; ++k) emb2(b, k) = emb1(a, k) + 0.01 * (static_cast<double>(rng() % 3) - 1.0);
        PairList seeds(pair.truth.pairs.begin(), pair.truth.pairs.begin() + 10);
        const auto oracle = entity_count_oracle(pair.kg1, pair.kg2, emb1, emb2, seeds, 0.98);
        const auto labels = entity_mode_labels(pair.kg1, pair.kg2, emb1, emb2, seeds, {0.98, 2});
        std::set<RelPair> got, want;
        for (const auto& l : labels) {
            got.insert({l.r1, l.r2});
            EXPECT_GE(l.similarity, 0.98);
            EXPECT_GE(l.match_count, 2u);
            EXPECT_EQ(l.match_count, oracle.at({l.r1, l.r2}));
        }
        for (const auto& [rp, c] : oracle)
            if (c >= 2) want.insert(rp);
        EXPECT_EQ(got, want) << "trial " << trial;
    }
}

TEST(EntityMode, SeedOrderDoesNotMatter) {
    const auto pair = seg::testing::small_pair(60, 0.0, 5);
    Matrix emb1(60, 60), emb2(60, 60);
    for (const auto& [a, b] : pair.truth.pairs) emb1(a, a) = emb2(b, a) = 1.0;
    PairList seeds(pair.truth.pairs.begin(), pair.truth.pairs.begin() + 20);
    const auto a = entity_mode_labels(pair.kg1, pair.kg2, emb1, emb2, seeds, {0.98, 2});
    std::mt19937_64 rng(1);
    std::shuffle(seeds.begin(), seeds.end(), rng);
    const auto b = entity_mode_labels(pair.kg1, pair.kg2, emb1, emb2, seeds, {0.98, 2});
    EXPECT_EQ(a, b);
    EXPECT_FALSE(a.empty());
}

TEST(EntityMode, NeighborCapLimitsEnumeration) {
    std::vector<Triple> ts;
    for (std::size_t s = 1; s <= 6; ++s) ts.push_back({0, 0, s});
    const KnowledgeGraph kg = make_graph(7, 1, ts);
    const auto labels = entity_mode_labels(kg, kg, one_hot(7), one_hot(7), {{0, 0}}, {0.98, 1}, 4);
    ASSERT_EQ(labels.size(), 1u);
    EXPECT_EQ(labels[0].match_count, 4u);
}

TEST(RelationMode, IdenticalNamesKeptOnlyWhenCountMet) {
    const std::vector<Triple> ts{{0, 0, 1}, {1, 0, 2}, {2, 1, 0}};
    const KnowledgeGraph kg = make_graph(3, 2, ts);
    const TrigramHashEmbedder emb(128);
    const Matrix text = embed_relation_text(emb, kg);
    const CandidateSet cands{{0, 0, 1.0}, {1, 1, 1.0}, {2, 2, 1.0}};
    const auto counts = relation_cooccurrence(kg, kg, cands);
    ASSERT_EQ(counts.at({0, 0}), 3u);
    const auto kept = relation_mode_labels(kg, kg, text, text, cands, {0.98, 3});
    ASSERT_FALSE(kept.empty());
    EXPECT_EQ(kept[0].r1, 0u);
    EXPECT_NEAR(kept[0].similarity, 1.0, 1e-12);
    const auto none = relation_mode_labels(kg, kg, text, text, cands, {0.98, 4});
    EXPECT_TRUE(none.empty());
}

TEST(RelationMode, RenamedSyntheticPairMatchesCountOracle) {
    SyntheticSpec spec;
    spec.n_entities = 80;
    spec.n_relations = 6;
    spec.rename = true;
    spec.edge_perturbation = 0.05;
    spec.rng_seed = 3;
    const SyntheticPair p = generate_synthetic_pair(spec);
    const TrigramHashEmbedder emb(1024);
    const Matrix t1 = embed_relation_text(emb, p.kg1), t2 = embed_relation_text(emb, p.kg2);
    CandidateSet cands;
    for (const auto& [a, b] : p.truth.pairs) cands.push_back({a, b, 1.0});
    constexpr double kSim = 0.6;
    constexpr std::size_t kMatch = 5;

    // Brute force: scan every triple of both graphs per candidate.
    std::map<RelPair, std::size_t> count;
    for (const Candidate& c : cands) {
        std::set<RelPair> seen;
        for (const Triple& x : p.kg1.triples())
            for (const Triple& y : p.kg2.triples()) {
                if (x.head == c.e1 && y.head == c.e2) seen.insert({x.rel, y.rel});
                if (x.tail == c.e1 && y.tail == c.e2) seen.insert({x.rel, y.rel});
            }
        for (const auto& rp : seen) ++count[rp];
    }
    std::vector<std::tuple<double, std::size_t, std::size_t, std::size_t>> pool;
    for (const auto& [rp, n] : count) {
        const double s = cosine(t1.row(rp.first), t2.row(rp.second));
        if (n >= kMatch && s >= kSim) pool.emplace_back(-s, static_cast<std::size_t>(-static_cast<long>(n)), rp.first, rp.second);
    }
    std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) > std::get<1>(b);
        return std::tie(std::get<2>(a), std::get<3>(a)) < std::tie(std::get<2>(b), std::get<3>(b));
    });
    std::set<std::size_t> u1, u2;
    std::set<RelPair> want;
    for (const auto& [ns, nc, r1, r2] : pool) {
        if (u1.contains(r1) || u2.contains(r2)) continue;
        u1.insert(r1);
        u2.insert(r2);
        want.insert({r1, r2});
    }
    const auto kept = relation_mode_labels(p.kg1, p.kg2, t1, t2, cands, {kSim, kMatch});
    std::set<RelPair> got;
    for (const auto& l : kept) {
        got.insert({l.r1, l.r2});
        EXPECT_EQ(l.match_count, count.at({l.r1, l.r2}));
    }
    EXPECT_EQ(got, want);
    // Renamed relations still pair with their own originals.
    for (const auto& [r1, r2] : got) EXPECT_EQ(p.kg2.relation_name(r2), p.kg1.relation_name(r1) + kRenameSuffix);
    EXPECT_EQ(got.size(), spec.n_relations);
}

TEST(RelationMode, TextRowMismatchIsRejected) {
    const KnowledgeGraph kg = make_graph(2, 2, {{0, 0, 1}});
    EXPECT_THROW(relation_mode_labels(kg, kg, Matrix(1, 4), Matrix(2, 4), {}, {}), DimensionError);
}

TEST(Fuse, DisjointSetsUnion) {
    const auto s = fuse({lbl(LabelKind::entity_mode, 0, 0, 0.99)}, {lbl(LabelKind::relation_mode, 1, 1, 0.99)});
    EXPECT_EQ(s.map, (std::map<std::size_t, std::size_t>{{0, 0}, {1, 1}}));
    EXPECT_EQ(s.labels.size(), 2u);
}

TEST(Fuse, RelationModeWinsConflict) {
    const auto s = fuse({lbl(LabelKind::entity_mode, 0, 5, 1.0)}, {lbl(LabelKind::relation_mode, 0, 6, 0.98)});
    EXPECT_EQ(s.map.at(0), 6u);
    ASSERT_EQ(s.labels.size(), 1u);
    EXPECT_EQ(s.labels[0].kind, LabelKind::relation_mode);
}

TEST(Fuse, ConflictWebMatchesHandResolution) {
    const std::vector<SoftLabel> ent{lbl(LabelKind::entity_mode, 1, 11, 0.995), lbl(LabelKind::entity_mode, 2, 10, 0.99),
                                     lbl(LabelKind::entity_mode, 3, 12, 0.985)};
    const std::vector<SoftLabel> rel{lbl(LabelKind::relation_mode, 1, 10, 0.99)};
    std::vector<SoftLabel> ent2 = ent;
    ent2.push_back(lbl(LabelKind::entity_mode, 3, 13, 0.99));
    // r1=1 and r2=10 are claimed by the relation-mode label; for r1=3 the 0.99 entry beats 0.985.
    const auto s = fuse(ent2, rel);
    EXPECT_EQ(s.map, (std::map<std::size_t, std::size_t>{{1, 10}, {3, 13}}));
}

TEST(Fuse, IdempotentAndOneToOne) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<SoftLabel> e, r;
        for (int k = 0; k < 8; ++k) {
            const double s = 0.98 + 0.001 * static_cast<double>(rng() % 20);
            if (rng() % 2)
                e.push_back(lbl(LabelKind::entity_mode, rng() % 5, rng() % 5, s));
            else
                r.push_back(lbl(LabelKind::relation_mode, rng() % 5, rng() % 5, s));
        }
        const SoftLabelSet a = fuse(e, r);
        const auto [e2, r2] = split_by_kind(a);
        const SoftLabelSet b = fuse(e2, r2);
        EXPECT_EQ(a.map, b.map);
        EXPECT_EQ(a.labels, b.labels);
        std::set<std::size_t> targets;
        for (const auto& [k, v] : a.map) EXPECT_TRUE(targets.insert(v).second);
    }
}

TEST(Pruning, EmptySetIsNoOp) {
    const KnowledgeGraph kg = make_graph(3, 2, {{0, 0, 1}, {1, 1, 2}});
    const auto w = pruning_weights(SoftLabelSet{}, kg, kg, 0.0);
    EXPECT_EQ(w.kg1, (std::vector<double>{1.0, 1.0}));
    EXPECT_EQ(w.kg2, (std::vector<double>{1.0, 1.0}));
}

TEST(Pruning, OneMatchedRelationOfTwo) {
    const KnowledgeGraph kg1 = make_graph(4, 2, {{0, 0, 1}, {1, 1, 2}, {2, 0, 3}, {3, 1, 0}});
    const KnowledgeGraph kg2 = make_graph(4, 2, {{0, 1, 1}, {1, 0, 2}, {2, 1, 3}});
    SoftLabelSet s = fuse({}, {lbl(LabelKind::relation_mode, 0, 1, 0.99)});
    const auto w = pruning_weights(s, kg1, kg2, 0.25);
    EXPECT_EQ(w.kg1, (std::vector<double>{1.0, 0.25, 1.0, 0.25}));
    EXPECT_EQ(w.kg2, (std::vector<double>{1.0, 0.25, 1.0}));
}

TEST(Pruning, LambdaZeroRemovesUnmatchedEdgesFromAttention) {
    const KnowledgeGraph kg = make_graph(3, 2, {{0, 0, 1}, {0, 1, 2}});
    const GraphStructure g = build_structure(kg);
    SoftLabelSet s = fuse({}, {lbl(LabelKind::relation_mode, 0, 0, 0.99)});
    const auto w = pruning_weights(s, kg, kg, 0.0);
    const auto mult = slot_multipliers(g, w.kg1);
    EncoderParams p = EncoderParams::make(2, 1, 0, {});
    ForwardTrace trace;
    encode_values(g, Matrix{{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}}, p, false, &mult, &trace);
    for (std::size_t k = g.pattern.row_begin(0); k < g.pattern.row_end(0); ++k)
        EXPECT_EQ(trace.attention[0][k], g.pattern.col_idx[k] == 1 ? 1.0 : 0.0);
}

TEST(Pruning, LambdaOutsideRangeIsRejected) {
    const KnowledgeGraph kg = make_graph(2, 1, {{0, 0, 1}});
    EXPECT_THROW(pruning_weights({}, kg, kg, 1.5), std::invalid_argument);
    EXPECT_THROW(pruning_weights({}, kg, kg, -0.1), std::invalid_argument);
}

TEST(Pruning, LambdaOneIsBitIdenticalToUnpruned) {
    const auto pair = seg::testing::small_pair(50, 0.05, 2);
    const GraphStructure g = build_structure(pair.kg1);
    SoftLabelSet s = fuse({}, {lbl(LabelKind::relation_mode, 0, 0, 0.99)});
    const auto w = pruning_weights(s, pair.kg1, pair.kg2, 1.0);
    const auto mult = slot_multipliers(g, w.kg1);
    std::mt19937_64 rng(3);
    const Matrix x = random_matrix(50, 6, rng);
    EncoderParams p = EncoderParams::make(6, 2, 9, {});
    p.hw_w = random_matrix(6, 6, rng);
    EXPECT_EQ(encode_values(g, x, p, true).data(), encode_values(g, x, p, true, &mult).data());
}

TEST(Audit, OneLinePerLabel) {
    KnowledgeGraph a = make_graph(1, 2, {}), b;
    b.add_entity(0, "x");
    b.add_relation(1000, "p");
    b.add_relation(1001, "q");
    b.build_indexes();
    const auto s = fuse({lbl(LabelKind::entity_mode, 0, 1, 0.99, 12)}, {lbl(LabelKind::relation_mode, 1, 0, 1.0, 700)});
    std::ostringstream os;
    write_soft_label_audit(os, s, a, b);
    EXPECT_EQ(os.str(), "relation\t1\t1000\t1\t700\nentity\t0\t1001\t0.98999999999999999\t12\n");
}
