#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "test_util.hpp"

using namespace seg;
using seg::testing::random_matrix;

namespace {

using PairList = std::vector<std::pair<std::size_t, std::size_t>>;

SimilarityMatrix from_values(const Matrix& v) {
    SimilarityMatrix s;
    s.values = v;
    s.row_ids = detail::all_indices(v.rows());
    s.col_ids = detail::all_indices(v.cols());
    s.index();
    return s;
}

// Repeatedly takes the best remaining compatible pair by scanning all of them.
PairList greedy_oracle(const CandidateSet& cands) {
    PairList out;
    std::set<std::size_t> used1, used2;
    std::vector<bool> taken(cands.size(), false);
    while (true) {
        std::size_t best = cands.size();
        for (std::size_t i = 0; i < cands.size(); ++i) {
            if (taken[i] || used1.contains(cands[i].e1) || used2.contains(cands[i].e2)) continue;
            if (best == cands.size()) {
                best = i;
                continue;
            }
            const Candidate& a = cands[i];
            const Candidate& b = cands[best];
            if (a.sim > b.sim || (a.sim == b.sim && std::pair(a.e1, a.e2) < std::pair(b.e1, b.e2))) best = i;
        }
        if (best == cands.size()) break;
        taken[best] = true;
        used1.insert(cands[best].e1);
        used2.insert(cands[best].e2);
        out.emplace_back(cands[best].e1, cands[best].e2);
    }
    return out;
}

// Ranks every column by a full sort of the row.
Metrics metrics_oracle(const Matrix& v, const PairList& gold, const std::vector<std::size_t>& ks) {
    Metrics m;
    for (auto k : ks) m.hits[k] = 0.0;
    for (const auto& [u, t] : gold) {
        std::vector<std::size_t> order(v.cols());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v(u, a) > v(u, b); });
        const std::size_t rank = std::find(order.begin(), order.end(), t) - order.begin() + 1;
        for (auto& [k, h] : m.hits) h += rank <= k ? 1.0 : 0.0;
        m.mrr += 1.0 / rank;
    }
    for (auto& [k, h] : m.hits) h /= gold.size();
    m.mrr /= gold.size();
    return m;
}

}  // namespace

TEST(Similarity, SelfSimilarityDiagonalIsOne) {
    std::mt19937_64 rng(1);
    const Matrix e = random_matrix(6, 4, rng);
    const SimilarityMatrix s = similarity_matrix(e, e);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(s.values(i, i), 1.0, 1e-15);
}

TEST(Similarity, OrthogonalVectorsScoreZero) {
    const SimilarityMatrix s = similarity_matrix(Matrix{{1.0, 0.0}}, Matrix{{0.0, 3.0}});
    EXPECT_EQ(s.values(0, 0), 0.0);
}

TEST(Similarity, RandomCaseMatchesDotOverNorms) {
    std::mt19937_64 rng(2);
    const Matrix a = random_matrix(3, 5, rng), b = random_matrix(3, 5, rng);
    const SimilarityMatrix s = similarity_matrix(a, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double d = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t k = 0; k < 5; ++k) {
                d += a(i, k) * b(j, k);
                na += a(i, k) * a(i, k);
                nb += b(j, k) * b(j, k);
            }
            EXPECT_NEAR(s.values(i, j), d / std::sqrt(na * nb), 1e-12);
        }
}

TEST(Similarity, ZeroRowsScoreZeroAndAreFlagged) {
    const SimilarityMatrix s = similarity_matrix(Matrix{{0.0, 0.0}, {1.0, 1.0}}, Matrix{{1.0, 2.0}});
    EXPECT_EQ(s.values(0, 0), 0.0);
    EXPECT_EQ(s.zero_rows, (std::vector<std::size_t>{0}));
}

TEST(Similarity, WidthMismatchIsRejected) {
    EXPECT_THROW(similarity_matrix(Matrix(2, 3), Matrix(2, 4)), DimensionError);
}

TEST(Similarity, PositiveScalingLeavesEntriesUnchanged) {
    std::mt19937_64 rng(3);
    const Matrix a = random_matrix(5, 4, rng), b = random_matrix(7, 4, rng);
    Matrix a2 = a, b2 = b;
    for (double& v : a2.data()) v *= 3.75;
    for (double& v : b2.data()) v *= 3.75;
    const SimilarityMatrix s1 = similarity_matrix(a, b), s2 = similarity_matrix(a2, b2);
    for (std::size_t i = 0; i < s1.values.size(); ++i) EXPECT_NEAR(s1.values[i], s2.values[i], 1e-14);
}

TEST(Candidates, DefaultThreshold) {
    EXPECT_EQ(TrainConfig{}.candidate_threshold, 0.95);
}

TEST(Candidates, CraftedMatrixSelectsExactlyThree) {
    const Matrix v{{0.96, 0.10, 0.20, 0.949},
                   {0.30, 0.95, 0.40, 0.00},
                   {0.00, 0.99, 0.50, 0.10},
                   {0.20, 0.30, 0.94, 0.60}};
    const CandidateSet c = candidates(from_values(v), 0.95);
    ASSERT_EQ(c.size(), 3u);
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (const auto& x : c) got.emplace(x.e1, x.e2);
    EXPECT_EQ(got, (std::set<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}, {2, 1}}));
}

TEST(Candidates, ThresholdOneKeepsOnlyIdenticalDirections) {
    const Matrix a{{1.0, 2.0}, {1.0, 0.0}}, b{{2.0, 4.0}, {0.0, 1.0}};
    const CandidateSet c = candidates(similarity_matrix(a, b), 1.0);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0].e1, 0u);
    EXPECT_EQ(c[0].e2, 0u);
}

TEST(Candidates, ThresholdOutsideRangeIsRejected) {
    const SimilarityMatrix s = from_values(Matrix(2, 2));
    EXPECT_THROW(candidates(s, -1.0), std::invalid_argument);
    EXPECT_THROW(candidates(s, 1.01), std::invalid_argument);
    EXPECT_TRUE(candidates(s, 0.5).empty());
}

TEST(Greedy, DisjointPairsAreAllAccepted) {
    const auto m = greedy_one_to_one({{0, 5, 0.96}, {1, 6, 0.97}, {2, 7, 0.99}});
    EXPECT_EQ(m.size(), 3u);
}

TEST(Greedy, OneToManyKeepsBest) {
    const auto m = greedy_one_to_one({{0, 1, 0.98}, {0, 0, 0.99}});
    EXPECT_EQ(m, (PairList{{0, 0}}));
}

TEST(Greedy, SixPairConflictMatchesOracle) {
    const CandidateSet c{{0, 0, 0.99}, {0, 1, 0.98}, {1, 0, 0.985}, {1, 1, 0.97}, {2, 1, 0.98}, {2, 2, 0.96}};
    const auto m = greedy_one_to_one(c);
    EXPECT_EQ(m, greedy_oracle(c));
    EXPECT_EQ(m, (PairList{{0, 0}, {2, 1}}));
}

TEST(Greedy, TiesBreakByLowerIds) {
    const auto m = greedy_one_to_one({{1, 0, 0.97}, {0, 1, 0.97}, {0, 0, 0.97}});
    EXPECT_EQ(m, (PairList{{0, 0}}));
}

TEST(Greedy, RandomInstancesMatchOracleAndStayOneToOne) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        CandidateSet c;
        const std::size_t n = rng() % 15;
        for (std::size_t k = 0; k < n; ++k)
            c.push_back({rng() % 5, rng() % 5, 0.95 + 0.01 * static_cast<double>(rng() % 5)});
        const auto m = greedy_one_to_one(c);
        ASSERT_EQ(m, greedy_oracle(c));
        std::set<std::size_t> l, r, dl, dr;
        for (const auto& x : c) {
            dl.insert(x.e1);
            dr.insert(x.e2);
        }
        for (const auto& [a, b] : m) {
            EXPECT_TRUE(l.insert(a).second);
            EXPECT_TRUE(r.insert(b).second);
        }
        EXPECT_LE(m.size(), std::min(dl.size(), dr.size()));
    }
}

TEST(Evaluate, IdenticalGoldEmbeddingsArePerfect) {
    std::mt19937_64 rng(6);
    const Matrix e = random_matrix(8, 6, rng);
    PairList gold;
    for (std::size_t i = 0; i < 8; ++i) gold.emplace_back(i, i);
    const Metrics m = evaluate(similarity_matrix(e, e), gold);
    EXPECT_EQ(m.hit(1), 1.0);
    EXPECT_EQ(m.mrr, 1.0);
}

TEST(Evaluate, FiveByFiveMatchesExhaustiveRanking) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix v = random_matrix(5, 5, rng);
        if (trial % 2) // coarse values to force ties
            for (double& x : v.data()) x = std::round(x * 2.0) / 2.0;
        PairList gold;
        std::vector<std::size_t> perm{0, 1, 2, 3, 4};
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < 5; ++i) gold.emplace_back(i, perm[i]);
        const Metrics got = evaluate(from_values(v), gold, {1, 2, 5});
        const Metrics want = metrics_oracle(v, gold, {1, 2, 5});
        EXPECT_EQ(got.hits, want.hits);
        EXPECT_DOUBLE_EQ(got.mrr, want.mrr);
    }
}

TEST(Evaluate, GoldOrderDoesNotMatter) {
    std::mt19937_64 rng(8);
    const SimilarityMatrix s = from_values(random_matrix(30, 30, rng));
    PairList gold;
    for (std::size_t i = 0; i < 30; ++i) gold.emplace_back(i, (i * 7) % 30);
    const Metrics a = evaluate(s, gold, {1, 5, 10});
    std::shuffle(gold.begin(), gold.end(), rng);
    const Metrics b = evaluate(s, gold, {1, 5, 10});
    EXPECT_EQ(a.hits, b.hits);
    EXPECT_EQ(a.mrr, b.mrr);
}

TEST(Evaluate, HitsAreMonotoneAndMrrInRange) {
    std::mt19937_64 rng(9);
    const SimilarityMatrix s = from_values(random_matrix(20, 20, rng));
    PairList gold;
    for (std::size_t i = 0; i < 20; ++i) gold.emplace_back(i, 19 - i);
    const Metrics m = evaluate(s, gold, {1, 3, 5, 10, 20});
    double prev = 0.0;
    for (const auto& [k, h] : m.hits) {
        EXPECT_GE(h, prev);
        prev = h;
    }
    EXPECT_EQ(m.hit(20), 1.0);
    EXPECT_GT(m.mrr, 0.0);
    EXPECT_LE(m.mrr, 1.0);
}

TEST(Evaluate, MissingGoldEntityIsNamed) {
    SimilarityMatrix s = similarity_matrix(Matrix{{1.0}, {2.0}, {3.0}}, Matrix{{1.0}}, {0, 1}, {0});
    try {
        evaluate(s, {{2, 0}});
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("entity 2"), std::string::npos) << e.what();
    }
}
