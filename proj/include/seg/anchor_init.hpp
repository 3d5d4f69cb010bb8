#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "seg/kg.hpp"
#include "seg/matrix.hpp"

namespace seg {

struct AnchorInitConfig {
    double restart = 0.15;
    std::size_t iterations = 30;
    std::uint64_t rng_seed = 0;
};

// Random-walk-with-restart proximity of every entity to each anchor, over the
// undirected multigraph. Result is |entities| x |anchors|.
inline Matrix anchor_proximity(const KnowledgeGraph& kg, const std::vector<std::size_t>& anchors, double restart,
                               std::size_t iterations) {
    const std::size_t n = kg.num_entities();
    std::vector<std::vector<std::size_t>> adj(n);
    for (const Triple& t : kg.triples()) {
        if (t.head == t.tail) continue;
        adj[t.head].push_back(t.tail);
        adj[t.tail].push_back(t.head);
    }
    Matrix out(n, anchors.size());
    std::vector<double> p(n), next(n);
    for (std::size_t k = 0; k < anchors.size(); ++k) {
        std::fill(p.begin(), p.end(), 0.0);
        p[anchors[k]] = 1.0;
        for (std::size_t it = 0; it < iterations; ++it) {
            std::fill(next.begin(), next.end(), 0.0);
            next[anchors[k]] = restart;
            for (std::size_t x = 0; x < n; ++x) {
                if (p[x] == 0.0) continue;
                if (adj[x].empty()) {
                    next[x] += (1.0 - restart) * p[x];
                    continue;
                }
                const double share = (1.0 - restart) * p[x] / static_cast<double>(adj[x].size());
                for (std::size_t y : adj[x]) next[y] += share;
            }
            p.swap(next);
        }
        for (std::size_t x = 0; x < n; ++x) out(x, k) = p[x];
    }
    return out;
}

// Seed-anchored input features for both graphs. Seed pair k anchors column k
// on each side; log-proximities are centred per row, projected through one
// shared Gaussian matrix and scaled to unit row norm.
inline std::pair<Matrix, Matrix> anchor_features(const KnowledgeGraph& kg1, const KnowledgeGraph& kg2, const PairList& seeds,
                                                 std::size_t dim, const AnchorInitConfig& cfg = {}) {
    std::vector<std::size_t> a1, a2;
    for (const auto& [u, v] : seeds) {
        a1.push_back(u);
        a2.push_back(v);
    }
    std::mt19937_64 rng(cfg.rng_seed ^ 0xa7c401ULL);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix proj(seeds.size(), dim);
    for (double& v : proj.data()) v = g(rng);
    auto embed = [&](const KnowledgeGraph& kg, const std::vector<std::size_t>& anchors) {
        Matrix p = anchor_proximity(kg, anchors, cfg.restart, cfg.iterations);
        for (std::size_t i = 0; i < p.rows(); ++i) {
            auto row = p.row(i);
            double mean = 0.0;
            for (double& v : row) {
                v = std::log(v + 1e-6);
                mean += v;
            }
            mean /= static_cast<double>(row.size());
            for (double& v : row) v -= mean;
        }
        Matrix x = matmul(p, proj);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double n = l2_norm(x.row(i));
            if (n == 0.0) continue;
            for (double& v : x.row(i)) v /= n;
        }
        return x;
    };
    return {embed(kg1, a1), embed(kg2, a2)};
}

}  // namespace seg
