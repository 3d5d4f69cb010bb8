#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "seg/kg.hpp"

namespace seg {

struct SyntheticSpec {
    std::size_t n_entities = 200;
    std::size_t n_relations = 20;
    double avg_degree = 6.0;
    double edge_perturbation = 0.05;
    bool rename = false;
    std::uint64_t rng_seed = 7;
};

struct SyntheticPair {
    KnowledgeGraph kg1;
    KnowledgeGraph kg2;
    SeedAlignment truth;
    std::size_t dropped = 0;
    std::size_t rewired = 0;
};

inline constexpr const char* kRenameSuffix = "_alt";

namespace detail {

inline std::size_t draw(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }
inline double draw_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[draw(rng, i)]);
    return v;
}

}  // namespace detail

// Random KG1 with n*avg_degree/2 distinct triples, plus an isomorphic KG2 under
// fresh entity and relation ids in which each triple is independently
// perturbed with probability edge_perturbation (half dropped, half rewired to
// a random tail).
inline SyntheticPair generate_synthetic_pair(const SyntheticSpec& spec) {
    const std::size_t n = spec.n_entities;
    if (n < 4) throw std::invalid_argument("synthetic: n_entities must be >= 4");
    if (spec.n_relations < 1) throw std::invalid_argument("synthetic: n_relations must be >= 1");
    if (!(spec.avg_degree > 0.0)) throw std::invalid_argument("synthetic: avg_degree must be > 0");
    if (!(spec.edge_perturbation >= 0.0 && spec.edge_perturbation <= 0.5))
        throw std::invalid_argument("synthetic: edge_perturbation must be in [0, 0.5]");
    const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.avg_degree / 2.0)));
    if (m > n * (n - 1) * spec.n_relations / 2)
        throw std::invalid_argument("synthetic: avg_degree too high for the entity/relation counts");

    std::mt19937_64 rng(spec.rng_seed);
    SyntheticPair out;
    for (std::size_t i = 0; i < n; ++i) out.kg1.add_entity(i, "kg1/entity_" + std::to_string(i));
    for (std::size_t r = 0; r < spec.n_relations; ++r) out.kg1.add_relation(r, "relation_" + std::to_string(r));

    std::set<Triple> seen;
    std::vector<Triple> triples;
    while (triples.size() < m) {
        Triple t{detail::draw(rng, n), detail::draw(rng, spec.n_relations), detail::draw(rng, n)};
        if (t.head == t.tail || !seen.insert(t).second) continue;
        triples.push_back(t);
    }
    for (const Triple& t : triples) out.kg1.add_triple(t.head, t.rel, t.tail);
    out.kg1.build_indexes();

    // KG2 ids: entities n + perm[i], relations 1000 + rperm[r].
    const auto perm = detail::shuffled(n, rng);
    const auto rperm = detail::shuffled(spec.n_relations, rng);
    std::vector<std::size_t> inv(n), rinv(spec.n_relations);
    for (std::size_t i = 0; i < n; ++i) inv[perm[i]] = i;
    for (std::size_t r = 0; r < spec.n_relations; ++r) rinv[rperm[r]] = r;
    for (std::size_t k = 0; k < n; ++k) out.kg2.add_entity(n + k, "kg2/entity_" + std::to_string(n + k));
    for (std::size_t k = 0; k < spec.n_relations; ++k) {
        std::string name = out.kg1.relation_name(rinv[k]);
        if (spec.rename) name += kRenameSuffix;
        out.kg2.add_relation(1000 + k, std::move(name));
    }

    // Dense KG2 index of KG1 entity i is perm[i] since KG2 entities were added in id order.
    std::set<Triple> kg2_seen;
    std::vector<Triple> kg2_triples;
    for (const Triple& t : triples) {
        Triple mapped{perm[t.head], rperm[t.rel], perm[t.tail]};
        if (spec.edge_perturbation > 0.0 && detail::draw_unit(rng) < spec.edge_perturbation) {
            if (detail::draw_unit(rng) < 0.5) {
                ++out.dropped;
                continue;
            }
            bool placed = false;
            for (int attempt = 0; attempt < 32 && !placed; ++attempt) {
                Triple rw{mapped.head, mapped.rel, detail::draw(rng, n)};
                if (rw.tail == rw.head || rw.tail == mapped.tail || kg2_seen.contains(rw)) continue;
                mapped = rw;
                placed = true;
            }
            if (!placed) {
                ++out.dropped;
                continue;
            }
            ++out.rewired;
        }
        if (!kg2_seen.insert(mapped).second) {
            ++out.dropped;
            continue;
        }
        kg2_triples.push_back(mapped);
    }
    std::sort(kg2_triples.begin(), kg2_triples.end());
    for (const Triple& t : kg2_triples) out.kg2.add_triple(t.head, t.rel, t.tail);
    out.kg2.build_indexes();

    for (std::size_t i = 0; i < n; ++i) out.truth.pairs.emplace_back(i, perm[i]);
    return out;
}

inline nlohmann::json synthetic_manifest(const SyntheticSpec& spec, const SyntheticPair& pair) {
    auto counts = [](const KnowledgeGraph& g) {
        return nlohmann::json{{"entities", g.num_entities()}, {"relations", g.num_relations()}, {"triples", g.num_triples()}};
    };
    return nlohmann::json{{"generator",
                           {{"n_entities", spec.n_entities},
                            {"n_relations", spec.n_relations},
                            {"avg_degree", spec.avg_degree},
                            {"edge_perturbation", spec.edge_perturbation},
                            {"rename", spec.rename}}},
                          {"rng_seed", spec.rng_seed},
                          {"kg1", counts(pair.kg1)},
                          {"kg2", counts(pair.kg2)},
                          {"seeds", pair.truth.size()},
                          {"dropped", pair.dropped},
                          {"rewired", pair.rewired}};
}

// Writes kg1/, kg2/, seeds.tsv and manifest.json under dir.
inline void write_synthetic(const SyntheticSpec& spec, const SyntheticPair& pair, const std::filesystem::path& dir) {
    write_kg_dir(pair.kg1, dir / "kg1");
    write_kg_dir(pair.kg2, dir / "kg2");
    write_seeds(pair.truth, pair.kg1, pair.kg2, dir / "seeds.tsv");
    std::ofstream m(dir / "manifest.json");
    if (!m) throw DataError("cannot write " + (dir / "manifest.json").string());
    m << synthetic_manifest(spec, pair).dump(2) << '\n';
}

}  // namespace seg
