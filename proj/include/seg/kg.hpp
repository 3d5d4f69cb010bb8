#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace seg {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Triple {
    std::size_t head = 0;
    std::size_t rel = 0;
    std::size_t tail = 0;
    friend bool operator==(const Triple&, const Triple&) = default;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Neighbor {
    std::size_t rel = 0;
    std::size_t entity = 0;
};

// One knowledge graph. Entities and relations keep their file ids; everything
// else (triples, indexes, embedding rows) uses dense 0-based indices.
class KnowledgeGraph {
public:
    std::size_t add_entity(std::uint64_t id, std::string name) {
        if (entity_index_.contains(id)) throw DataError("duplicate entity id " + std::to_string(id));
        entity_index_.emplace(id, entity_ids_.size());
        entity_ids_.push_back(id);
        entity_names_.push_back(std::move(name));
        return entity_ids_.size() - 1;
    }

    std::size_t add_relation(std::uint64_t id, std::string name) {
        if (relation_index_.contains(id)) throw DataError("duplicate relation id " + std::to_string(id));
        relation_index_.emplace(id, relation_ids_.size());
        relation_ids_.push_back(id);
        relation_names_.push_back(std::move(name));
        return relation_ids_.size() - 1;
    }

    // Dense-index triple; indexes are rebuilt lazily by build_indexes().
    void add_triple(std::size_t head, std::size_t rel, std::size_t tail) {
        if (head >= num_entities() || tail >= num_entities() || rel >= num_relations())
            throw DataError("triple references an unknown index");
        triples_.push_back({head, rel, tail});
    }

    void build_indexes() {
        out_index_.assign(num_entities(), {});
        in_index_.assign(num_entities(), {});
        for (const Triple& t : triples_) {
            out_index_[t.head].push_back({t.rel, t.tail});
            in_index_[t.tail].push_back({t.rel, t.head});
        }
    }

    std::size_t num_entities() const { return entity_ids_.size(); }
    std::size_t num_relations() const { return relation_ids_.size(); }
    std::size_t num_triples() const { return triples_.size(); }

    const std::vector<Triple>& triples() const { return triples_; }
    const std::vector<std::vector<Neighbor>>& out_index() const { return out_index_; }
    const std::vector<std::vector<Neighbor>>& in_index() const { return in_index_; }

    std::uint64_t entity_id(std::size_t idx) const { return entity_ids_.at(idx); }
    std::uint64_t relation_id(std::size_t idx) const { return relation_ids_.at(idx); }
    const std::string& entity_name(std::size_t idx) const { return entity_names_.at(idx); }
    const std::string& relation_name(std::size_t idx) const { return relation_names_.at(idx); }

    std::size_t entity_index(std::uint64_t id) const {
        auto it = entity_index_.find(id);
        if (it == entity_index_.end()) throw DataError("unknown entity id " + std::to_string(id));
        return it->second;
    }
    bool has_entity(std::uint64_t id) const { return entity_index_.contains(id); }
    std::size_t relation_index(std::uint64_t id) const {
        auto it = relation_index_.find(id);
        if (it == relation_index_.end()) throw DataError("unknown relation id " + std::to_string(id));
        return it->second;
    }
    bool has_relation(std::uint64_t id) const { return relation_index_.contains(id); }

    // Text used for relation-semantic matching: whatever follows "#comment:"
    // in the relation name, else the name itself.
    std::string relation_description(std::size_t idx) const {
        const std::string& n = relation_names_.at(idx);
        const auto pos = n.find("#comment:");
        return pos == std::string::npos ? n : n.substr(pos + 9);
    }

    // Equality over id-keyed entity, relation and triple sets.
    friend bool same_graph(const KnowledgeGraph& a, const KnowledgeGraph& b) {
        if (a.num_entities() != b.num_entities() || a.num_relations() != b.num_relations() ||
            a.num_triples() != b.num_triples())
            return false;
        for (std::size_t i = 0; i < a.num_entities(); ++i) {
            if (!b.has_entity(a.entity_id(i))) return false;
            if (b.entity_name(b.entity_index(a.entity_id(i))) != a.entity_name(i)) return false;
        }
        for (std::size_t i = 0; i < a.num_relations(); ++i) {
            if (!b.has_relation(a.relation_id(i))) return false;
            if (b.relation_name(b.relation_index(a.relation_id(i))) != a.relation_name(i)) return false;
        }
        auto keyed = [](const KnowledgeGraph& g) {
            std::vector<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>> v;
            for (const Triple& t : g.triples())
                v.emplace_back(g.entity_id(t.head), g.relation_id(t.rel), g.entity_id(t.tail));
            std::sort(v.begin(), v.end());
            return v;
        };
        return keyed(a) == keyed(b);
    }

private:
    std::vector<std::uint64_t> entity_ids_;
    std::vector<std::string> entity_names_;
    std::unordered_map<std::uint64_t, std::size_t> entity_index_;
    std::vector<std::uint64_t> relation_ids_;
    std::vector<std::string> relation_names_;
    std::unordered_map<std::uint64_t, std::size_t> relation_index_;
    std::vector<Triple> triples_;
    std::vector<std::vector<Neighbor>> out_index_;
    std::vector<std::vector<Neighbor>> in_index_;
};

using PairList = std::vector<std::pair<std::size_t, std::size_t>>;

enum class SeedOrigin { gold, pseudo };

// Aligned entity pairs as dense indices (KG1 index, KG2 index).
struct SeedAlignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    SeedOrigin origin = SeedOrigin::gold;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }

    bool is_one_to_one() const {
        std::unordered_set<std::size_t> a, b;
        for (const auto& [u, v] : pairs)
            if (!a.insert(u).second || !b.insert(v).second) return false;
        return true;
    }
};

struct DatasetSplit {
    std::vector<std::pair<std::size_t, std::size_t>> train;
    std::vector<std::pair<std::size_t, std::size_t>> validation;
    std::vector<std::pair<std::size_t, std::size_t>> test;
    std::size_t fold = 0;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::uint64_t parse_uint(const std::string& s, const std::filesystem::path& file, std::size_t line_no) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw DataError(file.string() + ":" + std::to_string(line_no) + ": expected unsigned integer, got '" + s + "'");
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw DataError(file.string() + ":" + std::to_string(line_no) + ": integer out of range '" + s + "'");
    }
}

// Calls fn(fields, line_no) for every data line; blank and '#' lines skipped.
template <class Fn>
void for_each_record(const std::filesystem::path& file, Fn fn) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        fn(split_tabs(line), line_no);
    }
}

inline std::vector<std::pair<std::uint64_t, std::string>> read_id_names(const std::filesystem::path& file) {
    std::vector<std::pair<std::uint64_t, std::string>> out;
    for_each_record(file, [&](const std::vector<std::string>& f, std::size_t ln) {
        if (f.size() != 2)
            throw DataError(file.string() + ":" + std::to_string(ln) + ": expected '<id>\\t<name>', got " +
                            std::to_string(f.size()) + " field(s)");
        out.emplace_back(parse_uint(f[0], file, ln), f[1]);
    });
    return out;
}

}  // namespace detail

// Parses a DBP15K-style graph: entity lines "<id>\t<name>", triple lines
// "<head>\t<rel>\t<tail>", optional relation lines "<id>\t<name>". Without a
// relation file relations are named rel_<id> in order of first appearance.
inline KnowledgeGraph parse_kg(const std::filesystem::path& entity_file, const std::filesystem::path& triple_file,
                               const std::filesystem::path& relation_file = {}) {
    KnowledgeGraph kg;
    for (auto& [id, name] : detail::read_id_names(entity_file)) kg.add_entity(id, std::move(name));
    const bool have_rel_file = !relation_file.empty();
    if (have_rel_file)
        for (auto& [id, name] : detail::read_id_names(relation_file)) kg.add_relation(id, std::move(name));

    struct Raw {
        std::uint64_t h, r, t;
        std::size_t line;
    };
    std::vector<Raw> raw;
    detail::for_each_record(triple_file, [&](const std::vector<std::string>& f, std::size_t ln) {
        if (f.size() != 3)
            throw DataError(triple_file.string() + ":" + std::to_string(ln) +
                            ": expected '<head>\\t<relation>\\t<tail>', got " + std::to_string(f.size()) +
                            " field(s)");
        raw.push_back({detail::parse_uint(f[0], triple_file, ln), detail::parse_uint(f[1], triple_file, ln),
                       detail::parse_uint(f[2], triple_file, ln), ln});
    });
    for (const Raw& t : raw) {
        for (std::uint64_t e : {t.h, t.t})
            if (!kg.has_entity(e))
                throw DataError(triple_file.string() + ":" + std::to_string(t.line) + ": dangling entity id " +
                                std::to_string(e));
        if (!kg.has_relation(t.r)) {
            if (have_rel_file)
                throw DataError(triple_file.string() + ":" + std::to_string(t.line) + ": dangling relation id " +
                                std::to_string(t.r));
            kg.add_relation(t.r, "rel_" + std::to_string(t.r));
        }
        kg.add_triple(kg.entity_index(t.h), kg.relation_index(t.r), kg.entity_index(t.t));
    }
    kg.build_indexes();
    return kg;
}

// Directory layout: ent_ids, triples, optional rel_ids.
inline KnowledgeGraph load_kg_dir(const std::filesystem::path& dir) {
    const auto rel = dir / "rel_ids";
    return parse_kg(dir / "ent_ids", dir / "triples", std::filesystem::exists(rel) ? rel : std::filesystem::path{});
}

inline void write_kg_dir(const KnowledgeGraph& kg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream ent(dir / "ent_ids"), rel(dir / "rel_ids"), tri(dir / "triples");
    if (!ent || !rel || !tri) throw DataError("cannot write graph files under " + dir.string());
    for (std::size_t i = 0; i < kg.num_entities(); ++i) ent << kg.entity_id(i) << '\t' << kg.entity_name(i) << '\n';
    for (std::size_t i = 0; i < kg.num_relations(); ++i)
        rel << kg.relation_id(i) << '\t' << kg.relation_name(i) << '\n';
    for (const Triple& t : kg.triples())
        tri << kg.entity_id(t.head) << '\t' << kg.relation_id(t.rel) << '\t' << kg.entity_id(t.tail) << '\n';
}

// Seed file lines "<kg1 id>\t<kg2 id>", mapped to dense indices.
inline SeedAlignment parse_seeds(const std::filesystem::path& file, const KnowledgeGraph& kg1,
                                 const KnowledgeGraph& kg2) {
    SeedAlignment s;
    detail::for_each_record(file, [&](const std::vector<std::string>& f, std::size_t ln) {
        if (f.size() != 2)
            throw DataError(file.string() + ":" + std::to_string(ln) + ": expected '<kg1 id>\\t<kg2 id>'");
        const auto a = detail::parse_uint(f[0], file, ln);
        const auto b = detail::parse_uint(f[1], file, ln);
        if (!kg1.has_entity(a))
            throw DataError(file.string() + ":" + std::to_string(ln) + ": dangling KG1 entity id " + std::to_string(a));
        if (!kg2.has_entity(b))
            throw DataError(file.string() + ":" + std::to_string(ln) + ": dangling KG2 entity id " + std::to_string(b));
        s.pairs.emplace_back(kg1.entity_index(a), kg2.entity_index(b));
    });
    if (!s.is_one_to_one()) throw DataError(file.string() + ": seed alignment is not one-to-one");
    return s;
}

inline void write_seeds(const SeedAlignment& s, const KnowledgeGraph& kg1, const KnowledgeGraph& kg2,
                        const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    for (const auto& [u, v] : s.pairs) out << kg1.entity_id(u) << '\t' << kg2.entity_id(v) << '\n';
}

struct SplitRatios {
    double train = 0.2;
    double validation = 0.1;
    double test = 0.7;
};

// Shuffles the gold seeds once with rng_seed, rotates by fold * n / folds and
// cuts train/validation/test in that order. With train = 1/folds the train
// sets of different folds are disjoint.
inline DatasetSplit split_seeds(const SeedAlignment& seeds, SplitRatios ratios, std::uint64_t rng_seed,
                                std::size_t fold, std::size_t folds = 5) {
    if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");
    if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0)
        throw std::invalid_argument("split ratios must be non-negative");
    if (folds == 0 || fold >= folds) throw std::invalid_argument("fold index out of range");
    const std::size_t n = seeds.size();
    if (n < folds) throw std::invalid_argument("fewer seeds (" + std::to_string(n) + ") than folds");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(rng_seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    std::rotate(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(fold * n / folds), order.end());

    const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios.validation * static_cast<double>(n))));
    DatasetSplit split;
    split.fold = fold;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = seeds.pairs[order[i]];
        if (i < n_train)
            split.train.push_back(p);
        else if (i < n_train + n_val)
            split.validation.push_back(p);
        else
            split.test.push_back(p);
    }
    return split;
}

}  // namespace seg
