#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "seg/kg.hpp"
#include "seg/matrix.hpp"

namespace seg {

// Maps a relation description to a fixed-width vector. Implementations must
// be deterministic.
class RelationTextEmbedder {
public:
    virtual ~RelationTextEmbedder() = default;
    virtual std::size_t dim() const = 0;
    virtual std::vector<double> embed(std::string_view text) const = 0;
};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Character trigrams of the lowercased text padded with '#' on both sides.
inline std::vector<std::string> char_trigrams(std::string_view text) {
    if (text.empty()) return {};
    std::string padded = "#";
    for (unsigned char c : text) padded.push_back(static_cast<char>(std::tolower(c)));
    padded.push_back('#');
    std::vector<std::string> out;
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) out.push_back(padded.substr(i, 3));
    return out;
}

// Binary bag of hashed character trigrams, L2-normalized.
class TrigramHashEmbedder final : public RelationTextEmbedder {
public:
    explicit TrigramHashEmbedder(std::size_t dim = 512) : dim_(dim) {}

    std::size_t dim() const override { return dim_; }

    std::size_t bucket(std::string_view trigram) const { return static_cast<std::size_t>(fnv1a(trigram) % dim_); }

    std::vector<double> embed(std::string_view text) const override {
        std::vector<double> v(dim_, 0.0);
        for (const auto& g : char_trigrams(text)) v[bucket(g)] = 1.0;
        const double n = l2_norm(v);
        if (n > 0.0)
            for (double& x : v) x /= n;
        return v;
    }

private:
    std::size_t dim_;
};

// One row per relation. Relations whose vector is all zero (empty
// description) are appended to `zero_rows` when given.
inline Matrix embed_relation_text(const RelationTextEmbedder& embedder, const KnowledgeGraph& kg,
                                  std::vector<std::size_t>* zero_rows = nullptr) {
    Matrix out(kg.num_relations(), embedder.dim());
    for (std::size_t r = 0; r < kg.num_relations(); ++r) {
        const auto v = embedder.embed(kg.relation_description(r));
        if (v.size() != embedder.dim()) throw DimensionError("relation embedder returned a vector of the wrong width");
        std::copy(v.begin(), v.end(), out.row(r).begin());
        if (zero_rows && l2_norm(v) == 0.0) zero_rows->push_back(r);
    }
    return out;
}

// Vector files: "<uint id>\t<float>(,<float>)*" per line.
inline std::map<std::uint64_t, std::vector<double>> read_vector_file(const std::filesystem::path& file) {
    std::map<std::uint64_t, std::vector<double>> out;
    std::size_t width = 0;
    detail::for_each_record(file, [&](const std::vector<std::string>& f, std::size_t ln) {
        const auto where = file.string() + ":" + std::to_string(ln);
        if (f.size() != 2) throw DataError(where + ": expected '<id>\\t<floats>'");
        const auto id = detail::parse_uint(f[0], file, ln);
        std::vector<double> v;
        std::stringstream ss(f[1]);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            std::size_t used = 0;
            double x = 0.0;
            try {
                x = std::stod(tok, &used);
            } catch (const std::exception&) {
                throw DataError(where + ": bad float '" + tok + "'");
            }
            if (used != tok.size() || !std::isfinite(x)) throw DataError(where + ": bad float '" + tok + "'");
            v.push_back(x);
        }
        if (v.empty()) throw DataError(where + ": empty vector");
        if (width == 0) width = v.size();
        if (v.size() != width) throw DataError(where + ": vector width " + std::to_string(v.size()) + " != " + std::to_string(width));
        if (!out.emplace(id, std::move(v)).second) throw DataError(where + ": duplicate id " + std::to_string(id));
    });
    return out;
}

inline void write_vector_file(const std::filesystem::path& file, const std::vector<std::uint64_t>& ids, const Matrix& rows) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    out.precision(17);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out << ids[i] << '\t';
        for (std::size_t j = 0; j < rows.cols(); ++j) out << (j ? "," : "") << rows(i, j);
        out << '\n';
    }
}

// Relation vectors computed elsewhere (e.g. by a sentence encoder), keyed by relation id.
inline Matrix load_relation_vectors(const std::filesystem::path& file, const KnowledgeGraph& kg) {
    const auto vecs = read_vector_file(file);
    const std::size_t width = vecs.empty() ? 0 : vecs.begin()->second.size();
    Matrix out(kg.num_relations(), width);
    for (std::size_t r = 0; r < kg.num_relations(); ++r) {
        auto it = vecs.find(kg.relation_id(r));
        if (it == vecs.end())
            throw DataError(file.string() + ": missing vector for relation id " + std::to_string(kg.relation_id(r)));
        std::copy(it->second.begin(), it->second.end(), out.row(r).begin());
    }
    return out;
}

// Initial entity embeddings keyed by entity id.
inline Matrix load_entity_vectors(const std::filesystem::path& file, const KnowledgeGraph& kg) {
    const auto vecs = read_vector_file(file);
    const std::size_t width = vecs.empty() ? 0 : vecs.begin()->second.size();
    Matrix out(kg.num_entities(), width);
    for (std::size_t e = 0; e < kg.num_entities(); ++e) {
        auto it = vecs.find(kg.entity_id(e));
        if (it == vecs.end())
            throw DataError(file.string() + ": missing vector for entity id " + std::to_string(kg.entity_id(e)));
        std::copy(it->second.begin(), it->second.end(), out.row(e).begin());
    }
    return out;
}

}  // namespace seg
