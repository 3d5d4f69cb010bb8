#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "seg/graph_ops.hpp"
#include "seg/kg.hpp"
#include "seg/tape.hpp"

namespace seg {

// Trainable encoder parameters, shared by both graphs.
struct EncoderParams {
    std::size_t dim = 0;
    double epsilon = 1.0;       // attention temperature
    double leaky_slope = 0.01;  // LeakyReLU slope inside attention scores
    std::vector<Matrix> gates;  // per layer, 1x1 residual gate d^(l)
    std::vector<Matrix> attn;   // per layer, 1 x 2dim
    Matrix rel_attn;            // 1 x dim, scales entity rows in relation representations
    Matrix proj_w;              // dim x dim
    Matrix proj_b;              // 1 x dim
    Matrix hw_w;                // dim x dim, highway gate transform
    Matrix hw_b;                // 1 x dim

    std::size_t layers() const { return gates.size(); }

    struct Init {
        double gate = 1.0;
        double attn_scale = 0.1;
        double highway_bias = 0.0;
    };

    static EncoderParams make(std::size_t dim, std::size_t layers, std::uint64_t rng_seed, Init init) {
        if (dim == 0) throw std::invalid_argument("encoder: dim must be >= 1");
        if (layers == 0) throw std::invalid_argument("encoder: layer count must be >= 1");
        EncoderParams p;
        p.dim = dim;
        std::mt19937_64 rng(rng_seed ^ 0x5eedULL);
        std::uniform_real_distribution<double> u(-init.attn_scale, init.attn_scale);
        for (std::size_t l = 0; l < layers; ++l) {
            p.gates.push_back(Matrix::scalar(init.gate));
            Matrix a(1, 2 * dim);
            for (double& v : a.data()) v = u(rng);
            p.attn.push_back(std::move(a));
        }
        p.rel_attn = Matrix(1, dim, 1.0);
        p.proj_w = Matrix::identity(dim);
        p.proj_b = Matrix(1, dim);
        p.hw_w = Matrix(dim, dim);
        p.hw_b = Matrix(1, dim, init.highway_bias);
        return p;
    }

    void validate() const {
        if (layers() == 0) throw std::invalid_argument("encoder: layer count must be >= 1");
        if (!(epsilon > 0.0)) throw std::invalid_argument("encoder: epsilon must be > 0");
        if (attn.size() != layers()) throw DimensionError("encoder: attention vectors do not match layer count");
        for (const auto& g : gates)
            if (g.rows() != 1 || g.cols() != 1) throw DimensionError("encoder: gate must be 1x1");
        for (const auto& a : attn)
            if (a.rows() != 1 || a.cols() != 2 * dim) throw DimensionError("encoder: attention vector must be 1x2dim");
        if (rel_attn.rows() != 1 || rel_attn.cols() != dim) throw DimensionError("encoder: rel_attn must be 1xdim");
        if (proj_w.rows() != dim || proj_w.cols() != dim) throw DimensionError("encoder: proj_w must be dim x dim");
        if (proj_b.rows() != 1 || proj_b.cols() != dim) throw DimensionError("encoder: proj_b must be 1xdim");
        if (hw_w.rows() != dim || hw_w.cols() != dim) throw DimensionError("encoder: hw_w must be dim x dim");
        if (hw_b.rows() != 1 || hw_b.cols() != dim) throw DimensionError("encoder: hw_b must be 1xdim");
    }

    // Visits every trainable matrix with a stable name.
    template <class F>
    void for_each(F&& f) {
        for (std::size_t l = 0; l < layers(); ++l) f("gate" + std::to_string(l), gates[l]);
        for (std::size_t l = 0; l < layers(); ++l) f("attn" + std::to_string(l), attn[l]);
        f(std::string("rel_attn"), rel_attn);
        f(std::string("proj_w"), proj_w);
        f(std::string("proj_b"), proj_b);
        f(std::string("hw_w"), hw_w);
        f(std::string("hw_b"), hw_b);
    }
    template <class F>
    void for_each(F&& f) const {
        const_cast<EncoderParams*>(this)->for_each([&](const std::string& n, Matrix& m) { f(n, static_cast<const Matrix&>(m)); });
    }
};

// EncoderParams registered as tape leaves.
struct EncoderVars {
    std::vector<Var> gates;
    std::vector<Var> attn;
    Var rel_attn, proj_w, proj_b, hw_w, hw_b;
};

inline EncoderVars register_params(Tape& tape, const EncoderParams& p) {
    p.validate();
    EncoderVars v;
    for (std::size_t l = 0; l < p.layers(); ++l) v.gates.push_back(tape.param(p.gates[l], "gate" + std::to_string(l)));
    for (std::size_t l = 0; l < p.layers(); ++l) v.attn.push_back(tape.param(p.attn[l], "attn" + std::to_string(l)));
    v.rel_attn = tape.param(p.rel_attn, "rel_attn");
    v.proj_w = tape.param(p.proj_w, "proj_w");
    v.proj_b = tape.param(p.proj_b, "proj_b");
    v.hw_w = tape.param(p.hw_w, "hw_w");
    v.hw_b = tape.param(p.hw_b, "hw_b");
    return v;
}

// Precomputed attention structure of one graph. Every triple (h, r, t)
// yields two attention edges, h attending to t and t attending to h, both
// through relation r.
struct GraphStructure {
    std::size_t n_entities = 0;
    std::size_t n_relations = 0;
    SparsePattern pattern;  // center x neighbor
    std::vector<std::size_t> edge_center, edge_nbr, edge_rel, edge_triple, edge_slot;
    Segments heads, tails;  // distinct head / tail entities per relation
    std::vector<std::size_t> empty_relations;

    std::size_t num_edges() const { return edge_center.size(); }
};

inline GraphStructure build_structure(const KnowledgeGraph& kg) {
    GraphStructure g;
    g.n_entities = kg.num_entities();
    g.n_relations = kg.num_relations();
    std::vector<std::pair<std::size_t, std::size_t>> entries;
    entries.reserve(2 * kg.num_triples());
    const auto& ts = kg.triples();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const Triple& t = ts[i];
        for (int dir = 0; dir < 2; ++dir) {
            const std::size_t c = dir == 0 ? t.head : t.tail;
            const std::size_t n = dir == 0 ? t.tail : t.head;
            g.edge_center.push_back(c);
            g.edge_nbr.push_back(n);
            g.edge_rel.push_back(t.rel);
            g.edge_triple.push_back(i);
            entries.emplace_back(c, n);
        }
    }
    auto [pattern, slots] = SparsePattern::from_entries(g.n_entities, g.n_entities, entries);
    g.pattern = std::move(pattern);
    g.edge_slot = std::move(slots);

    std::vector<std::vector<std::size_t>> hs(g.n_relations), tl(g.n_relations);
    for (const Triple& t : ts) {
        hs[t.rel].push_back(t.head);
        tl[t.rel].push_back(t.tail);
    }
    auto to_segments = [](std::vector<std::vector<std::size_t>>& groups) {
        Segments s;
        for (auto& grp : groups) {
            std::sort(grp.begin(), grp.end());
            grp.erase(std::unique(grp.begin(), grp.end()), grp.end());
            s.members.insert(s.members.end(), grp.begin(), grp.end());
            s.offsets.push_back(s.members.size());
        }
        return s;
    };
    g.heads = to_segments(hs);
    g.tails = to_segments(tl);
    for (std::size_t r = 0; r < g.n_relations; ++r)
        if (g.heads.size(r) == 0) g.empty_relations.push_back(r);
    return g;
}

// Per-slot attention multipliers from per-triple multipliers: a neighbor
// pair keeps the largest multiplier among the triples connecting it.
inline std::vector<double> slot_multipliers(const GraphStructure& g, const std::vector<double>& triple_mult) {
    std::vector<double> m(g.pattern.nnz(), 0.0);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const double w = triple_mult.at(g.edge_triple[e]);
        m[g.edge_slot[e]] = std::max(m[g.edge_slot[e]], w);
    }
    return m;
}

// R_t = ReLU([mean over heads of b ⊙ H || mean over tails of b ⊙ H]); width 2dim.
// Relations without triples get a zero row (listed in GraphStructure::empty_relations).
inline Var relation_repr(const GraphStructure& g, const Var& h, const Var& b) {
    Var scaled = mul_row(h, b);
    return relu(concat_cols(segment_mean(scaled, g.heads), segment_mean(scaled, g.tails)));
}

// Raw per-edge term a^T([H_c || H_n] ⊙ R_r), shape edges x 1.
inline Var edge_terms(const GraphStructure& g, const Var& h, const Var& rel, const Var& a) {
    Tape& t = detail::same_tape(h, rel);
    detail::same_tape(h, a);
    const Matrix& hv = h.value();
    const Matrix& rv = rel.value();
    const Matrix& av = a.value();
    const std::size_t d = hv.cols();
    if (rv.cols() != 2 * d || av.cols() != 2 * d || av.rows() != 1)
        throw DimensionError("attention: expected width 2*" + std::to_string(d) + ", got relations " + rv.shape() +
                             " and attention vector " + av.shape());
    Matrix out(g.num_edges(), 1);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        auto hc = hv.row(g.edge_center[e]);
        auto hn = hv.row(g.edge_nbr[e]);
        auto r = rv.row(g.edge_rel[e]);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += av[k] * hc[k] * r[k] + av[d + k] * hn[k] * r[d + k];
        out[e] = s;
    }
    return t.record(std::move(out), {h, rel, a}, [&g](Tape& tp, std::size_t self) {
        const std::size_t ih = tp.input(self, 0), ir = tp.input(self, 1), ia = tp.input(self, 2);
        const Matrix& hv = tp.value(ih);
        const Matrix& rv = tp.value(ir);
        const Matrix& av = tp.value(ia);
        const Matrix& go = tp.grad_out(self);
        Matrix* gh = tp.grad_of(ih);
        Matrix* gr = tp.grad_of(ir);
        Matrix* ga = tp.grad_of(ia);
        const std::size_t d = hv.cols();
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            const double ge = go[e];
            if (ge == 0.0) continue;
            const std::size_t c = g.edge_center[e], n = g.edge_nbr[e], r = g.edge_rel[e];
            for (std::size_t k = 0; k < d; ++k) {
                const double hck = hv(c, k), hnk = hv(n, k), r1 = rv(r, k), r2 = rv(r, d + k);
                if (gh) {
                    (*gh)(c, k) += ge * av[k] * r1;
                    (*gh)(n, k) += ge * av[d + k] * r2;
                }
                if (gr) {
                    (*gr)(r, k) += ge * av[k] * hck;
                    (*gr)(r, d + k) += ge * av[d + k] * hnk;
                }
                if (ga) {
                    (*ga)[k] += ge * hck * r1;
                    (*ga)[d + k] += ge * hnk * r2;
                }
            }
        }
    });
}

// S_ij: LeakyReLU of each edge term, summed over all relations linking i and j.
// One value per pattern slot (nnz x 1); absent pairs are simply not in the pattern.
inline Var attention_scores(const GraphStructure& g, const Var& h, const Var& rel, const Var& a, double slope) {
    return segment_sum(leaky_relu(edge_terms(g, h, rel, a), slope), g.edge_slot, g.pattern.nnz());
}

struct ForwardTrace {
    std::vector<Matrix> attention;  // per layer, nnz x 1
};

// Residual relation-aware GAT layers followed by the output projection:
//   H^(l+1) = H^(l) + d^(l) * ReLU(sum_j a_ij H_j^(l)),  out = H^(L) W + b.
// `slot_mult` (from slot_multipliers) rescales attention before normalization.
inline Var gat_forward(const GraphStructure& g, const Var& init, const EncoderVars& vars, const EncoderParams& cfg,
                       const std::vector<double>* slot_mult = nullptr, ForwardTrace* trace = nullptr) {
    if (init.value().rows() != g.n_entities)
        throw DimensionError("gat_forward: embedding rows " + std::to_string(init.value().rows()) +
                             " != entities " + std::to_string(g.n_entities));
    Var h = init;
    for (std::size_t l = 0; l < vars.gates.size(); ++l) {
        Var rel = relation_repr(g, h, vars.rel_attn);
        Var scores = attention_scores(g, h, rel, vars.attn[l], cfg.leaky_slope);
        Var alpha = rowwise_softmax_scaled(scores, cfg.epsilon, g.pattern, slot_mult);
        if (trace) trace->attention.push_back(alpha.value());
        h = add(h, scalar_mul(vars.gates[l], relu(spmm(g.pattern, alpha, h))));
    }
    return add_row(matmul(h, vars.proj_w), vars.proj_b);
}

// T = sigmoid(X W_h + b_h); out = T ⊙ neighborhood + (1 - T) ⊙ X.
inline Var highway_combine(const Var& name_features, const Var& neighborhood, const Var& w, const Var& b) {
    require_same_shape(name_features.value(), neighborhood.value(), "highway_combine");
    Var gate = sigmoid(add_row(matmul(name_features, w), b));
    return add(mul(gate, neighborhood), mul(one_minus(gate), name_features));
}

// Full entity encoder: GAT stack, then highway blend with the input features.
inline Var encode(const GraphStructure& g, const Var& init, const EncoderVars& vars, const EncoderParams& cfg,
                  bool use_highway, const std::vector<double>* slot_mult = nullptr, ForwardTrace* trace = nullptr) {
    Var out = gat_forward(g, init, vars, cfg, slot_mult, trace);
    return use_highway ? highway_combine(init, out, vars.hw_w, vars.hw_b) : out;
}

// Tape-free convenience: encoded rows for fixed parameters.
inline Matrix encode_values(const GraphStructure& g, const Matrix& init, const EncoderParams& params, bool use_highway,
                            const std::vector<double>* slot_mult = nullptr, ForwardTrace* trace = nullptr) {
    Tape tape;
    EncoderVars vars = register_params(tape, params);
    Var x = tape.constant(init);
    return encode(g, x, vars, params, use_highway, slot_mult, trace).value();
}

}  // namespace seg
