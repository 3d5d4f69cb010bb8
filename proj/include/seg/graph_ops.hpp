#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "seg/tape.hpp"

namespace seg {

// CSR sparsity pattern. Row i's nonzeros live in [row_ptr[i], row_ptr[i+1]).
struct SparsePattern {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<std::size_t> row_ptr{0};
    std::vector<std::size_t> col_idx;

    std::size_t nnz() const { return col_idx.size(); }
    std::size_t row_begin(std::size_t r) const { return row_ptr[r]; }
    std::size_t row_end(std::size_t r) const { return row_ptr[r + 1]; }
    bool row_empty(std::size_t r) const { return row_ptr[r] == row_ptr[r + 1]; }

    std::vector<std::size_t> empty_rows() const {
        std::vector<std::size_t> out;
        for (std::size_t r = 0; r < n_rows; ++r)
            if (row_empty(r)) out.push_back(r);
        return out;
    }

    // Slot of (r, c) or npos.
    std::size_t find(std::size_t r, std::size_t c) const {
        auto b = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r]);
        auto e = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r + 1]);
        auto it = std::lower_bound(b, e, c);
        return (it != e && *it == c) ? static_cast<std::size_t>(it - col_idx.begin()) : npos;
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    // Builds the pattern from (row, col) entries; duplicates collapse. Returns
    // the pattern and, for every input entry, the slot it landed in.
    static std::pair<SparsePattern, std::vector<std::size_t>> from_entries(
        std::size_t n_rows, std::size_t n_cols, const std::vector<std::pair<std::size_t, std::size_t>>& entries) {
        SparsePattern p;
        p.n_rows = n_rows;
        p.n_cols = n_cols;
        std::vector<std::pair<std::size_t, std::size_t>> sorted = entries;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        p.row_ptr.assign(n_rows + 1, 0);
        p.col_idx.reserve(sorted.size());
        for (const auto& [r, c] : sorted) {
            if (r >= n_rows || c >= n_cols) throw DimensionError("sparse pattern entry out of range");
            ++p.row_ptr[r + 1];
            p.col_idx.push_back(c);
        }
        for (std::size_t r = 0; r < n_rows; ++r) p.row_ptr[r + 1] += p.row_ptr[r];
        std::vector<std::size_t> slots(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) slots[i] = p.find(entries[i].first, entries[i].second);
        return {std::move(p), std::move(slots)};
    }
};

// Groups of row indices, e.g. the distinct head entities of each relation.
struct Segments {
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> members;

    std::size_t count() const { return offsets.size() - 1; }
    std::size_t size(std::size_t g) const { return offsets[g + 1] - offsets[g]; }
};

// Mean of member rows per group; empty groups produce a zero row.
inline Var segment_mean(const Var& x, const Segments& seg) {
    const Matrix& xv = x.value();
    Matrix out(seg.count(), xv.cols());
    for (std::size_t g = 0; g < seg.count(); ++g) {
        const std::size_t n = seg.size(g);
        if (n == 0) continue;
        auto orow = out.row(g);
        for (std::size_t k = seg.offsets[g]; k < seg.offsets[g + 1]; ++k) {
            auto xr = xv.row(seg.members[k]);
            for (std::size_t j = 0; j < xv.cols(); ++j) orow[j] += xr[j];
        }
        for (double& v : orow) v /= static_cast<double>(n);
    }
    return x.tape->record(std::move(out), {x}, [seg](Tape& tp, std::size_t self) {
        Matrix* g = tp.grad_of(tp.input(self, 0));
        if (!g) return;
        const Matrix& go = tp.grad_out(self);
        for (std::size_t s = 0; s < seg.count(); ++s) {
            const std::size_t n = seg.size(s);
            if (n == 0) continue;
            const double inv = 1.0 / static_cast<double>(n);
            auto gorow = go.row(s);
            for (std::size_t k = seg.offsets[s]; k < seg.offsets[s + 1]; ++k) {
                auto grow = g->row(seg.members[k]);
                for (std::size_t j = 0; j < go.cols(); ++j) grow[j] += gorow[j] * inv;
            }
        }
    });
}

// out[target[i]] += x[i] for every row i.
inline Var segment_sum(const Var& x, const std::vector<std::size_t>& target, std::size_t n_out) {
    const Matrix& xv = x.value();
    if (target.size() != xv.rows()) throw DimensionError("segment_sum: target length mismatch");
    Matrix out(n_out, xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        auto orow = out.row(target[i]);
        auto xr = xv.row(i);
        for (std::size_t j = 0; j < xv.cols(); ++j) orow[j] += xr[j];
    }
    return x.tape->record(std::move(out), {x}, [target](Tape& tp, std::size_t self) {
        Matrix* g = tp.grad_of(tp.input(self, 0));
        if (!g) return;
        const Matrix& go = tp.grad_out(self);
        for (std::size_t i = 0; i < target.size(); ++i) {
            auto grow = g->row(i);
            auto gorow = go.row(target[i]);
            for (std::size_t j = 0; j < go.cols(); ++j) grow[j] += gorow[j];
        }
    });
}

// Softmax of epsilon-scaled scores over each row of a sparse pattern.
// `scores` holds one value per nonzero (nnz x 1). Optional per-slot
// multipliers m give weights m_k exp(eps s_k) / sum(m exp(eps s)); a slot with
// m = 0 is excluded. Rows with no live entry come out all-zero; see
// SparsePattern::empty_rows() for the isolated-row flag.
inline Var rowwise_softmax_scaled(const Var& scores, double epsilon, const SparsePattern& pattern,
                                  const std::vector<double>* multipliers = nullptr) {
    const Matrix& sv = scores.value();
    if (sv.rows() != pattern.nnz() || sv.cols() != 1)
        throw DimensionError("rowwise_softmax_scaled: scores " + sv.shape() + " vs pattern nnz " +
                             std::to_string(pattern.nnz()));
    if (multipliers && multipliers->size() != pattern.nnz())
        throw DimensionError("rowwise_softmax_scaled: multiplier length mismatch");
    Matrix out(sv.rows(), 1);
    for (std::size_t r = 0; r < pattern.n_rows; ++r) {
        const std::size_t b = pattern.row_begin(r);
        const std::size_t e = pattern.row_end(r);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = b; k < e; ++k) {
            if (multipliers && (*multipliers)[k] <= 0.0) continue;
            mx = std::max(mx, epsilon * sv[k]);
        }
        if (!std::isfinite(mx)) continue;
        double z = 0.0;
        for (std::size_t k = b; k < e; ++k) {
            const double m = multipliers ? (*multipliers)[k] : 1.0;
            if (m <= 0.0) continue;
            out[k] = m * std::exp(epsilon * sv[k] - mx);
            z += out[k];
        }
        for (std::size_t k = b; k < e; ++k) out[k] /= z;
    }
    return scores.tape->record(std::move(out), {scores}, [epsilon, pattern](Tape& tp, std::size_t self) {
        Matrix* g = tp.grad_of(tp.input(self, 0));
        if (!g) return;
        const Matrix& y = tp.value(self);
        const Matrix& go = tp.grad_out(self);
        for (std::size_t r = 0; r < pattern.n_rows; ++r) {
            const std::size_t b = pattern.row_begin(r);
            const std::size_t e = pattern.row_end(r);
            double inner = 0.0;
            for (std::size_t k = b; k < e; ++k) inner += y[k] * go[k];
            for (std::size_t k = b; k < e; ++k) (*g)[k] += epsilon * y[k] * (go[k] - inner);
        }
    });
}

// out_i = sum over row i's nonzeros k of w_k * x[col_k].
inline Var spmm(const SparsePattern& pattern, const Var& weights, const Var& x) {
    Tape& t = detail::same_tape(weights, x);
    const Matrix& wv = weights.value();
    const Matrix& xv = x.value();
    if (wv.rows() != pattern.nnz() || wv.cols() != 1)
        throw DimensionError("spmm: weights " + wv.shape() + " vs pattern nnz " + std::to_string(pattern.nnz()));
    if (xv.rows() != pattern.n_cols)
        throw DimensionError("spmm: operand " + xv.shape() + " vs pattern cols " + std::to_string(pattern.n_cols));
    Matrix out(pattern.n_rows, xv.cols());
    for (std::size_t r = 0; r < pattern.n_rows; ++r) {
        auto orow = out.row(r);
        for (std::size_t k = pattern.row_begin(r); k < pattern.row_end(r); ++k) {
            const double w = wv[k];
            if (w == 0.0) continue;
            auto xr = xv.row(pattern.col_idx[k]);
            for (std::size_t j = 0; j < xv.cols(); ++j) orow[j] += w * xr[j];
        }
    }
    return t.record(std::move(out), {weights, x}, [pattern](Tape& tp, std::size_t self) {
        const Matrix& go = tp.grad_out(self);
        const std::size_t iw = tp.input(self, 0);
        const std::size_t ix = tp.input(self, 1);
        const Matrix& wv = tp.value(iw);
        const Matrix& xv = tp.value(ix);
        Matrix* gw = tp.grad_of(iw);
        Matrix* gx = tp.grad_of(ix);
        for (std::size_t r = 0; r < pattern.n_rows; ++r) {
            auto gorow = go.row(r);
            for (std::size_t k = pattern.row_begin(r); k < pattern.row_end(r); ++k) {
                const std::size_t c = pattern.col_idx[k];
                if (gw) (*gw)[k] += dot(gorow, xv.row(c));
                if (gx) {
                    auto grow = gx->row(c);
                    for (std::size_t j = 0; j < go.cols(); ++j) grow[j] += wv[k] * gorow[j];
                }
            }
        }
    });
}

}  // namespace seg
