#ifndef LSAE_SAE_HPP
#define LSAE_SAE_HPP

// BatchTopK sparse autoencoder: model, forward pass, loss and analytic
// gradients. Everything is templated on the parameter scalar so the same code
// runs in float for training and in double for gradient checking.

#include "lsae/prng.hpp"
#include "lsae/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace lsae {

template <typename Scalar>
struct SaeModel {
    Index dim_in = 0;     // D
    Index dict_size = 0;  // M
    Index k = 0;
    Scalar theta = 0;

    RowMatrix<Scalar> w_enc;  // M x D
    Vector<Scalar> b_enc;     // M
    RowMatrix<Scalar> w_dec;  // M x D, row j is concept j's direction
    Vector<Scalar> b_dec;     // D

    template <typename Other>
    SaeModel<Other> cast() const {
        SaeModel<Other> out;
        out.dim_in = dim_in;
        out.dict_size = dict_size;
        out.k = k;
        out.theta = static_cast<Other>(theta);
        out.w_enc = w_enc.template cast<Other>();
        out.b_enc = b_enc.template cast<Other>();
        out.w_dec = w_dec.template cast<Other>();
        out.b_dec = b_dec.template cast<Other>();
        return out;
    }
};

template <typename Scalar>
struct Gradients {
    RowMatrix<Scalar> w_enc;
    Vector<Scalar> b_enc;
    RowMatrix<Scalar> w_dec;
    Vector<Scalar> b_dec;
};

template <typename Scalar>
struct SparseBatch {
    RowMatrix<Scalar> codes;           // z
    RowMatrix<Scalar> pre_activations; // z_pre
    BoolMatrix active_mask;
};

struct LossBreakdown {
    double total = 0;
    double mse = 0;
    double reanimation = 0;  // mean(z_pre * I_dead) over all B*M entries
    double lambda = 0;
    BoolVector dead_mask;
};

template <typename Scalar>
void validate(const SaeModel<Scalar>& model) {
    if (model.dim_in <= 0) throw DataError("model dimension must be positive");
    if (model.dict_size <= model.dim_in) throw DataError("dictionary not overcomplete");
    if (model.k <= 0 || model.k > model.dict_size) throw DataError("k must be in [1, M]");
    if (!(model.theta >= 0) || !std::isfinite(static_cast<double>(model.theta)))
        throw DataError("theta must be finite and nonnegative");
    require_shape(model.w_enc.rows() == model.dict_size && model.w_enc.cols() == model.dim_in, "w_enc");
    require_shape(model.w_dec.rows() == model.dict_size && model.w_dec.cols() == model.dim_in, "w_dec");
    require_shape(model.b_enc.size() == model.dict_size, "b_enc");
    require_shape(model.b_dec.size() == model.dim_in, "b_dec");
    if (!model.w_enc.allFinite() || !model.w_dec.allFinite() || !model.b_enc.allFinite() ||
        !model.b_dec.allFinite())
        throw DataError("non-finite model parameter");
}

/// Decoder rows are unit-norm Gaussian directions; the encoder starts as a
/// copy of the decoder; biases and theta start at zero.
template <typename Scalar = float>
SaeModel<Scalar> init_sae(Index dim_in, Index dict_size, Index k, std::uint64_t seed) {
    if (dim_in <= 0) throw DataError("model dimension must be positive");
    if (dict_size <= dim_in) throw DataError("dictionary not overcomplete");
    if (k <= 0 || k > dict_size) throw DataError("k must be in [1, M]");

    SaeModel<Scalar> model;
    model.dim_in = dim_in;
    model.dict_size = dict_size;
    model.k = k;
    model.theta = 0;

    Xoshiro256 rng(seed, 0x1417ull);
    RowMatrix<double> w(dict_size, dim_in);
    for (Index i = 0; i < dict_size; ++i) {
        for (Index j = 0; j < dim_in; ++j) w(i, j) = rng.normal();
        w.row(i) /= w.row(i).norm();
    }
    model.w_dec = w.cast<Scalar>();
    model.w_enc = model.w_dec;
    model.b_enc = Vector<Scalar>::Zero(dict_size);
    model.b_dec = Vector<Scalar>::Zero(dim_in);
    return model;
}

/// z_pre = (X - b_dec) W_enc^T + b_enc
template <typename Scalar, typename Derived>
RowMatrix<Scalar> encode_pre(const SaeModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
    require_shape(x.cols() == model.dim_in, "input columns != D");
    RowMatrix<Scalar> centered = x.template cast<Scalar>();
    centered.rowwise() -= model.b_dec.transpose();
    RowMatrix<Scalar> pre = centered * model.w_enc.transpose();
    pre.rowwise() += model.b_enc.transpose();
    return pre;
}

namespace detail {

struct Candidate {
    double value;
    Index flat;
};

// Larger value first; equal values by lowest flat index.
inline bool ranks_before(const Candidate& a, const Candidate& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.flat < b.flat;
}

// Flat indices of the `keep` best strictly positive entries.
template <typename Scalar>
std::vector<Index> top_positive(const Scalar* values, Index count, Index keep) {
    std::vector<Candidate> pos;
    for (Index i = 0; i < count; ++i)
        if (values[i] > Scalar(0)) pos.push_back({static_cast<double>(values[i]), i});
    if (static_cast<Index>(pos.size()) > keep) {
        std::nth_element(pos.begin(), pos.begin() + keep, pos.end(), ranks_before);
        pos.resize(static_cast<std::size_t>(keep));
    }
    std::vector<Index> flat;
    flat.reserve(pos.size());
    for (const auto& c : pos) flat.push_back(c.flat);
    return flat;
}

inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 8) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

} // namespace detail

/// Keeps the k*B largest strictly positive entries of the whole batch, ties
/// broken by lowest row-major index.
template <typename Derived>
SparseBatch<typename Derived::Scalar> batch_topk(const Eigen::MatrixBase<Derived>& z_pre, Index k) {
    using Scalar = typename Derived::Scalar;
    SparseBatch<Scalar> out;
    out.pre_activations = z_pre;
    const Index rows = z_pre.rows();
    const Index cols = z_pre.cols();
    out.active_mask = BoolMatrix::Constant(rows, cols, false);
    out.codes = RowMatrix<Scalar>::Zero(rows, cols);

    const Index budget = std::min(k * rows, rows * cols);
    for (Index flat : detail::top_positive(out.pre_activations.data(), rows * cols, budget)) {
        const Index r = flat / cols;
        const Index c = flat % cols;
        out.active_mask(r, c) = true;
        out.codes(r, c) = out.pre_activations(r, c);
    }
    return out;
}

/// Per-sample top-k: the k largest strictly positive entries, ties by index.
template <typename Derived>
Vector<typename Derived::Scalar> topk_per_sample(const Eigen::MatrixBase<Derived>& z_pre, Index k) {
    using Scalar = typename Derived::Scalar;
    const Vector<Scalar> pre = z_pre;
    Vector<Scalar> code = Vector<Scalar>::Zero(pre.size());
    for (Index i : detail::top_positive(pre.data(), pre.size(), std::min(k, pre.size()))) code[i] = pre[i];
    return code;
}

template <typename Derived>
Vector<typename Derived::Scalar> threshold_activate(const Eigen::MatrixBase<Derived>& z_pre,
                                                    typename Derived::Scalar theta) {
    using Scalar = typename Derived::Scalar;
    if (!(theta >= Scalar(0))) throw DataError("theta must be nonnegative");
    return z_pre.unaryExpr([theta](Scalar v) { return v > theta ? v : Scalar(0); });
}

enum class InferenceMode { PerSampleTopK, Threshold };

/// Sparse codes for every row of x under an inference mode.
template <typename Scalar, typename Derived>
RowMatrix<Scalar> encode(const SaeModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x,
                         InferenceMode mode = InferenceMode::PerSampleTopK) {
    RowMatrix<Scalar> pre = encode_pre(model, x);
    for (Index r = 0; r < pre.rows(); ++r) {
        if (mode == InferenceMode::PerSampleTopK)
            pre.row(r) = topk_per_sample(pre.row(r).transpose(), model.k).transpose();
        else
            pre.row(r) = threshold_activate(pre.row(r).transpose(), model.theta).transpose();
    }
    return pre;
}

/// x_hat = Z W_dec + b_dec
template <typename Scalar, typename Derived>
RowMatrix<Scalar> decode(const SaeModel<Scalar>& model, const Eigen::MatrixBase<Derived>& z) {
    require_shape(z.cols() == model.dict_size, "code columns != M");
    RowMatrix<Scalar> out = z.template cast<Scalar>() * model.w_dec;
    out.rowwise() += model.b_dec.transpose();
    return out;
}

/// mean_b ||x_b - x_hat_b||^2 - lambda * mean(z_pre * I_dead).
/// Accumulated in double; rows in order, pairwise within a row.
template <typename DX, typename DH, typename DZ>
LossBreakdown loss(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DH>& x_hat,
                   const Eigen::MatrixBase<DZ>& z_pre, const BoolVector& dead_mask, double lambda) {
    require_shape(x.rows() == x_hat.rows() && x.cols() == x_hat.cols(), "x vs x_hat");
    require_shape(z_pre.rows() == x.rows(), "z_pre rows");
    require_shape(dead_mask.size() == z_pre.cols(), "dead mask length");
    if (!(lambda >= 0)) throw DataError("lambda must be nonnegative");

    LossBreakdown out;
    out.lambda = lambda;
    out.dead_mask = dead_mask;
    const Index rows = x.rows();

    std::vector<double> buf(static_cast<std::size_t>(std::max(x.cols(), z_pre.cols())));
    double sq_total = 0;
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < x.cols(); ++c) {
            const double e = static_cast<double>(x(r, c)) - static_cast<double>(x_hat(r, c));
            buf[static_cast<std::size_t>(c)] = e * e;
        }
        sq_total += detail::pairwise_sum(buf.data(), static_cast<std::size_t>(x.cols()));
    }
    out.mse = rows > 0 ? sq_total / static_cast<double>(rows) : 0.0;

    double dead_total = 0;
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < z_pre.cols(); ++c)
            buf[static_cast<std::size_t>(c)] = dead_mask[c] ? static_cast<double>(z_pre(r, c)) : 0.0;
        dead_total += detail::pairwise_sum(buf.data(), static_cast<std::size_t>(z_pre.cols()));
    }
    const double entries = static_cast<double>(rows * z_pre.cols());
    out.reanimation = entries > 0 ? dead_total / entries : 0.0;
    out.total = out.mse - lambda * out.reanimation;
    return out;
}

/// Analytic gradients of `loss` with the active mask held fixed
/// (straight-through top-k).
template <typename Scalar, typename Derived>
Gradients<Scalar> grads(const SaeModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x,
                        const SparseBatch<Scalar>& sparse, const BoolVector& dead_mask, double lambda) {
    const Index batch = x.rows();
    require_shape(x.cols() == model.dim_in, "input columns != D");
    require_shape(sparse.codes.rows() == batch && sparse.codes.cols() == model.dict_size, "sparse batch");
    require_shape(dead_mask.size() == model.dict_size, "dead mask length");

    const RowMatrix<Scalar> xs = x.template cast<Scalar>();
    RowMatrix<Scalar> x_hat = sparse.codes * model.w_dec;
    x_hat.rowwise() += model.b_dec.transpose();

    // dL/dx_hat
    const Scalar inv_b = batch > 0 ? Scalar(1) / static_cast<Scalar>(batch) : Scalar(0);
    const RowMatrix<Scalar> g_out = (x_hat - xs) * (Scalar(2) * inv_b);

    // dL/dz_pre: reconstruction path through active entries only, plus the
    // constant reanimation pull on every pre-activation of a dead feature.
    RowMatrix<Scalar> g_pre = (g_out * model.w_dec.transpose()).cwiseProduct(sparse.active_mask.template cast<Scalar>().matrix());
    if (lambda > 0 && batch > 0) {
        const Scalar pull = static_cast<Scalar>(-lambda / static_cast<double>(batch * model.dict_size));
        for (Index j = 0; j < model.dict_size; ++j)
            if (dead_mask[j]) g_pre.col(j).array() += pull;
    }

    RowMatrix<Scalar> centered = xs;
    centered.rowwise() -= model.b_dec.transpose();

    Gradients<Scalar> g;
    g.w_dec = sparse.codes.transpose() * g_out;
    g.w_enc = g_pre.transpose() * centered;
    g.b_enc = g_pre.colwise().sum().transpose();
    g.b_dec = g_out.colwise().sum().transpose() - (g_pre * model.w_enc).colwise().sum().transpose();
    return g;
}

} // namespace lsae

#endif // LSAE_SAE_HPP
