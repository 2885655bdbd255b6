#ifndef LSAE_DIAGNOSTICS_HPP
#define LSAE_DIAGNOSTICS_HPP

#include "lsae/embedding_store.hpp"
#include "lsae/sae.hpp"

#include <cstdint>
#include <span>

namespace lsae {

struct DiagnosticsReport {
    double r2 = 0;
    double mean_l0 = 0;
    double dead_fraction = 0;
    double stable_rank = 0;
    double frob_norm_sq = 0;
    double spectral_norm = 0;
};

struct SpectralSummary {
    double stable_rank = 0;
    double frob_norm_sq = 0;
    double spectral_norm = 0;
    std::size_t iterations = 0;
};

/// 1 - sum ||x - x_hat||^2 / sum ||x - mean||^2, accumulated in double.
template <typename DX, typename DH>
double r2(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DH>& x_hat, const Vector<double>& mean) {
    require_shape(x.rows() == x_hat.rows() && x.cols() == x_hat.cols(), "x vs x_hat");
    require_shape(mean.size() == x.cols(), "mean length");
    double residual = 0;
    double total = 0;
    for (Index r = 0; r < x.rows(); ++r) {
        for (Index c = 0; c < x.cols(); ++c) {
            const double xv = static_cast<double>(x(r, c));
            const double e = xv - static_cast<double>(x_hat(r, c));
            const double d = xv - mean[c];
            residual += e * e;
            total += d * d;
        }
    }
    if (total == 0) throw DataError("zero variance");
    return 1.0 - residual / total;
}

template <typename Derived>
double mean_l0(const Eigen::MatrixBase<Derived>& codes) {
    if (codes.rows() == 0) return 0.0;
    std::uint64_t nonzero = 0;
    for (Index r = 0; r < codes.rows(); ++r)
        for (Index c = 0; c < codes.cols(); ++c)
            if (codes(r, c) != 0) ++nonzero;
    return static_cast<double>(nonzero) / static_cast<double>(codes.rows());
}

double dead_fraction(std::span<const std::uint64_t> activation_counts);

inline constexpr double kPowerTolerance = 1e-10;
inline constexpr std::size_t kPowerMaxIterations = 10000;

/// ||W||_F^2 / ||W||_2^2. The spectral norm comes from power iteration on
/// W^T W started at the normalized all-ones vector.
SpectralSummary stable_rank(const RowMatrixXd& w);

template <typename Scalar>
SpectralSummary stable_rank(const RowMatrix<Scalar>& w) {
    return stable_rank(RowMatrixXd(w.template cast<double>()));
}

/// Full evaluation pass over a dataset: reconstruction R^2, code sparsity,
/// dead fraction over the pass, and decoder stable rank.
DiagnosticsReport evaluate(const SaeModel<float>& model, const EmbeddingDataset& dataset,
                           InferenceMode mode = InferenceMode::PerSampleTopK);

} // namespace lsae

#endif // LSAE_DIAGNOSTICS_HPP
