#include "lsae/diagnostics.hpp"

#include "lsae/prng.hpp"

#include <cmath>

namespace lsae {

double dead_fraction(std::span<const std::uint64_t> activation_counts) {
    if (activation_counts.empty()) return 0.0;
    std::size_t dead = 0;
    for (auto c : activation_counts)
        if (c == 0) ++dead;
    return static_cast<double>(dead) / static_cast<double>(activation_counts.size());
}

SpectralSummary stable_rank(const RowMatrixXd& w) {
    SpectralSummary out;
    double frob = 0;
    for (Index i = 0; i < w.size(); ++i) frob += w.data()[i] * w.data()[i];
    if (frob == 0) throw DataError("undefined stable rank");
    out.frob_norm_sq = frob;

    const Index d = w.cols();
    const Eigen::MatrixXd gram = w.transpose() * w;

    Eigen::VectorXd v = Eigen::VectorXd::Ones(d) / std::sqrt(static_cast<double>(d));
    bool restarted = false;
    double lambda = 0;
    for (std::size_t it = 1; it <= kPowerMaxIterations; ++it) {
        Eigen::VectorXd u = gram * v;
        const double norm = u.norm();
        if (norm == 0) {
            // Start vector lies in the null space; retry once from a fixed
            // pseudo-random direction.
            if (restarted) break;
            restarted = true;
            Xoshiro256 rng(0);
            for (Index i = 0; i < d; ++i) v[i] = rng.normal();
            v.normalize();
            continue;
        }
        const double next = v.dot(u);
        v = u / norm;
        out.iterations = it;
        if (it > 1 && std::abs(next - lambda) <= kPowerTolerance * std::abs(next)) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda = v.dot(gram * v) / v.squaredNorm();
    if (!(lambda > 0)) throw DataError("undefined stable rank");
    out.spectral_norm = std::sqrt(lambda);
    out.stable_rank = frob / lambda;
    return out;
}

DiagnosticsReport evaluate(const SaeModel<float>& model, const EmbeddingDataset& dataset, InferenceMode mode) {
    require_shape(dataset.dim == static_cast<std::size_t>(model.dim_in), "dataset dim != model D");
    const auto stats = compute_stats(dataset);

    constexpr Index kChunk = 4096;
    const Index n = dataset.data.rows();
    double residual = 0;
    double total = 0;
    std::uint64_t nonzero = 0;
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(model.dict_size), 0);
    for (Index start = 0; start < n; start += kChunk) {
        const Index rows = std::min(kChunk, n - start);
        const auto x = dataset.data.middleRows(start, rows);
        const RowMatrixXf codes = encode(model, x, mode);
        const RowMatrixXf x_hat = decode(model, codes);
        for (Index r = 0; r < rows; ++r) {
            for (Index c = 0; c < x.cols(); ++c) {
                const double xv = x(r, c);
                const double e = xv - static_cast<double>(x_hat(r, c));
                const double dm = xv - stats.mean[c];
                residual += e * e;
                total += dm * dm;
            }
            for (Index j = 0; j < codes.cols(); ++j) {
                if (codes(r, j) != 0) {
                    ++nonzero;
                    ++counts[static_cast<std::size_t>(j)];
                }
            }
        }
    }
    if (total == 0) throw DataError("zero variance");

    DiagnosticsReport report;
    report.r2 = 1.0 - residual / total;
    report.mean_l0 = static_cast<double>(nonzero) / static_cast<double>(n);
    report.dead_fraction = dead_fraction(counts);
    const auto spectral = stable_rank(model.w_dec);
    report.stable_rank = spectral.stable_rank;
    report.frob_norm_sq = spectral.frob_norm_sq;
    report.spectral_norm = spectral.spectral_norm;
    return report;
}

} // namespace lsae
