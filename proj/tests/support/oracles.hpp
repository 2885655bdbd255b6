#ifndef LSAE_TESTS_ORACLES_HPP
#define LSAE_TESTS_ORACLES_HPP

// Independent reference implementations used only by tests. They work on
// plain nested std::vector<double> with scalar loops and never call into the
// library's numerical code paths.

#include "lsae/embedding_store.hpp"
#include "lsae/prng.hpp"
#include "lsae/sae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

namespace oracle {

using Grid = std::vector<std::vector<double>>;

template <typename Dense>
Grid to_grid(const Dense& m) {
    Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) g[r][c] = static_cast<double>(m(r, c));
    return g;
}

template <typename V>
std::vector<double> to_vec(const V& v) {
    std::vector<double> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
    return out;
}

inline Grid matmul(const Grid& a, const Grid& b) {
    const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
    Grid out(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0;
            for (std::size_t t = 0; t < k; ++t) s += a[i][t] * b[t][j];
            out[i][j] = s;
        }
    return out;
}

inline Grid transpose(const Grid& a) {
    if (a.empty()) return {};
    Grid t(a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
    return t;
}

/// Active set of BatchTopK by full sort: strictly positive entries ordered by
/// value descending then flat index ascending; the first `keep` survive.
inline std::set<std::size_t> topk_active(const std::vector<double>& flat, std::size_t keep) {
    std::vector<std::pair<double, std::size_t>> pos;
    for (std::size_t i = 0; i < flat.size(); ++i)
        if (flat[i] > 0) pos.emplace_back(flat[i], i);
    std::sort(pos.begin(), pos.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::set<std::size_t> out;
    for (std::size_t i = 0; i < std::min(keep, pos.size()); ++i) out.insert(pos[i].second);
    return out;
}

struct Params {
    Grid w_enc;  // M x D
    std::vector<double> b_enc;
    Grid w_dec;  // M x D
    std::vector<double> b_dec;
};

template <typename Scalar>
Params params_of(const lsae::SaeModel<Scalar>& m) {
    return {to_grid(m.w_enc), to_vec(m.b_enc), to_grid(m.w_dec), to_vec(m.b_dec)};
}

inline Grid pre_activations(const Params& p, const Grid& x) {
    const std::size_t m = p.b_enc.size(), d = p.b_dec.size();
    Grid z(x.size(), std::vector<double>(m));
    for (std::size_t b = 0; b < x.size(); ++b)
        for (std::size_t j = 0; j < m; ++j) {
            double s = p.b_enc[j];
            for (std::size_t i = 0; i < d; ++i) s += p.w_enc[j][i] * (x[b][i] - p.b_dec[i]);
            z[b][j] = s;
        }
    return z;
}

inline double loss_value(const Grid& x, const Grid& x_hat, const Grid& z_pre, const std::vector<bool>& dead,
                         double lambda) {
    double sq = 0;
    for (std::size_t b = 0; b < x.size(); ++b)
        for (std::size_t i = 0; i < x[b].size(); ++i) sq += (x[b][i] - x_hat[b][i]) * (x[b][i] - x_hat[b][i]);
    double dead_sum = 0;
    std::size_t entries = 0;
    for (const auto& row : z_pre)
        for (std::size_t j = 0; j < row.size(); ++j, ++entries)
            if (dead[j]) dead_sum += row[j];
    const double mse = x.empty() ? 0.0 : sq / static_cast<double>(x.size());
    const double rean = entries ? dead_sum / static_cast<double>(entries) : 0.0;
    return mse - lambda * rean;
}

/// Training loss as a function of the parameters with the active mask frozen.
inline double loss_with_mask(const Params& p, const Grid& x, const std::vector<std::vector<bool>>& mask,
                             const std::vector<bool>& dead, double lambda) {
    const Grid z_pre = pre_activations(p, x);
    const std::size_t m = p.b_enc.size(), d = p.b_dec.size();
    Grid x_hat(x.size(), std::vector<double>(d));
    for (std::size_t b = 0; b < x.size(); ++b)
        for (std::size_t i = 0; i < d; ++i) {
            double s = p.b_dec[i];
            for (std::size_t j = 0; j < m; ++j)
                if (mask[b][j]) s += z_pre[b][j] * p.w_dec[j][i];
            x_hat[b][i] = s;
        }
    return loss_value(x, x_hat, z_pre, dead, lambda);
}

/// Central finite differences of loss_with_mask for every parameter.
inline Params finite_difference_grads(Params p, const Grid& x, const std::vector<std::vector<bool>>& mask,
                                      const std::vector<bool>& dead, double lambda, double h) {
    Params g = p;
    auto probe = [&](double& slot, double& out) {
        const double keep = slot;
        slot = keep + h;
        const double up = loss_with_mask(p, x, mask, dead, lambda);
        slot = keep - h;
        const double down = loss_with_mask(p, x, mask, dead, lambda);
        slot = keep;
        out = (up - down) / (2 * h);
    };
    for (std::size_t j = 0; j < p.w_enc.size(); ++j)
        for (std::size_t i = 0; i < p.w_enc[j].size(); ++i) probe(p.w_enc[j][i], g.w_enc[j][i]);
    for (std::size_t j = 0; j < p.b_enc.size(); ++j) probe(p.b_enc[j], g.b_enc[j]);
    for (std::size_t j = 0; j < p.w_dec.size(); ++j)
        for (std::size_t i = 0; i < p.w_dec[j].size(); ++i) probe(p.w_dec[j][i], g.w_dec[j][i]);
    for (std::size_t i = 0; i < p.b_dec.size(); ++i) probe(p.b_dec[i], g.b_dec[i]);
    return g;
}

/// Textbook scalar Adam, one parameter.
struct ScalarAdam {
    double m = 0, v = 0;
    int t = 0;
    double step(double param, double grad, double lr, double b1, double b2, double eps) {
        ++t;
        m = b1 * m + (1 - b1) * grad;
        v = b2 * v + (1 - b2) * grad * grad;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        return param - lr * mh / (std::sqrt(vh) + eps);
    }
};

/// Singular values by one-sided Jacobi rotations, descending.
inline std::vector<double> singular_values(Grid a) {
    const std::size_t rows = a.size();
    const std::size_t cols = rows ? a[0].size() : 0;
    if (cols > rows) {
        a = transpose(a);
        return singular_values(a);
    }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (std::size_t p = 0; p + 1 < cols; ++p)
            for (std::size_t q = p + 1; q < cols; ++q) {
                double alpha = 0, beta = 0, gamma = 0;
                for (std::size_t i = 0; i < rows; ++i) {
                    alpha += a[i][p] * a[i][p];
                    beta += a[i][q] * a[i][q];
                    gamma += a[i][p] * a[i][q];
                }
                if (gamma == 0) continue;
                off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
                const double zeta = (beta - alpha) / (2 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1 + zeta * zeta));
                const double c = 1 / std::sqrt(1 + t * t), s = c * t;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double ap = a[i][p], aq = a[i][q];
                    a[i][p] = c * ap - s * aq;
                    a[i][q] = s * ap + c * aq;
                }
            }
        if (off < 1e-15) break;
    }
    std::vector<double> sv(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < rows; ++i) s += a[i][j] * a[i][j];
        sv[j] = std::sqrt(s);
    }
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

inline double stable_rank_svd(const Grid& w) {
    const auto sv = singular_values(w);
    double s2 = 0;
    for (double s : sv) s2 += s * s;
    return s2 / (sv[0] * sv[0]);
}

/// Style profile by exhaustive per-concept loops.
inline std::map<Eigen::Index, double> profile_values(const lsae::RowMatrixXf& c, double presence, double strength) {
    std::map<Eigen::Index, double> out;
    const Eigen::Index n = c.rows();
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
        double num = 0;
        Eigen::Index den = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double v = c(i, j);
            num += v * (v > 0 ? 1.0 : 0.0);
            den += v > 0 ? 1 : 0;
        }
        if (den > 0 && static_cast<double>(den) / static_cast<double>(n) >= presence) out[j] = strength * (num / static_cast<double>(den));
    }
    return out;
}

/// Planted sparse dictionary data: unit-norm Gaussian atoms, `active` distinct
/// atoms per sample with coefficients drawn uniformly from [lo, hi].
struct Planted {
    lsae::RowMatrixXf atoms;  // M x D
    lsae::RowMatrixXf data;   // N x D
};

inline Planted planted_dictionary(Eigen::Index dim, Eigen::Index atoms, Eigen::Index active, Eigen::Index n,
                                  std::uint64_t seed, double lo = 0.5, double hi = 1.5) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> coef(lo, hi);
    Planted p;
    lsae::RowMatrixXd a(atoms, dim);
    for (Eigen::Index j = 0; j < atoms; ++j) {
        for (Eigen::Index i = 0; i < dim; ++i) a(j, i) = normal(gen);
        a.row(j) /= a.row(j).norm();
    }
    p.atoms = a.cast<float>();
    lsae::RowMatrixXd x = lsae::RowMatrixXd::Zero(n, dim);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(atoms));
    for (Eigen::Index j = 0; j < atoms; ++j) idx[j] = j;
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index t = 0; t < active; ++t) {
            std::uniform_int_distribution<Eigen::Index> pick(t, atoms - 1);
            std::swap(idx[t], idx[pick(gen)]);
            x.row(r) += coef(gen) * a.row(idx[t]);
        }
    }
    p.data = x.cast<float>();
    return p;
}

/// Fraction of planted atoms matched by some learned decoder row at cosine >= threshold.
inline double recovered_fraction(const lsae::RowMatrixXf& truth, const lsae::RowMatrixXf& learned, double threshold) {
    lsae::RowMatrixXd t = truth.cast<double>();
    lsae::RowMatrixXd l = learned.cast<double>();
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        const double n = l.row(i).norm();
        if (n > 0) l.row(i) /= n;
    }
    const lsae::RowMatrixXd cos = t * l.transpose();
    std::size_t hit = 0;
    for (Eigen::Index i = 0; i < cos.rows(); ++i)
        if (cos.row(i).maxCoeff() >= threshold) ++hit;
    return static_cast<double>(hit) / static_cast<double>(t.rows());
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("lsae-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace oracle

#endif // LSAE_TESTS_ORACLES_HPP
