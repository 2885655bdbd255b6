#include "lsae/diagnostics.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <random>
#include <vector>

using namespace lsae;

namespace {

RowMatrixXd gaussian(Index rows, Index cols, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n;
    RowMatrixXd m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
    return m;
}

} // namespace

TEST_CASE("r2") {
    RowMatrixXd x(2, 1);
    x << 0, 2;
    const Vector<double> mean = Vector<double>::Constant(1, 1.0);
    CHECK(r2(x, x, mean) == 1.0);
    CHECK(r2(x, RowMatrixXd::Constant(2, 1, 1.0), mean) == 0.0);
    RowMatrixXd worse(2, 1);
    worse << 2, 0;
    CHECK(r2(x, worse, mean) == -3.0);
    CHECK_THROWS_WITH_AS(r2(RowMatrixXd::Ones(3, 2), RowMatrixXd::Ones(3, 2), Vector<double>::Ones(2)),
                         "zero variance", DataError);
    CHECK_THROWS_AS(r2(x, RowMatrixXd::Zero(3, 1), mean), DataError);
}

TEST_CASE("r2 against a direct loop") {
    const auto x = gaussian(50, 7, 1);
    const RowMatrixXd xh = x + 0.3 * gaussian(50, 7, 2);
    Vector<double> mean = x.colwise().mean().transpose();
    long double res = 0, tot = 0;
    for (Index r = 0; r < 50; ++r)
        for (Index c = 0; c < 7; ++c) {
            res += (x(r, c) - xh(r, c)) * (x(r, c) - xh(r, c));
            tot += (x(r, c) - mean[c]) * (x(r, c) - mean[c]);
        }
    CHECK(std::abs(r2(x, xh, mean) - static_cast<double>(1 - res / tot)) < 1e-9);
}

TEST_CASE("mean_l0 and dead_fraction") {
    RowMatrixXf z(2, 4);
    z << 1, 0, 0, 0, 2, 3, 4, 0;
    CHECK(mean_l0(z) == 2.0);
    CHECK(mean_l0(RowMatrixXf(0, 4)) == 0.0);
    const std::vector<std::uint64_t> counts{0, 3, 0, 1};
    CHECK(dead_fraction(counts) == 0.5);
    const std::vector<std::uint64_t> none;
    CHECK(dead_fraction(none) == 0.0);
}

TEST_CASE("stable rank hand cases") {
    CHECK(stable_rank(RowMatrixXd::Identity(5, 5)).stable_rank == doctest::Approx(5.0).epsilon(1e-9));

    RowMatrixXd rank1 = gaussian(6, 1, 3) * gaussian(1, 4, 4);
    CHECK(stable_rank(rank1).stable_rank == doctest::Approx(1.0).epsilon(1e-9));

    RowMatrixXd diag = RowMatrixXd::Zero(3, 3);
    diag.diagonal() << 3, 4, 0;
    const auto s = stable_rank(diag);
    CHECK(s.frob_norm_sq == 25.0);
    CHECK(s.spectral_norm == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(s.stable_rank == doctest::Approx(25.0 / 16.0).epsilon(1e-9));

    const auto w = gaussian(12, 5, 5);
    const RowMatrixXd scaled = 7.5 * w;
    CHECK(stable_rank(scaled).stable_rank == doctest::Approx(stable_rank(w).stable_rank).epsilon(1e-9));

    CHECK_THROWS_WITH_AS(stable_rank(RowMatrixXd::Zero(3, 2)), "undefined stable rank", DataError);
}

TEST_CASE("stable rank when the start vector is orthogonal to the top direction") {
    // All-ones start lies in the null space of W^T W, so iteration must restart.
    RowMatrixXd w(2, 2);
    w << 1, -1, 0, 0;
    const auto s = stable_rank(w);
    CHECK(s.stable_rank == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("stable rank against a Jacobi SVD oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto w = gaussian(10, 20, 100 + seed);
        const double want = oracle::stable_rank_svd(oracle::to_grid(w));
        const double got = stable_rank(w).stable_rank;
        CHECK(std::abs(got - want) <= 1e-6 * want);
        CHECK(got >= 1.0);
        CHECK(got <= 10.0 + 1e-9);
    }
}

TEST_CASE("evaluate on an identity-like model") {
    // Tied encoder/decoder on an orthonormal basis with k = D reconstructs exactly.
    SaeModel<float> m;
    m.dim_in = 3;
    m.dict_size = 6;
    m.k = 3;
    m.w_dec = RowMatrixXf::Zero(6, 3);
    m.w_dec.topRows(3) = RowMatrixXf::Identity(3, 3);
    m.w_dec.bottomRows(3) = -RowMatrixXf::Identity(3, 3);
    m.w_enc = m.w_dec;
    m.b_enc = Vector<float>::Zero(6);
    m.b_dec = Vector<float>::Zero(3);
    const auto x = gaussian(20, 3, 9).cast<float>().eval();
    const auto report = evaluate(m, make_dataset(x));
    CHECK(report.r2 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(report.mean_l0 <= 3.0);
    CHECK(report.stable_rank == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(report.dead_fraction == 0.0);
}
