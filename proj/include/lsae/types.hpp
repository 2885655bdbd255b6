#ifndef LSAE_TYPES_HPP
#define LSAE_TYPES_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lsae {

// Row-major throughout: one row per sample, matching the on-disk layout.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrixXf = RowMatrix<float>;
using RowMatrixXd = RowMatrix<double>;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolVector = Eigen::Array<bool, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Bad arguments or malformed input data. Maps to exit code 2 in the CLI.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem or network failure. Maps to exit code 3 in the CLI.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw DataError("shape mismatch: " + what);
}

} // namespace lsae

#endif // LSAE_TYPES_HPP
