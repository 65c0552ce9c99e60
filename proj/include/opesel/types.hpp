#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace opesel {

using Scalar = double;
using Index = Eigen::Index;

using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
// Row-major layout for per-dataset-row blocks, so a matrix row is the
// contiguous unit both in memory and on disk.
using RMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
using IVec = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

}  // namespace opesel
