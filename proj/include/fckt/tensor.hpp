#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace fckt {

// Row-major so that a row is one token embedding.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

// A trainable tensor together with its gradient accumulator and Adam moments.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Matrix::Zero(value.rows(), value.cols())),
        adam_m(Matrix::Zero(value.rows(), value.cols())),
        adam_v(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterList = std::vector<Parameter*>;

}  // namespace fckt
