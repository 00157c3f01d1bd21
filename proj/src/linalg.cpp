#include "trimllm/linalg.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace trimllm {

template <class Real>
std::vector<Real> singular_values(const Tensor<Real>& m) {
  if (m.rank() != 2) throw DimensionError("singular_values needs a matrix, got " + shape_str(m.shape()));
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  if (rows > kMaxSvdDim || cols > kMaxSvdDim) {
    throw SizeError("singular_values: " + shape_str(m.shape()) + " exceeds the " +
                    std::to_string(kMaxSvdDim) + "x" + std::to_string(kMaxSvdDim) + " cap");
  }
  Eigen::MatrixXd a(rows, cols);
  auto src = m.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) a(Eigen::Index(r), Eigen::Index(c)) = double(src[r * cols + c]);
  const Eigen::VectorXd values = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
  std::vector<Real> sv(std::size_t(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) sv[std::size_t(i)] = Real(values(i));
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

template <class Real>
Real nuclear_norm(const Tensor<Real>& m) {
  Real total = 0;
  for (Real s : singular_values(m)) total += s;
  return total;
}

template <class Real>
Real frobenius_value(const Tensor<Real>& m) {
  NoGradScope<Real> no_grad;
  return frobenius_norm(m).item();
}

template <class Real>
Real finite_difference_check(const std::function<Tensor<Real>(const Tensor<Real>&)>& f,
                             Tensor<Real> x, Real h, Real abs_floor) {
  const bool had_grad_flag = x.requires_grad();
  x.set_requires_grad(true);
  x.clear_grad();
  std::vector<Real> analytic;
  {
    Tape<Real> tape;
    TapeScope<Real> scope(tape);
    Tensor<Real> y = f(x);
    backward(y);
    if (x.has_grad()) {
      analytic.assign(x.grad().begin(), x.grad().end());
    } else {
      analytic.assign(x.numel(), Real(0));
    }
  }
  x.clear_grad();
  x.set_requires_grad(had_grad_flag);

  NoGradScope<Real> no_grad;
  auto values = x.mutable_data();
  Real worst = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = saved + h;
    const Real up = f(x).item();
    values[i] = saved - h;
    const Real down = f(x).item();
    values[i] = saved;
    const Real numeric = (up - down) / (Real(2) * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + abs_floor));
  }
  return worst;
}

template std::vector<float> singular_values<float>(const Tensor<float>&);
template std::vector<double> singular_values<double>(const Tensor<double>&);
template float nuclear_norm<float>(const Tensor<float>&);
template double nuclear_norm<double>(const Tensor<double>&);
template float frobenius_value<float>(const Tensor<float>&);
template double frobenius_value<double>(const Tensor<double>&);
template float finite_difference_check<float>(
    const std::function<Tensor<float>(const Tensor<float>&)>&, Tensor<float>, float, float);
template double finite_difference_check<double>(
    const std::function<Tensor<double>(const Tensor<double>&)>&, Tensor<double>, double, double);

}  // namespace trimllm
