#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace deta {

/// Dense real vector. Feature vectors, embeddings and gradients all use it.
using Vec = std::vector<double>;

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

/// Cosine of the angle between `a` and `b`. Throws DegenerateVector when
/// either input has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Gradients of cosine_similarity(a, b) with respect to `a` and `b`.
struct CosineGrad {
  double value = 0.0;
  Vec d_a;
  Vec d_b;
};
CosineGrad cosine_similarity_grad(std::span<const double> a, std::span<const double> b);

/// Numerically stable log(sum(exp(x))). `x` must be non-empty.
double log_sum_exp(std::span<const double> x);

/// softmax(scores / temperature), computed with the max-shift trick.
Vec softmax(std::span<const double> scores, double temperature = 1.0);

Vec l2_normalize(std::span<const double> v);

/// y = M x
Vec matvec(const Matrix& m, std::span<const double> x);
/// y = M^T x
Vec matvec_transposed(const Matrix& m, std::span<const double> x);

/// True when no entry is NaN or infinite.
bool all_finite(std::span<const double> v);

struct GradCheckConfig {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-8;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central-difference estimate of the gradient of `f` at `params`.
/// Throws OracleFailure if `f` returns a non-finite value.
Vec finite_difference_gradient(const ScalarFunction& f, std::span<const double> params,
                               const GradCheckConfig& cfg = {});

/// Largest per-coordinate mismatch between an analytic and a numeric
/// gradient, scored as |a - n| / max(|a|, |n|, abs_tol / rel_tol).
/// A coordinate passes when the score is below cfg.rel_tol.
double gradient_mismatch(std::span<const double> analytic, std::span<const double> numeric,
                         const GradCheckConfig& cfg = {});

}  // namespace deta
