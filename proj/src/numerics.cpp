#include "deta/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deta/error.hpp"

namespace deta {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidParameter("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateVector("cosine_similarity: zero-norm input");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

CosineGrad cosine_similarity_grad(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateVector("cosine_similarity: zero-norm input");
  CosineGrad g;
  // Unclamped here so the derivative matches the value it came from.
  g.value = dot(a, b) / (na * nb);
  g.d_a.resize(a.size());
  g.d_b.resize(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    g.d_a[i] = b[i] / (na * nb) - g.value * a[i] / (na * na);
    g.d_b[i] = a[i] / (na * nb) - g.value * b[i] / (nb * nb);
  }
  return g;
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) throw InvalidParameter("log_sum_exp: empty input");
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

Vec softmax(std::span<const double> scores, double temperature) {
  if (!(temperature > 0.0)) throw InvalidParameter("softmax: temperature must be positive");
  if (scores.empty()) throw InvalidParameter("softmax: empty input");
  Vec out(scores.size());
  double m = -std::numeric_limits<double>::infinity();
  for (double s : scores) m = std::max(m, s / temperature);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] / temperature - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

Vec l2_normalize(std::span<const double> v) {
  const double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateVector("l2_normalize: zero-norm input");
  Vec out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Vec matvec(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols) throw InvalidParameter("matvec: dimension mismatch");
  Vec y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

Vec matvec_transposed(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.rows) throw InvalidParameter("matvec_transposed: dimension mismatch");
  Vec y(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    const double xr = x[r];
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
  }
  return y;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Vec finite_difference_gradient(const ScalarFunction& f, std::span<const double> params,
                               const GradCheckConfig& cfg) {
  if (!(cfg.step > 0.0)) throw InvalidParameter("finite_difference_gradient: step must be positive");
  Vec p(params.begin(), params.end());
  Vec grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + cfg.step;
    const double fp = f(p);
    p[i] = orig - cfg.step;
    const double fm = f(p);
    p[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw OracleFailure("finite_difference_gradient: non-finite function value at coordinate " +
                          std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * cfg.step);
  }
  return grad;
}

double gradient_mismatch(std::span<const double> analytic, std::span<const double> numeric,
                         const GradCheckConfig& cfg) {
  if (analytic.size() != numeric.size()) throw InvalidParameter("gradient_mismatch: size mismatch");
  const double floor = cfg.abs_tol / cfg.rel_tol;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace deta
