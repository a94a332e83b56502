#include "cshap/stats.hpp"

#include <cmath>

#include "cshap/error.hpp"

namespace cshap {

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Modified Lentz evaluation of the standard continued fraction for I_x(a,b);
// the leading odd term is folded into the initialization, so the loop applies
// the even/odd term pairs.
static double incbeta_cf(double x, double a, double b) {
  const double tiny = 1e-300;
  const int max_iters = 500;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;

  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;

  for (int m = 1; m <= max_iters; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) <= 1e-15) break;
  }
  return h;
}

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(x >= 0.0 && x <= 1.0) || !(a > 0.0) || !(b > 0.0))
    fail(ErrorKind::config, "regularized_incomplete_beta: bad arguments");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;

  const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta(a, b));
  // Use the fraction on whichever side converges fastest.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * incbeta_cf(x, a, b) / a;
  return 1.0 - front * incbeta_cf(1.0 - x, b, a) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) fail(ErrorKind::config, "student_t_cdf: df must be positive");
  if (t == 0.0) return 0.5;
  const double x = df / (t * t + df);
  const double tail = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5);
  return t > 0.0 ? 1.0 - tail : tail;
}

}  // namespace cshap
