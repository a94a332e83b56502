#pragma once

namespace cshap {

double log_beta(double a, double b);

// Regularized incomplete beta I_x(a, b), evaluated with the Lentz continued
// fraction. Relative accuracy around 1e-14 for the (a, b) ranges used here.
double regularized_incomplete_beta(double x, double a, double b);

// CDF of the Student-t distribution with df degrees of freedom.
// student_t_cdf(0, df) == 0.5 exactly.
double student_t_cdf(double t, double df);

}  // namespace cshap
