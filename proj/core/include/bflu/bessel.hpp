#pragma once

#include <vector>

#include "bflu/types.hpp"

namespace bflu::bessel {

// Integer-order Bessel functions of real positive argument.
//
// Small and moderate arguments use Miller's backward recurrence for J_n with
// the Neumann-series representation of Y_0 and Y_1; large arguments use the
// Hankel asymptotic expansion. Relative accuracy is about 1e-13 away from zeros.

double J0(double x);
double Y0(double x);
double J1(double x);
double Y1(double x);

/// H0^(1)(x) = J0(x) + i Y0(x).
Complex hankel0(double x);

/// J_0..J_nmax at x, computed in one backward sweep.
std::vector<double> jn_sequence(int nmax, double x);
/// Y_0..Y_nmax at x by forward recurrence (stable for Y).
std::vector<double> yn_sequence(int nmax, double x);

}  // namespace bflu::bessel
