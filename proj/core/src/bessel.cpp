#include "bflu/bessel.hpp"

#include <algorithm>
#include <cmath>

namespace bflu::bessel {

namespace {

constexpr double kEulerGamma = 0.57721566490153286061;
constexpr double kAsymptoticThreshold = 25.0;
constexpr double kSmallThreshold = 1e-3;

struct JY {
  double j, y;
};

// Hankel asymptotic expansion for order nu at large x.
JY asymptotic(int nu, double x) {
  const double mu = 4.0 * nu * nu;
  double p = 1.0, q = 0.0;
  double term = 1.0;
  double last = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= (mu - odd * odd) / (k * 8.0 * x);
    if (std::abs(term) > std::abs(last) && k > 2) break;  // series starts diverging
    last = term;
    // k odd contributes to Q, k even to P, with alternating signs in pairs.
    const int pair = k / 2;
    const double sign = (pair % 2 == 0) ? 1.0 : -1.0;
    if (k % 2 == 1)
      q += sign * term;
    else
      p += sign * term;
    if (std::abs(term) < 1e-17) break;
  }
  const double chi = x - (0.5 * nu + 0.25) * M_PI;
  const double amp = std::sqrt(2.0 / (M_PI * x));
  const double c = std::cos(chi), s = std::sin(chi);
  return {amp * (p * c - q * s), amp * (p * s + q * c)};
}

// J_0..J_nmax by Miller's backward recurrence normalized with
// J_0 + 2 sum J_2k = 1. `top` receives J values up to `need` (>= nmax).
void miller(double x, int need, std::vector<double>& out) {
  const int start_raw = std::max(need, static_cast<int>(std::ceil(x))) + 30 +
                        static_cast<int>(2.0 * std::cbrt(std::max(x, 1.0)));
  const int start = start_raw + (start_raw % 2);
  out.assign(static_cast<std::size_t>(need) + 1, 0.0);
  double jp1 = 0.0, j = 1e-300;
  double norm = 0.0;
  for (int n = start; n >= 1; --n) {
    // j holds J_n, jp1 holds J_{n+1}.
    if (n <= need) out[static_cast<std::size_t>(n)] = j;
    if (n % 2 == 0) norm += 2.0 * j;
    const double jm1 = (2.0 * n / x) * j - jp1;
    jp1 = j;
    j = jm1;
    if (std::abs(j) > 1e250) {
      j *= 1e-250;
      jp1 *= 1e-250;
      norm *= 1e-250;
      for (auto& v : out) v *= 1e-250;
    }
  }
  out[0] = j;
  norm += j;
  for (auto& v : out) v /= norm;
}

JY small01(int order, double x) {
  const double x2 = x * x;
  const double lg = std::log(0.5 * x) + kEulerGamma;
  if (order == 0) {
    const double j = 1.0 - x2 / 4.0 + x2 * x2 / 64.0;
    return {j, (2.0 / M_PI) * (lg * j + x2 / 4.0 - 3.0 * x2 * x2 / 128.0)};
  }
  const double j = 0.5 * x - x * x2 / 16.0;
  return {j, -2.0 / (M_PI * x) + (2.0 / M_PI) * (lg - 0.5) * 0.5 * x};
}

// Y_0 and Y_1 from the Neumann series in J_k, for moderate x.
JY neumann_y(double x, std::vector<double>& jv) {
  const double lg = std::log(0.5 * x) + kEulerGamma;
  int kmax = static_cast<int>(jv.size() / 2) - 1;
  double s0 = 0.0, s1 = 0.0;
  for (int k = 1; k <= kmax; ++k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    s0 += sign * jv[static_cast<std::size_t>(2 * k)] / k;
    s1 += sign * (jv[static_cast<std::size_t>(2 * k - 1)] - jv[static_cast<std::size_t>(2 * k + 1)]) / k;
  }
  const double y0v = (2.0 / M_PI) * lg * jv[0] - (4.0 / M_PI) * s0;
  const double y1v = -(2.0 / M_PI) * (jv[0] / x - lg * jv[1]) + (2.0 / M_PI) * s1;
  return {y0v, y1v};
}

std::pair<JY, JY> orders01(double x) {
  if (!(x > 0.0)) throw InvalidInput("Bessel argument must be positive");
  if (x < kSmallThreshold) return {small01(0, x), small01(1, x)};
  if (x >= kAsymptoticThreshold) return {asymptotic(0, x), asymptotic(1, x)};
  std::vector<double> jv;
  const int need = static_cast<int>(std::ceil(x)) + 40;
  miller(x, need + (need % 2 == 0 ? 1 : 0), jv);
  const JY y = neumann_y(x, jv);
  return {{jv[0], y.j}, {jv[1], y.y}};
}

}  // namespace

double J0(double x) { return orders01(x).first.j; }
double Y0(double x) { return orders01(x).first.y; }
double J1(double x) { return orders01(x).second.j; }
double Y1(double x) { return orders01(x).second.y; }

Complex hankel0(double x) {
  if (x >= kAsymptoticThreshold) {
    const JY v = asymptotic(0, x);
    return {v.j, v.y};
  }
  const JY v = orders01(x).first;
  return {v.j, v.y};
}

std::vector<double> jn_sequence(int nmax, double x) {
  if (nmax < 0) throw InvalidInput("negative Bessel order");
  if (!(x > 0.0)) throw InvalidInput("Bessel argument must be positive");
  std::vector<double> jv;
  miller(x, std::max(nmax, 1), jv);
  if (x >= kAsymptoticThreshold) {
    // Backward recurrence loses a little relative accuracy at large x;
    // rescale the sweep so J_0 matches the asymptotic value.
    const double ref0 = asymptotic(0, x).j;
    const double ref1 = asymptotic(1, x).j;
    const double scale = std::abs(ref0) > std::abs(ref1) ? ref0 / jv[0] : ref1 / jv[1];
    for (auto& v : jv) v *= scale;
  }
  jv.resize(static_cast<std::size_t>(nmax) + 1);
  return jv;
}

std::vector<double> yn_sequence(int nmax, double x) {
  if (nmax < 0) throw InvalidInput("negative Bessel order");
  const auto [o0, o1] = orders01(x);
  std::vector<double> yv(static_cast<std::size_t>(std::max(nmax, 1)) + 1);
  yv[0] = o0.y;
  yv[1] = o1.y;
  for (int n = 1; n + 1 <= nmax; ++n)
    yv[static_cast<std::size_t>(n + 1)] = (2.0 * n / x) * yv[static_cast<std::size_t>(n)] -
                                          yv[static_cast<std::size_t>(n - 1)];
  yv.resize(static_cast<std::size_t>(nmax) + 1);
  return yv;
}

}  // namespace bflu::bessel
