#include "bflu/kernels.hpp"

#include <cmath>

#include "bflu/bessel.hpp"

namespace bflu {

namespace {

std::atomic<std::uint64_t> g_eval_count{0};

constexpr Complex kI{0.0, 1.0};
constexpr double kGammaExp = 1.7810724179901979;  // exp(Euler gamma)

}  // namespace

std::uint64_t kernel_eval_count() { return g_eval_count.load(std::memory_order_relaxed); }
void reset_kernel_eval_count() { g_eval_count.store(0, std::memory_order_relaxed); }

KernelSpec KernelSpec::helmholtz3d(PointCloud cloud, double k) {
  cloud.validate();
  if (k < 0.0) throw InvalidInput("wavenumber must be non-negative");
  KernelSpec s;
  s.kind_ = KernelKind::helmholtz3d;
  s.k_ = k;
  s.cloud_ = std::move(cloud);
  return s;
}

KernelSpec KernelSpec::helmholtz2d(PointCloud cloud, double k) {
  cloud.validate();
  if (k < 0.0) throw InvalidInput("wavenumber must be non-negative");
  KernelSpec s;
  s.kind_ = KernelKind::helmholtz2d;
  s.k_ = k;
  s.cloud_ = std::move(cloud);
  return s;
}

KernelSpec KernelSpec::efie2d(PointCloud cloud, std::vector<double> weights, double k) {
  cloud.validate();
  if (!(k > 0.0)) throw InvalidInput("EFIE wavenumber must be positive");
  if (static_cast<Index>(weights.size()) != cloud.size())
    throw InvalidInput("EFIE needs one segment length per point");
  KernelSpec s;
  s.kind_ = KernelKind::efie2d_tm;
  s.k_ = k;
  s.diag_ = DiagonalRule::self_segment;
  s.cloud_ = std::move(cloud);
  s.weights_ = std::move(weights);
  return s;
}

KernelSpec KernelSpec::synthetic(PointCloud cloud, double k) {
  cloud.validate();
  KernelSpec s;
  s.kind_ = KernelKind::synthetic_oscillatory;
  s.k_ = k;
  s.cloud_ = std::move(cloud);
  return s;
}

KernelSpec KernelSpec::custom(PointCloud cloud, EntryFn fn) {
  cloud.validate();
  KernelSpec s;
  s.kind_ = KernelKind::custom;
  s.cloud_ = std::move(cloud);
  s.custom_ = std::make_shared<const EntryFn>(std::move(fn));
  return s;
}

KernelSpec KernelSpec::permuted(const std::vector<Index>& order) const {
  if (static_cast<Index>(order.size()) != size()) throw InvalidInput("permutation size mismatch");
  KernelSpec s = *this;
  for (std::size_t t = 0; t < order.size(); ++t) {
    const auto o = static_cast<std::size_t>(order[t]);
    s.cloud_.points[t] = cloud_.points[o];
    if (!weights_.empty()) s.weights_[t] = weights_[o];
  }
  if (kind_ == KernelKind::custom) {
    s.custom_order_.resize(order.size());
    for (std::size_t t = 0; t < order.size(); ++t) {
      const Index o = order[t];
      s.custom_order_[t] = custom_order_.empty() ? o : custom_order_[static_cast<std::size_t>(o)];
    }
  }
  return s;
}

Complex KernelSpec::entry(Index i, Index j) const {
  if (kind_ == KernelKind::custom) {
    if (custom_order_.empty()) return (*custom_)(i, j);
    return (*custom_)(custom_order_[static_cast<std::size_t>(i)], custom_order_[static_cast<std::size_t>(j)]);
  }
  const auto& p = cloud_.points[static_cast<std::size_t>(i)];
  const auto& q = cloud_.points[static_cast<std::size_t>(j)];
  const double r = distance(p, q);
  switch (kind_) {
    case KernelKind::synthetic_oscillatory:
      return std::exp(kI * (k_ * r)) / (1.0 + r);
    case KernelKind::helmholtz3d:
      if (r == 0.0) throw SingularityError("helmholtz3d self-interaction has no diagonal rule");
      return std::exp(kI * (k_ * r)) / (4.0 * M_PI * r);
    case KernelKind::helmholtz2d:
      if (r == 0.0) throw SingularityError("helmholtz2d self-interaction has no diagonal rule");
      if (k_ == 0.0) return Complex(-std::log(r) / (2.0 * M_PI), 0.0);
      return 0.25 * kI * bessel::hankel0(k_ * r);
    case KernelKind::efie2d_tm: {
      const double w = weights_[static_cast<std::size_t>(j)];
      if (i == j) {
        const double arg = std::log(kGammaExp * k_ * w / 4.0) - 1.0;
        return 0.25 * kI * w * (1.0 + kI * (2.0 / M_PI) * arg);
      }
      if (r == 0.0) throw SingularityError("coincident EFIE points");
      return 0.25 * kI * w * bessel::hankel0(k_ * r);
    }
    case KernelKind::custom:
      break;
  }
  throw InvalidInput("unknown kernel kind");
}

Complex eval_entry(const KernelSpec& kernel, Index i, Index j) {
  if (i < 0 || j < 0 || i >= kernel.size() || j >= kernel.size())
    throw InvalidInput("kernel index out of range");
  g_eval_count.fetch_add(1, std::memory_order_relaxed);
  return kernel.entry(i, j);
}

CMat eval_block(const KernelSpec& kernel, Index r0, Index nr, Index c0, Index nc) {
  if (r0 < 0 || c0 < 0 || nr < 0 || nc < 0 || r0 + nr > kernel.size() || c0 + nc > kernel.size())
    throw InvalidInput("kernel block out of range");
  CMat out(nr, nc);
  for (Index b = 0; b < nc; ++b)
    for (Index a = 0; a < nr; ++a) out(a, b) = kernel.entry(r0 + a, c0 + b);
  g_eval_count.fetch_add(static_cast<std::uint64_t>(nr * nc), std::memory_order_relaxed);
  return out;
}

CMat eval_block(const KernelSpec& kernel, const std::vector<Index>& rows, const std::vector<Index>& cols) {
  const Index n = kernel.size();
  for (Index r : rows)
    if (r < 0 || r >= n) throw InvalidInput("kernel row index out of range");
  for (Index c : cols)
    if (c < 0 || c >= n) throw InvalidInput("kernel column index out of range");
  CMat out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t b = 0; b < cols.size(); ++b)
    for (std::size_t a = 0; a < rows.size(); ++a)
      out(static_cast<Index>(a), static_cast<Index>(b)) = kernel.entry(rows[a], cols[b]);
  g_eval_count.fetch_add(static_cast<std::uint64_t>(rows.size() * cols.size()), std::memory_order_relaxed);
  return out;
}

Efie2dSystem build_efie2d_system(double radius, double k, double points_per_wavelength) {
  if (!(radius > 0.0)) throw InvalidInput("EFIE contour radius must be positive");
  if (!(k > 0.0)) throw InvalidInput("EFIE wavenumber must be positive");
  if (!(points_per_wavelength >= 6.0)) throw InvalidInput("points_per_wavelength must be at least 6");
  // circumference / wavelength = k * radius
  const auto n = static_cast<Index>(std::ceil(radius * k * points_per_wavelength - 1e-9));
  const Index count = std::max<Index>(n, 3);
  PointCloud cloud = make_circle(radius, count);
  const double seg = 2.0 * M_PI * radius / static_cast<double>(count);
  std::vector<double> w(static_cast<std::size_t>(count), seg);
  Efie2dSystem sys{KernelSpec::efie2d(cloud, w, k), cloud, radius, k};
  return sys;
}

CMat plane_wave_rhs(const ExcitationSpec& excitation, const PointCloud& cloud, double k) {
  if (excitation.angles.empty()) throw InvalidInput("excitation needs at least one angle");
  if (!std::isfinite(excitation.amplitude)) throw InvalidInput("excitation amplitude must be finite");
  CMat out(cloud.size(), static_cast<Index>(excitation.angles.size()));
  for (std::size_t a = 0; a < excitation.angles.size(); ++a) {
    const double phi = excitation.angles[a];
    if (!std::isfinite(phi)) throw InvalidInput("excitation angle must be finite");
    const double dx = std::cos(phi), dy = std::sin(phi);
    for (Index i = 0; i < cloud.size(); ++i) {
      const auto& p = cloud.points[static_cast<std::size_t>(i)];
      out(i, static_cast<Index>(a)) = excitation.amplitude * std::exp(kI * (k * (dx * p[0] + dy * p[1])));
    }
  }
  return out;
}

CVec efie2d_far_field(const PointCloud& cloud, const std::vector<double>& weights, double k,
                      const CVec& currents, const std::vector<double>& angles) {
  if (currents.size() != cloud.size() || static_cast<Index>(weights.size()) != cloud.size())
    throw InvalidInput("far field: size mismatch");
  CVec out(static_cast<Index>(angles.size()));
  for (std::size_t a = 0; a < angles.size(); ++a) {
    const double dx = std::cos(angles[a]), dy = std::sin(angles[a]);
    Complex acc = 0.0;
    for (Index n = 0; n < cloud.size(); ++n) {
      const auto& p = cloud.points[static_cast<std::size_t>(n)];
      acc += currents(n) * weights[static_cast<std::size_t>(n)] * std::exp(-kI * (k * (dx * p[0] + dy * p[1])));
    }
    out(static_cast<Index>(a)) = 0.25 * kI * acc;
  }
  return out;
}

int min_series_truncation(double radius, double k) {
  return static_cast<int>(std::ceil(k * radius)) + 15;
}

CVec cylinder_series_far_field(double radius, double k, const std::vector<double>& angles, int truncation,
                               double incidence) {
  if (!(radius > 0.0) || !(k > 0.0)) throw InvalidInput("cylinder series needs positive radius and k");
  if (truncation < min_series_truncation(radius, k))
    throw ConvergenceError("series truncation below ceil(k a) + 15");
  const double ka = k * radius;
  const auto jn = bessel::jn_sequence(truncation, ka);
  const auto yn = bessel::yn_sequence(truncation, ka);
  std::vector<Complex> a(static_cast<std::size_t>(truncation) + 1);
  double total = 0.0;
  for (int n = 0; n <= truncation; ++n) {
    const auto u = static_cast<std::size_t>(n);
    a[u] = -jn[u] / Complex(jn[u], yn[u]);
    total += std::abs(a[u]) * (n == 0 ? 1.0 : 2.0);
  }
  if (!(std::abs(a.back()) < 1e-12 * total))
    throw ConvergenceError("cylinder series not converged at truncation " + std::to_string(truncation));
  CVec out(static_cast<Index>(angles.size()));
  for (std::size_t s = 0; s < angles.size(); ++s) {
    const double t = angles[s] - incidence;
    Complex f = a[0];
    for (int n = 1; n <= truncation; ++n) f += 2.0 * a[static_cast<std::size_t>(n)] * std::cos(n * t);
    out(static_cast<Index>(s)) = f;
  }
  return out;
}

double echo_width_db(Complex far_field, double k) {
  const double sigma = 4.0 / k * std::norm(far_field);
  const double lambda = 2.0 * M_PI / k;
  return 10.0 * std::log10(sigma / lambda);
}

}  // namespace bflu
