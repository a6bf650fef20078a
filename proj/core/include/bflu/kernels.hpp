#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <vector>

#include "bflu/geometry.hpp"
#include "bflu/types.hpp"

namespace bflu {

enum class KernelKind { helmholtz3d, helmholtz2d, efie2d_tm, synthetic_oscillatory, custom };

enum class DiagonalRule {
  none,          // i == j is a singularity error for singular kernels
  self_segment,  // 2D EFIE self-segment integral of (i/4) H0
};

/// Matrix-entry evaluator bound to a geometry and a wavenumber.
///
/// Entries are evaluated on the point order stored in `cloud`; use
/// `permuted()` to rebind the kernel to cluster-tree order.
class KernelSpec {
 public:
  using EntryFn = std::function<Complex(Index, Index)>;

  static KernelSpec helmholtz3d(PointCloud cloud, double k);
  static KernelSpec helmholtz2d(PointCloud cloud, double k);
  /// Pulse-basis, point-matched TM EFIE on a closed 2D contour. `weights`
  /// are the segment lengths.
  static KernelSpec efie2d(PointCloud cloud, std::vector<double> weights, double k);
  static KernelSpec synthetic(PointCloud cloud, double k);
  /// Arbitrary entry function over `n` unknowns (tests, identity-like kernels).
  static KernelSpec custom(PointCloud cloud, EntryFn fn);

  KernelKind kind() const { return kind_; }
  double wavenumber() const { return k_; }
  DiagonalRule diagonal_rule() const { return diag_; }
  const PointCloud& cloud() const { return cloud_; }
  const std::vector<double>& weights() const { return weights_; }
  Index size() const { return cloud_.size(); }

  /// Same kernel with point i of the result equal to point order[i] of this one.
  KernelSpec permuted(const std::vector<Index>& order) const;

  Complex entry(Index i, Index j) const;

 private:
  KernelKind kind_ = KernelKind::helmholtz2d;
  double k_ = 0.0;
  DiagonalRule diag_ = DiagonalRule::none;
  PointCloud cloud_;
  std::vector<double> weights_;
  std::shared_ptr<const EntryFn> custom_;
  std::vector<Index> custom_order_;  // maps this kernel's indices to custom_ indices
};

/// Global count of kernel entries evaluated through eval_entry / eval_block.
std::uint64_t kernel_eval_count();
void reset_kernel_eval_count();

Complex eval_entry(const KernelSpec& kernel, Index i, Index j);

/// Dense block over contiguous index ranges [r0, r0+nr) x [c0, c0+nc).
CMat eval_block(const KernelSpec& kernel, Index r0, Index nr, Index c0, Index nc);
/// Dense block over explicit index lists.
CMat eval_block(const KernelSpec& kernel, const std::vector<Index>& rows, const std::vector<Index>& cols);

struct Efie2dSystem {
  KernelSpec kernel;
  PointCloud cloud;
  double radius = 1.0;
  double k = 1.0;
};

/// Circular PEC contour discretized at `points_per_wavelength`.
Efie2dSystem build_efie2d_system(double radius, double k, double points_per_wavelength);

struct ExcitationSpec {
  std::vector<double> angles;  // incidence directions in the xy-plane, radians
  double amplitude = 1.0;
};

/// Incident plane-wave samples, one column per angle: amplitude * exp(i k d.r).
CMat plane_wave_rhs(const ExcitationSpec& excitation, const PointCloud& cloud, double k);

/// Far-field pattern of a 2D EFIE current: (i/4) sum_n I_n w_n exp(-i k rhat.r_n).
CVec efie2d_far_field(const PointCloud& cloud, const std::vector<double>& weights, double k,
                      const CVec& currents, const std::vector<double>& angles);

/// Far-field pattern of TM plane-wave scattering by a PEC circular cylinder
/// from the cylindrical-harmonic series, incidence along +x rotated by
/// `incidence`. Throws ConvergenceError if the series is not converged.
CVec cylinder_series_far_field(double radius, double k, const std::vector<double>& angles,
                               int truncation, double incidence = 0.0);

/// Minimum accepted series truncation: ceil(k a) + 15.
int min_series_truncation(double radius, double k);

/// 2D echo width sigma = (4/k)|F|^2 in dB relative to one wavelength.
double echo_width_db(Complex far_field, double k);

}  // namespace bflu
