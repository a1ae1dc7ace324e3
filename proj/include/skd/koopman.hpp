#pragma once

#include "skd/linalg.hpp"
#include "skd/rng.hpp"
#include "skd/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace skd {

// Encoded latent sequences, Z with shape b x (t+1) x k.
//
// The past view Zp stacks frames 0..t-1 of every sample and the future view
// Zf frames 1..t, both as (b*t) x k with row i*t + j taken from sample i.
class LatentBatch {
 public:
  LatentBatch() = default;
  explicit LatentBatch(Tensor z);
  // Frame matrix with rows ordered sample-major, frame-minor.
  LatentBatch(const Matrix& frames, std::size_t samples);

  const Tensor& tensor() const noexcept { return z_; }
  std::size_t samples() const noexcept { return b_; }
  std::size_t steps() const noexcept { return t_; }  // t; each sample has t+1 frames
  std::size_t frames_per_sample() const noexcept { return t_ + 1; }
  std::size_t dim() const noexcept { return k_; }

  Eigen::Map<const Matrix> frames() const { return z_.as_matrix(); }
  Matrix past() const;
  Matrix future() const;

 private:
  Tensor z_;
  std::size_t b_ = 0, t_ = 0, k_ = 0;
};

// Row indices into the (b*(t+1)) x k frame matrix that form Zp and Zf.
std::vector<Index> past_rows(std::size_t samples, std::size_t steps);
std::vector<Index> future_rows(std::size_t samples, std::size_t steps);

// The operator C with Zp C ~ Zf and its eigendecomposition.
struct KoopmanSpectrum {
  Matrix c;
  EigenDecomposition eig;

  Index dim() const noexcept { return c.rows(); }
  const ComplexVector& values() const noexcept { return eig.values; }
  const ComplexMatrix& vectors() const noexcept { return eig.vectors; }
  const ComplexMatrix& inverse() const noexcept { return eig.inverse; }
};

KoopmanSpectrum spectrum_of(const Matrix& c);

// Least-squares operator C = pinv(Zp) Zf and its spectrum.
KoopmanSpectrum estimate_operator(const LatentBatch& z);
// Same fit on explicit past/future matrices.
Matrix fit_operator(const Matrix& past, const Matrix& future);

// z^T C^r by repeated vector-matrix products.
Vector predict(const Vector& z, const KoopmanSpectrum& spectrum, int steps);

// ---------------------------------------------------------------------------
// Spectral loss and partitioning.

enum class DynamicLossMode {
  threshold,           // xi(|lambda|, eps): |lambda| above eps is penalized
  measure_preserving,  // |lambda| pulled to 1 while kept outside a delta-ball at 1
  growing,             // only the delta-ball exclusion; moduli may exceed 1
  none,                // no dynamic penalty (static-only ablation)
};

enum class StaticSelection {
  distance_to_one,  // closest to 1+0i first
  modulus,          // largest modulus first
};

struct SpectralPartition {
  std::vector<std::size_t> stat;
  std::vector<std::size_t> dyn;
  std::map<std::string, std::vector<std::size_t>> factors;
  std::size_t k_s = 0;  // requested static count; stat.size() may exceed it by one
  std::size_t k_d() const noexcept { return dyn.size(); }
};

// Spectral groups: a real eigenvalue alone, or a conjugate pair (positive
// imaginary member first). Adjacent exact conjugates are treated as a pair.
std::vector<std::vector<std::size_t>> spectral_groups(std::span<const Complex> values);

// Greedy group-respecting static selection. Groups are ranked by the chosen
// criterion with ties broken by (Re desc, Im desc) and taken until at least
// k_s eigenvalues are covered. Returns index sets sorted in rank order.
SpectralPartition select_static(std::span<const Complex> values, std::size_t k_s,
                                StaticSelection selection = StaticSelection::distance_to_one);

SpectralPartition partition_spectrum(const KoopmanSpectrum& spectrum, std::size_t k_s,
                                     StaticSelection selection = StaticSelection::distance_to_one);

struct SpectralLossOptions {
  std::size_t k_s = 8;
  double epsilon = 0.5;
  DynamicLossMode mode = DynamicLossMode::threshold;
  double delta = 0.1;
  StaticSelection selection = StaticSelection::distance_to_one;
};

struct SpectralLossValue {
  double stat = 0.0;
  double dyn = 0.0;
  double eig() const noexcept { return stat + dyn; }
  // Complex gradients dL/dRe + i dL/dIm per eigenvalue for each term.
  std::vector<Complex> grad_stat;
  std::vector<Complex> grad_dyn;
  SpectralPartition partition;
};

// xi(x, eps) = x if x > eps else 0.
double dynamic_threshold(double modulus, double epsilon) noexcept;

// L_stat averages |lambda - 1|^2 over the static set and L_dyn the mode's
// penalty over the dynamic set.
SpectralLossValue spectral_loss(std::span<const Complex> values, const SpectralLossOptions& options);
SpectralLossValue spectral_loss(std::span<const Complex> values, const SpectralPartition& partition,
                                const SpectralLossOptions& options);

// ---------------------------------------------------------------------------
// Eigenbasis coordinates and manipulation.

// Zbar with zbar^T = z^T V per frame; stored as (b*(t+1)) x k rows.
struct ProjectionCoefficients {
  ComplexMatrix values;
  std::size_t samples = 0;
  std::size_t frames_per_sample = 0;
  // Conjugate partner per eigen index (-1 for real), copied from the spectrum.
  std::vector<Index> partner;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(values.cols()); }
  auto sample_rows(std::size_t i) { return values.middleRows(Index(i * frames_per_sample), Index(frames_per_sample)); }
  auto sample_rows(std::size_t i) const {
    return values.middleRows(Index(i * frames_per_sample), Index(frames_per_sample));
  }
};

ProjectionCoefficients project(const LatentBatch& z, const KoopmanSpectrum& spectrum);

// Largest |Im| observed when mapping coefficients back through U.
inline constexpr double kImaginaryTolerance = 1e-8;
inline constexpr double kImaginaryIntegrityLimit = 1e-6;

struct Reconstruction {
  LatentBatch z;
  double max_imaginary = 0.0;
};

// Z = Re(Zbar U). Throws IntegrityError when the discarded imaginary part
// exceeds kImaginaryIntegrityLimit, and warns above kImaginaryTolerance.
Reconstruction reconstruct(const ProjectionCoefficients& zbar, const KoopmanSpectrum& spectrum);

// True when every index's conjugate partner is also in the set.
bool conjugate_closed(std::span<const std::size_t> indices, std::span<const Index> partner);

// Exchanges the coefficients at `indices` between samples u and v.
ProjectionCoefficients swap_factors(const ProjectionCoefficients& zbar, std::size_t u, std::size_t v,
                                    std::span<const std::size_t> indices);

// Sample i receives sample donors[i]'s coefficients at `indices`.
ProjectionCoefficients transfer_factors(const ProjectionCoefficients& zbar,
                                        std::span<const std::size_t> donors,
                                        std::span<const std::size_t> indices);

// Every sample receives sum_j weights[j] Zbar[j, :, indices].
ProjectionCoefficients sample_convex(const ProjectionCoefficients& zbar, std::span<const std::size_t> indices,
                                     std::span<const double> weights);
// Sample i receives sum_j weights(i, j) Zbar[j, :, indices]; each row a simplex point.
ProjectionCoefficients sample_convex(const ProjectionCoefficients& zbar, std::span<const std::size_t> indices,
                                     const Matrix& weights);
// Draws one uniform simplex weight vector from `seed` and applies it.
ProjectionCoefficients sample_convex(const ProjectionCoefficients& zbar, std::span<const std::size_t> indices,
                                     std::uint64_t seed);

// Re(Z V[:, I] U[I, :]): the latent frames restricted to an eigen subspace.
Matrix project_subspace(const LatentBatch& z, const KoopmanSpectrum& spectrum,
                        std::span<const std::size_t> indices);

}  // namespace skd
