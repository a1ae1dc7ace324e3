#include "skd/koopman.hpp"

#include "skd/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace skd {

LatentBatch::LatentBatch(Tensor z) : z_(std::move(z)) {
  if (z_.rank() != 3) throw ShapeError("latent batch must be rank 3 (b, t+1, k)");
  b_ = z_.extent(0);
  if (z_.extent(1) < 2) throw ShapeError("latent batch needs at least two frames per sample");
  t_ = z_.extent(1) - 1;
  k_ = z_.extent(2);
  if (b_ < 1) throw ShapeError("latent batch needs at least one sample");
  if (k_ < 2) throw ShapeError("latent dimension must be at least 2");
}

LatentBatch::LatentBatch(const Matrix& frames, std::size_t samples) {
  if (samples == 0 || frames.rows() % static_cast<Index>(samples) != 0) {
    throw ShapeError("frame count is not a multiple of the sample count");
  }
  *this = LatentBatch(Tensor::from_matrix(
      frames, {samples, static_cast<std::size_t>(frames.rows()) / samples, static_cast<std::size_t>(frames.cols())}));
}

std::vector<Index> past_rows(std::size_t samples, std::size_t steps) {
  std::vector<Index> rows;
  rows.reserve(samples * steps);
  for (std::size_t i = 0; i < samples; ++i) {
    for (std::size_t j = 0; j < steps; ++j) rows.push_back(Index(i * (steps + 1) + j));
  }
  return rows;
}

std::vector<Index> future_rows(std::size_t samples, std::size_t steps) {
  auto rows = past_rows(samples, steps);
  for (auto& r : rows) r += 1;
  return rows;
}

namespace {

Matrix gather(const Eigen::Map<const Matrix>& m, const std::vector<Index>& rows) {
  Matrix out(Index(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(Index(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

Matrix LatentBatch::past() const { return gather(frames(), past_rows(b_, t_)); }
Matrix LatentBatch::future() const { return gather(frames(), future_rows(b_, t_)); }

KoopmanSpectrum spectrum_of(const Matrix& c) { return KoopmanSpectrum{c, eig(c)}; }

Matrix fit_operator(const Matrix& past, const Matrix& future) {
  if (past.rows() != future.rows() || past.cols() != future.cols()) {
    throw ShapeError("past and future views differ in shape");
  }
  if (past.isZero(0.0)) throw NumericError("past view is all zero; operator is undefined");
  if (past.rows() < past.cols()) {
    warn("operator fit is under-determined (" + std::to_string(past.rows()) + " rows for k = " +
         std::to_string(past.cols()) + "); using the minimum-norm solution");
  }
  return pinv(past) * future;
}

KoopmanSpectrum estimate_operator(const LatentBatch& z) { return spectrum_of(fit_operator(z.past(), z.future())); }

Vector predict(const Vector& z, const KoopmanSpectrum& spectrum, int steps) {
  if (steps < 1) throw PreconditionError("prediction horizon must be at least 1");
  if (z.size() != spectrum.dim()) throw ShapeError("latent vector does not match operator size");
  RowVector row = z.transpose();
  for (int r = 0; r < steps; ++r) row = row * spectrum.c;
  return row.transpose();
}

std::vector<std::vector<std::size_t>> spectral_groups(std::span<const Complex> values) {
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < values.size();) {
    if (values[i].imag() > 0.0 && i + 1 < values.size() && values[i + 1] == std::conj(values[i])) {
      groups.push_back({i, i + 1});
      i += 2;
    } else {
      groups.push_back({i});
      i += 1;
    }
  }
  return groups;
}

SpectralPartition select_static(std::span<const Complex> values, std::size_t k_s, StaticSelection selection) {
  const std::size_t k = values.size();
  if (k_s < 1 || k_s >= k) {
    throw ConfigError("k_s", "static count must satisfy 1 <= k_s < k (k_s = " + std::to_string(k_s) +
                                 ", k = " + std::to_string(k) + ")");
  }
  auto groups = spectral_groups(values);
  auto key = [&](const std::vector<std::size_t>& g) {
    const Complex l = values[g.front()];
    return selection == StaticSelection::distance_to_one ? std::abs(l - Complex(1.0, 0.0)) : -std::abs(l);
  };
  std::stable_sort(groups.begin(), groups.end(), [&](const auto& a, const auto& b) {
    const double ka = key(a), kb = key(b);
    if (ka != kb) return ka < kb;
    const Complex la = values[a.front()], lb = values[b.front()];
    if (la.real() != lb.real()) return la.real() > lb.real();
    return la.imag() > lb.imag();
  });
  SpectralPartition p;
  p.k_s = k_s;
  for (const auto& g : groups) {
    auto& target = p.stat.size() < k_s ? p.stat : p.dyn;
    target.insert(target.end(), g.begin(), g.end());
  }
  return p;
}

SpectralPartition partition_spectrum(const KoopmanSpectrum& spectrum, std::size_t k_s, StaticSelection selection) {
  const auto& v = spectrum.values();
  auto p = select_static(std::span<const Complex>(v.data(), std::size_t(v.size())), k_s, selection);
  if (p.stat.size() > k_s) {
    warn("static set holds " + std::to_string(p.stat.size()) + " eigenvalues for k_s = " + std::to_string(k_s) +
         " (a conjugate pair straddles the cut)");
  }
  return p;
}

double dynamic_threshold(double modulus, double epsilon) noexcept { return modulus > epsilon ? modulus : 0.0; }

SpectralLossValue spectral_loss(std::span<const Complex> values, const SpectralLossOptions& options) {
  return spectral_loss(values, select_static(values, options.k_s, options.selection), options);
}

SpectralLossValue spectral_loss(std::span<const Complex> values, const SpectralPartition& partition,
                                const SpectralLossOptions& options) {
  if (options.mode == DynamicLossMode::threshold && !(options.epsilon > 0.0 && options.epsilon < 1.0)) {
    throw ConfigError("epsilon", "dynamic threshold must lie in (0, 1)");
  }
  if ((options.mode == DynamicLossMode::measure_preserving || options.mode == DynamicLossMode::growing) &&
      !(options.delta > 0.0)) {
    throw ConfigError("delta", "exclusion radius must be positive");
  }
  if (partition.stat.empty()) throw ConfigError("k_s", "static set is empty");

  SpectralLossValue out;
  out.partition = partition;
  out.grad_stat.assign(values.size(), Complex(0.0, 0.0));
  out.grad_dyn.assign(values.size(), Complex(0.0, 0.0));
  const Complex one(1.0, 0.0);

  const double n_s = static_cast<double>(partition.stat.size());
  for (auto i : partition.stat) {
    const Complex d = values[i] - one;
    out.stat += std::norm(d) / n_s;
    out.grad_stat[i] = 2.0 * d / n_s;
  }

  if (partition.dyn.empty() || options.mode == DynamicLossMode::none) return out;
  const double n_d = static_cast<double>(partition.dyn.size());
  for (auto i : partition.dyn) {
    const Complex l = values[i];
    const double r = std::abs(l);
    Complex g(0.0, 0.0);
    double term = 0.0;
    if (options.mode == DynamicLossMode::threshold) {
      term = dynamic_threshold(r, options.epsilon);
      if (r > options.epsilon) g = l / r;
    } else {
      const Complex d = l - one;
      const double dist = std::abs(d);
      if (dist < options.delta) {
        term += options.delta - dist;
        if (dist > 0.0) g -= d / dist;
      }
      if (options.mode == DynamicLossMode::measure_preserving) {
        term += (r - 1.0) * (r - 1.0);
        if (r > 0.0) g += 2.0 * (r - 1.0) * l / r;
      }
    }
    out.dyn += term / n_d;
    out.grad_dyn[i] = g / n_d;
  }
  return out;
}

ProjectionCoefficients project(const LatentBatch& z, const KoopmanSpectrum& spectrum) {
  if (Index(z.dim()) != spectrum.dim()) throw ShapeError("latent dimension does not match spectrum");
  ProjectionCoefficients out;
  out.values = z.frames().cast<Complex>() * spectrum.vectors();
  out.samples = z.samples();
  out.frames_per_sample = z.frames_per_sample();
  out.partner = spectrum.eig.partner;
  return out;
}

Reconstruction reconstruct(const ProjectionCoefficients& zbar, const KoopmanSpectrum& spectrum) {
  if (Index(zbar.dim()) != spectrum.dim()) throw ShapeError("coefficient dimension does not match spectrum");
  const ComplexMatrix w = zbar.values * spectrum.inverse();
  const double max_imag = w.size() > 0 ? w.imag().cwiseAbs().maxCoeff() : 0.0;
  if (max_imag > kImaginaryIntegrityLimit) {
    throw IntegrityError("reconstruction has imaginary residue " + std::to_string(max_imag) +
                         "; conjugate symmetry was broken upstream");
  }
  if (max_imag > kImaginaryTolerance) {
    warn("reconstruction imaginary residue " + std::to_string(max_imag) + " exceeds 1e-8");
  }
  Matrix real = w.real();
  return Reconstruction{LatentBatch(real, zbar.samples), max_imag};
}

bool conjugate_closed(std::span<const std::size_t> indices, std::span<const Index> partner) {
  for (auto i : indices) {
    if (i >= partner.size()) return false;
    const Index p = partner[i];
    if (p >= 0 && std::find(indices.begin(), indices.end(), std::size_t(p)) == indices.end()) return false;
  }
  return true;
}

namespace {

void check_indices(const ProjectionCoefficients& zbar, std::span<const std::size_t> indices) {
  for (auto i : indices) {
    if (i >= zbar.dim()) throw PreconditionError("eigen index " + std::to_string(i) + " out of range");
  }
  if (!conjugate_closed(indices, zbar.partner)) {
    throw PreconditionError("index set is not closed under conjugate pairing");
  }
}

}  // namespace

ProjectionCoefficients swap_factors(const ProjectionCoefficients& zbar, std::size_t u, std::size_t v,
                                    std::span<const std::size_t> indices) {
  if (u >= zbar.samples || v >= zbar.samples) throw PreconditionError("sample index out of range");
  if (u == v) throw PreconditionError("swap needs two distinct samples");
  std::vector<std::size_t> donors(zbar.samples);
  std::iota(donors.begin(), donors.end(), std::size_t{0});
  donors[u] = v;
  donors[v] = u;
  return transfer_factors(zbar, donors, indices);
}

ProjectionCoefficients transfer_factors(const ProjectionCoefficients& zbar, std::span<const std::size_t> donors,
                                        std::span<const std::size_t> indices) {
  check_indices(zbar, indices);
  if (donors.size() != zbar.samples) throw PreconditionError("donor list must name one donor per sample");
  ProjectionCoefficients out = zbar;
  for (std::size_t i = 0; i < zbar.samples; ++i) {
    const std::size_t d = donors[i];
    if (d >= zbar.samples) throw PreconditionError("donor index out of range");
    if (d == i) continue;
    for (auto c : indices) out.sample_rows(i).col(Index(c)) = zbar.sample_rows(d).col(Index(c));
  }
  return out;
}

ProjectionCoefficients sample_convex(const ProjectionCoefficients& zbar, std::span<const std::size_t> indices,
                                     std::span<const double> weights) {
  Matrix w(Index(zbar.samples), Index(weights.size()));
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < w.cols(); ++j) w(i, j) = weights[std::size_t(j)];
  }
  return sample_convex(zbar, indices, w);
}

ProjectionCoefficients sample_convex(const ProjectionCoefficients& zbar, std::span<const std::size_t> indices,
                                     const Matrix& weights) {
  check_indices(zbar, indices);
  if (weights.rows() != Index(zbar.samples) || weights.cols() != Index(zbar.samples)) {
    throw PreconditionError("convex weights must have one entry per sample");
  }
  for (Index i = 0; i < weights.rows(); ++i) {
    if (!weights.row(i).allFinite() || weights.row(i).minCoeff() < 0.0 ||
        std::abs(weights.row(i).sum() - 1.0) > 1e-9) {
      throw PreconditionError("convex weights must be non-negative and sum to one");
    }
  }
  ProjectionCoefficients out = zbar;
  const Index f = Index(zbar.frames_per_sample);
  for (auto c : indices) {
    // Column c reshaped to samples x frames, mixed across samples.
    ComplexMatrix col(Index(zbar.samples), f);
    for (std::size_t s = 0; s < zbar.samples; ++s) col.row(Index(s)) = zbar.sample_rows(s).col(Index(c)).transpose();
    const ComplexMatrix mixed = weights.cast<Complex>() * col;
    for (std::size_t s = 0; s < zbar.samples; ++s) out.sample_rows(s).col(Index(c)) = mixed.row(Index(s)).transpose();
  }
  return out;
}

ProjectionCoefficients sample_convex(const ProjectionCoefficients& zbar, std::span<const std::size_t> indices,
                                     std::uint64_t seed) {
  Rng rng(seed);
  const auto w = rng.simplex(zbar.samples);
  return sample_convex(zbar, indices, std::span<const double>(w));
}

Matrix project_subspace(const LatentBatch& z, const KoopmanSpectrum& spectrum, std::span<const std::size_t> indices) {
  const Index k = spectrum.dim();
  ComplexMatrix v_sub(k, Index(indices.size()));
  ComplexMatrix u_sub(Index(indices.size()), k);
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (Index(indices[j]) >= k) throw PreconditionError("eigen index out of range");
    v_sub.col(Index(j)) = spectrum.vectors().col(Index(indices[j]));
    u_sub.row(Index(j)) = spectrum.inverse().row(Index(indices[j]));
  }
  return ((z.frames().cast<Complex>() * v_sub) * u_sub).real();
}

}  // namespace skd
