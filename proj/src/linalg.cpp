#include "skd/linalg.hpp"

#include "skd/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace skd {

Matrix pinv(const Matrix& a, double cutoff) {
  if (a.rows() < 1 || a.cols() < 1) throw ShapeError("pinv needs a non-empty 2-D matrix");
  require_finite(a, "pinv input");

  Eigen::JacobiSVD<Eigen::MatrixXd, Eigen::ColPivHouseholderQRPreconditioner> svd(
      a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  if (!sigma.allFinite() || !svd.matrixU().allFinite() || !svd.matrixV().allFinite()) {
    throw NumericError("SVD did not converge");
  }
  const double sigma_max = sigma.size() > 0 ? sigma(0) : 0.0;
  Vector inv = Vector::Zero(sigma.size());
  for (Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) > cutoff * sigma_max) inv(i) = 1.0 / sigma(i);
  }
  Matrix out = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return out;
}

Matrix pinv_backward(const Matrix& a, const Matrix& p, const Matrix& g) {
  if (p.rows() != a.cols() || p.cols() != a.rows() || g.rows() != p.rows() || g.cols() != p.cols()) {
    throw ShapeError("pinv_backward shape mismatch");
  }
  // -P^T G P^T
  Matrix grad = -(p.transpose() * g * p.transpose());
  // (I - A P) G^T P P^T, formed without the r x r projector.
  const Matrix gt_p_pt = g.transpose() * (p * p.transpose());
  grad += gt_p_pt - a * (p * gt_p_pt);
  // P^T P G^T (I - P A)
  const Matrix pt_p_gt = (p.transpose() * p) * g.transpose();
  grad += pt_p_gt - (pt_p_gt * p) * a;
  return grad;
}

namespace {

struct Group {
  Index first;   // index into the solver output
  bool pair;
  Complex value; // positive-imaginary member for pairs
};

// Rotate a column so that its largest-magnitude entry (lowest index on ties)
// is real and positive, then scale to unit norm.
void canonicalize(Eigen::Ref<ComplexVector> v) {
  Index best = 0;
  double best_mag = -1.0;
  for (Index i = 0; i < v.size(); ++i) {
    const double mag = std::abs(v(i));
    if (mag > best_mag * (1.0 + 1e-12)) {
      best = i;
      best_mag = mag;
    }
  }
  if (best_mag > 0.0) v *= std::conj(v(best)) / best_mag;
  const double n = v.norm();
  if (n > 0.0) v /= n;
}

}  // namespace

EigenDecomposition eig(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() < 1) {
    throw ShapeError("eig needs a non-empty square matrix, got " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()));
  }
  require_finite(a, "eig input");
  const Index k = a.rows();

  Eigen::EigenSolver<Eigen::MatrixXd> solver;
  solver.setMaxIterations(100 * k);
  solver.compute(Eigen::MatrixXd(a), true);
  if (solver.info() != Eigen::Success) {
    throw NumericError("QR iteration did not converge within " + std::to_string(100 * k) +
                       " iterations");
  }
  const ComplexVector raw_values = solver.eigenvalues();
  const Eigen::MatrixXcd raw_vectors = solver.eigenvectors();

  std::vector<Group> groups;
  for (Index i = 0; i < k;) {
    if (raw_values(i).imag() != 0.0 && i + 1 < k) {
      const Index pos = raw_values(i).imag() > 0.0 ? i : i + 1;
      groups.push_back({pos, true, raw_values(pos)});
      i += 2;
    } else {
      groups.push_back({i, false, Complex(raw_values(i).real(), 0.0)});
      i += 1;
    }
  }
  std::stable_sort(groups.begin(), groups.end(), [](const Group& x, const Group& y) {
    if (x.value.real() != y.value.real()) return x.value.real() > y.value.real();
    return std::abs(x.value.imag()) > std::abs(y.value.imag());
  });

  EigenDecomposition d;
  d.values.resize(k);
  d.vectors.resize(k, k);
  d.partner.assign(static_cast<std::size_t>(k), -1);
  Index col = 0;
  for (const auto& g : groups) {
    ComplexVector v = raw_vectors.col(g.first);
    if (!g.pair) {
      for (Index r = 0; r < k; ++r) v(r) = Complex(v(r).real(), 0.0);
    }
    canonicalize(v);
    d.values(col) = g.value;
    d.vectors.col(col) = v;
    if (g.pair) {
      d.values(col + 1) = std::conj(g.value);
      d.vectors.col(col + 1) = v.conjugate();
      d.partner[static_cast<std::size_t>(col)] = col + 1;
      d.partner[static_cast<std::size_t>(col + 1)] = col;
      col += 2;
    } else {
      col += 1;
    }
  }

  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(Eigen::MatrixXcd(d.vectors));
  d.inverse = lu.inverse();
  if (!d.inverse.allFinite()) throw NumericError("eigenvector matrix is singular");
  for (Index i = 0; i < k; ++i) {
    const Index p = d.partner[static_cast<std::size_t>(i)];
    if (p > i) {
      d.inverse.row(p) = d.inverse.row(i).conjugate();
    } else if (p < 0) {
      for (Index c = 0; c < k; ++c) d.inverse(i, c) = Complex(d.inverse(i, c).real(), 0.0);
    }
  }
  return d;
}

ComplexMatrix eigenvalue_adjoint_complex(const EigenDecomposition& d,
                                         std::span<const Complex> grad_values,
                                         std::size_t* skipped) {
  const Index k = d.size();
  if (static_cast<Index>(grad_values.size()) != k) throw ShapeError("eigenvalue gradient size mismatch");
  ComplexMatrix out = ComplexMatrix::Zero(k, k);
  std::size_t n_skipped = 0;
  for (Index i = 0; i < k; ++i) {
    const Complex g = grad_values[static_cast<std::size_t>(i)];
    if (g == Complex(0.0, 0.0)) continue;
    const Eigen::RowVectorXcd u = d.inverse.row(i);
    const double u_norm = u.norm();
    if (u_norm == 0.0) {
      ++n_skipped;
      continue;
    }
    const Eigen::RowVectorXcd u_unit = u / u_norm;
    const ComplexVector v = d.vectors.col(i);
    const Complex s = (u_unit * v)(0);
    if (std::abs(s) < kEigenAdjointCutoff) {
      ++n_skipped;
      continue;
    }
    // d(lambda_i) = u_i dA v_i / (u_i v_i)
    out.noalias() += (std::conj(g) / s) * (u_unit.transpose() * v.transpose());
  }
  if (skipped != nullptr) *skipped = n_skipped;
  return out;
}

Matrix eigenvalue_adjoint(const EigenDecomposition& d, std::span<const Complex> grad_values) {
  std::size_t skipped = 0;
  const ComplexMatrix c = eigenvalue_adjoint_complex(d, grad_values, &skipped);
  if (skipped > 0) {
    warn("eigenvalue adjoint skipped " + std::to_string(skipped) +
         " nearly defective eigenvalue(s)");
  }
  return c.real();
}

}  // namespace skd
