#pragma once

#include "skd/tensor.hpp"

#include <span>
#include <vector>

namespace skd {

// Singular values at or below cutoff * sigma_max are treated as zero.
inline constexpr double kPinvCutoff = 1e-10;

// Moore-Penrose pseudo-inverse through a thin SVD.
Matrix pinv(const Matrix& a, double cutoff = kPinvCutoff);

// Adjoint of A given the adjoint of A+ (both in Frobenius pairing):
//   dA+ = -A+ dA A+ + A+ A+^T dA^T (I - A A+) + (I - A+ A) dA^T A+^T A+
// Valid while rank(A) is locally constant.
Matrix pinv_backward(const Matrix& a, const Matrix& a_pinv, const Matrix& grad_pinv);

// Eigendecomposition of a real square matrix.
//
// Eigenvalues are ordered by (Re desc, |Im| desc) with each conjugate pair
// adjacent and its positive-imaginary member first. Columns of `vectors` (V)
// are unit-norm right eigenvectors, with the members of a conjugate pair
// exact conjugates of each other. `inverse` is U = V^-1; its rows are left
// eigenvectors scaled so that U V = I.
struct EigenDecomposition {
  ComplexVector values;
  ComplexMatrix vectors;
  ComplexMatrix inverse;
  // partner[i] is the index of the conjugate of eigenvalue i, or -1 when the
  // eigenvalue is real.
  std::vector<Index> partner;

  Index size() const noexcept { return values.size(); }
};

EigenDecomposition eig(const Matrix& a);

// Cutoff on |u_i v_i| (left/right eigenvectors both unit-normalized) below
// which an eigenvalue's adjoint is skipped.
inline constexpr double kEigenAdjointCutoff = 1e-10;

// grad_values[i] = dL/dRe(lambda_i) + i * dL/dIm(lambda_i) for a real scalar L.
// Returns the complex-valued sum over i of conj(grad_i) * u_i^T v_i^T / (u_i v_i)
// before projection to the real part; `skipped` counts eigenvalues whose
// normalizer fell below kEigenAdjointCutoff.
ComplexMatrix eigenvalue_adjoint_complex(const EigenDecomposition& d,
                                         std::span<const Complex> grad_values,
                                         std::size_t* skipped = nullptr);

// Real adjoint dL/dA. Skipped eigenvalues raise a warning.
Matrix eigenvalue_adjoint(const EigenDecomposition& d, std::span<const Complex> grad_values);

}  // namespace skd
