#pragma once

// Personalized latent subspace: a k x d basis whose row span holds every
// latent code the avatar can produce, w = alpha * B.

#include <cstdint>

#include <Eigen/Core>

#include "avatar/generator.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Coefficient {
  Eigen::RowVectorXd alpha;
};

class PersonalBasis {
 public:
  PersonalBasis() = default;
  PersonalBasis(std::size_t k, std::size_t d);
  explicit PersonalBasis(const RowMatrixXd& rows);

  /// Gaussian rows orthonormalized once (requires k <= d).
  static PersonalBasis random_orthonormal(std::size_t k, std::size_t d, uint64_t seed);

  std::size_t k() const { return matrix_.dim(0); }
  std::size_t d() const { return matrix_.dim(1); }

  Eigen::Map<RowMatrixXd> rows() {
    return {matrix_.data(), static_cast<Eigen::Index>(k()), static_cast<Eigen::Index>(d())};
  }
  Eigen::Map<const RowMatrixXd> rows() const {
    return {matrix_.data(), static_cast<Eigen::Index>(k()), static_cast<Eigen::Index>(d())};
  }

  Tensor& tensor() { return matrix_; }
  const Tensor& tensor() const { return matrix_; }

 private:
  Tensor matrix_;  // {k, d}
};

/// w = alpha * B.
LatentCode compose_latent(const Coefficient& alpha, const PersonalBasis& basis);

/// G = B * B^T.
Eigen::MatrixXd gram(const PersonalBasis& basis);

/// ||G - diag(G)||_F^2 + ||diag(G) - 1||_2^2, i.e. ||B B^T - I||_F^2.
double ortho_penalty(const PersonalBasis& basis);

/// d(ortho_penalty)/dB = 4 (B B^T - I) B.
RowMatrixXd ortho_penalty_grad(const PersonalBasis& basis);

/// Largest |G_ij| with i != j; zero for k = 1.
double gram_offdiag_max(const PersonalBasis& basis);

/// Largest |G_ii - 1|.
double gram_diag_deviation(const PersonalBasis& basis);

/// Least-squares alpha minimizing ||alpha * B - w||. Throws NumericalRankError
/// when the rows of B are numerically dependent.
Coefficient project_to_subspace(const LatentCode& w, const PersonalBasis& basis, double rank_tolerance = 1e-10);

/// Replaces the rows of B by an orthonormal basis of their span (QR with
/// positive diagonal), preserving row order.
void orthonormalize_rows(PersonalBasis& basis);

}  // namespace avatar
