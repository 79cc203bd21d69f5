#include "avatar/subspace.hpp"

#include <cmath>
#include <random>

#include <Eigen/QR>

#include "avatar/errors.hpp"

namespace avatar {

PersonalBasis::PersonalBasis(std::size_t k, std::size_t d) : matrix_({k, d}) {
  if (k == 0 || d == 0) throw ShapeError("basis: k and d must be positive");
}

PersonalBasis::PersonalBasis(const RowMatrixXd& rows)
    : PersonalBasis(static_cast<std::size_t>(rows.rows()), static_cast<std::size_t>(rows.cols())) {
  this->rows() = rows;
}

PersonalBasis PersonalBasis::random_orthonormal(std::size_t k, std::size_t d, uint64_t seed) {
  if (k > d) throw ShapeError("basis: cannot orthonormalize " + std::to_string(k) + " rows in dimension " + std::to_string(d));
  PersonalBasis basis(k, d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : basis.matrix_.storage()) v = dist(rng);
  orthonormalize_rows(basis);
  return basis;
}

LatentCode compose_latent(const Coefficient& alpha, const PersonalBasis& basis) {
  if (static_cast<std::size_t>(alpha.alpha.size()) != basis.k()) {
    throw ShapeError("compose_latent: coefficient has length " + std::to_string(alpha.alpha.size()) +
                     " but the basis has k = " + std::to_string(basis.k()));
  }
  return LatentCode{alpha.alpha * basis.rows()};
}

Eigen::MatrixXd gram(const PersonalBasis& basis) {
  const auto b = basis.rows();
  return b * b.transpose();
}

double ortho_penalty(const PersonalBasis& basis) {
  const Eigen::MatrixXd g = gram(basis);
  double off = 0.0;
  double diag = 0.0;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      if (i == j) {
        diag += (g(i, i) - 1.0) * (g(i, i) - 1.0);
      } else {
        off += g(i, j) * g(i, j);
      }
    }
  }
  return off + diag;
}

RowMatrixXd ortho_penalty_grad(const PersonalBasis& basis) {
  Eigen::MatrixXd g = gram(basis);
  g.diagonal().array() -= 1.0;
  return 4.0 * g * basis.rows();
}

double gram_offdiag_max(const PersonalBasis& basis) {
  const Eigen::MatrixXd g = gram(basis);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      if (i != j) worst = std::max(worst, std::abs(g(i, j)));
    }
  }
  return worst;
}

double gram_diag_deviation(const PersonalBasis& basis) {
  const Eigen::MatrixXd g = gram(basis);
  return (g.diagonal().array() - 1.0).abs().maxCoeff();
}

Coefficient project_to_subspace(const LatentCode& w, const PersonalBasis& basis, double rank_tolerance) {
  if (static_cast<std::size_t>(w.values.size()) != basis.d()) {
    throw ShapeError("project_to_subspace: latent has dimension " + std::to_string(w.values.size()) +
                     ", basis has d = " + std::to_string(basis.d()));
  }
  // alpha * B = w  <=>  B^T alpha^T = w^T, solved by column-pivoted QR.
  const Eigen::MatrixXd bt = basis.rows().transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(bt);
  qr.setThreshold(rank_tolerance);
  const long rank = static_cast<long>(qr.rank());
  if (rank < static_cast<long>(basis.k())) {
    throw NumericalRankError("project_to_subspace: basis has numerical rank " + std::to_string(rank) + " < k = " +
                                 std::to_string(basis.k()) + " (tolerance " + std::to_string(rank_tolerance) + ")",
                             rank, rank_tolerance);
  }
  const Eigen::VectorXd alpha = qr.solve(w.values.transpose());
  return Coefficient{alpha.transpose()};
}

void orthonormalize_rows(PersonalBasis& basis) {
  const Eigen::MatrixXd bt = basis.rows().transpose();  // d x k
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(bt);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(bt.rows(), bt.cols());
  const Eigen::MatrixXd r = qr.matrixQR().topRows(bt.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < q.cols(); ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  basis.rows() = q.transpose();
}

}  // namespace avatar
