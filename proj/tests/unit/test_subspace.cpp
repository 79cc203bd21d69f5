#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "avatar/errors.hpp"
#include "avatar/subspace.hpp"
#include "support.hpp"

using namespace avatar;

namespace {

PersonalBasis random_basis(std::size_t k, std::size_t d, uint64_t seed) {
  const Tensor t = testsupport::random_tensor({k, d}, seed);
  return PersonalBasis(Eigen::Map<const RowMatrixXd>(t.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)));
}

Coefficient coeff(std::initializer_list<double> v) {
  Coefficient c;
  c.alpha = Eigen::RowVectorXd(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) c.alpha[i++] = x;
  return c;
}

}  // namespace

TEST_CASE("compose_latent: one-hot selects a row, zero gives zero") {
  const PersonalBasis b = random_basis(3, 5, 1);
  CHECK(compose_latent(coeff({0, 1, 0}), b).values == b.rows().row(1));
  CHECK(compose_latent(coeff({0, 0, 0}), b).values.isZero(0.0));
  CHECK_THROWS_AS(compose_latent(coeff({1, 2}), b), ShapeError);
}

TEST_CASE("compose_latent: linear in alpha") {
  const PersonalBasis b = random_basis(4, 9, 2);
  const Coefficient a1 = coeff({0.3, -1.2, 2.0, 0.5});
  const Coefficient a2 = coeff({-0.7, 0.1, 0.4, 1.5});
  Coefficient sum;
  sum.alpha = a1.alpha + a2.alpha;
  const Eigen::RowVectorXd lhs = compose_latent(sum, b).values;
  const Eigen::RowVectorXd rhs = compose_latent(a1, b).values + compose_latent(a2, b).values;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  Coefficient scaled;
  scaled.alpha = 3.5 * a1.alpha;
  CHECK((compose_latent(scaled, b).values - 3.5 * compose_latent(a1, b).values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gram: hand case, symmetry, orthonormal identity") {
  RowMatrixXd m(2, 2);
  m << 1, 0, 1, 0;
  const Eigen::MatrixXd g = gram(PersonalBasis(m));
  CHECK(g(0, 0) == 1.0);
  CHECK(g(0, 1) == 1.0);
  CHECK(g(1, 0) == 1.0);
  CHECK(g(1, 1) == 1.0);
  const Eigen::MatrixXd r = gram(random_basis(5, 7, 3));
  CHECK((r - r.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  const PersonalBasis o = PersonalBasis::random_orthonormal(6, 10, 4);
  CHECK((gram(o) - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("ortho_penalty: hand case and orthonormal zero") {
  RowMatrixXd m(2, 2);
  m << 1, 0, 1, 0;
  CHECK(ortho_penalty(PersonalBasis(m)) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(ortho_penalty(PersonalBasis::random_orthonormal(5, 8, 1)) < 1e-10);
}

TEST_CASE("ortho_penalty zero iff Gram is the identity") {
  // Perturbed orthonormal bases, both directions of the equivalence.
  for (double eps : {0.0, 1e-9, 1e-4, 1e-2, 0.3}) {
    PersonalBasis b = PersonalBasis::random_orthonormal(4, 6, 9);
    const Tensor noise = testsupport::random_tensor({4, 6}, 10);
    for (std::size_t i = 0; i < b.tensor().size(); ++i) b.tensor()[i] += eps * noise[i];
    const double p = ortho_penalty(b);
    const double dev = (gram(b) - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff();
    // max|G - I|^2 <= penalty <= k^2 max|G - I|^2
    const double tol = 1e-6;
    if (p < tol * tol) CHECK(dev < tol);
    if (dev < tol) CHECK(p <= 16.0 * tol * tol);
    if (eps == 0.0) CHECK(p < 1e-20);
    CHECK(std::abs(p - (gram(b) - Eigen::MatrixXd::Identity(4, 4)).squaredNorm()) < 1e-12);
  }
}

TEST_CASE("ortho_penalty gradient matches finite differences") {
  PersonalBasis b = random_basis(4, 6, 5);
  auto f = [&] { return ortho_penalty(b); };
  const auto num = testsupport::numeric_gradient(b.tensor().data(), b.tensor().size(), f);
  const RowMatrixXd g = ortho_penalty_grad(b);
  const std::vector<double> ana(g.data(), g.data() + g.size());
  CHECK(testsupport::relative_error(ana, num) < 1e-6);
}

TEST_CASE("gram diagnostics") {
  RowMatrixXd m(2, 3);
  m << 1, 0, 0, 0.2, 1.1, 0;
  const PersonalBasis b(m);
  CHECK(gram_offdiag_max(b) == doctest::Approx(0.2));
  CHECK(gram_diag_deviation(b) == doctest::Approx(1.25 - 1.0));
  CHECK(gram_offdiag_max(PersonalBasis::random_orthonormal(1, 4, 1)) == 0.0);
}

TEST_CASE("project_to_subspace: round trip, null component, identity basis") {
  const PersonalBasis b = PersonalBasis::random_orthonormal(5, 12, 7);
  const Coefficient a = coeff({0.2, -0.4, 1.3, 0.0, 2.2});
  const Coefficient back = project_to_subspace(compose_latent(a, b), b);
  CHECK((back.alpha - a.alpha).cwiseAbs().maxCoeff() < 1e-8);

  // Normal-equations oracle on a non-orthonormal basis.
  const PersonalBasis g = random_basis(4, 9, 8);
  LatentCode w;
  w.values = Eigen::RowVectorXd::LinSpaced(9, -1.0, 1.0);
  const Eigen::MatrixXd bm = g.rows();
  const Eigen::RowVectorXd oracle = (bm * bm.transpose()).ldlt().solve(bm * w.values.transpose()).transpose();
  CHECK((project_to_subspace(w, g).alpha - oracle).cwiseAbs().maxCoeff() < 1e-8);

  // Residual is orthogonal to every row.
  const Eigen::RowVectorXd resid = w.values - compose_latent(project_to_subspace(w, g), g).values;
  CHECK((bm * resid.transpose()).cwiseAbs().maxCoeff() < 1e-8);

  // A latent orthogonal to the rows projects to zero.
  const Eigen::MatrixXd full = PersonalBasis::random_orthonormal(6, 6, 3).rows();
  const PersonalBasis sub(full.topRows(3));
  LatentCode perp;
  perp.values = full.row(4);
  CHECK(project_to_subspace(perp, sub).alpha.cwiseAbs().maxCoeff() < 1e-8);

  const PersonalBasis id(RowMatrixXd::Identity(4, 4));
  LatentCode v;
  v.values = Eigen::RowVectorXd::LinSpaced(4, 0.5, 2.0);
  CHECK((project_to_subspace(v, id).alpha - v.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("project_to_subspace: rank-deficient basis reports rank and tolerance") {
  RowMatrixXd m(2, 3);
  m << 1, 2, 3, 2, 4, 6;
  LatentCode w;
  w.values = Eigen::RowVectorXd::Ones(3);
  try {
    project_to_subspace(w, PersonalBasis(m));
    FAIL("expected NumericalRankError");
  } catch (const NumericalRankError& e) {
    CHECK(e.rank() == 1);
    CHECK(e.tolerance() > 0.0);
  }
}

TEST_CASE("orthonormal bases are isometries onto the subspace") {
  const PersonalBasis b = PersonalBasis::random_orthonormal(6, 20, 12);
  const Coefficient a = coeff({1.0, -2.0, 0.5, 0.25, 3.0, -0.75});
  CHECK(std::abs(compose_latent(a, b).values.norm() - a.alpha.norm()) < 1e-8);
}

TEST_CASE("orthonormalize_rows preserves the span and row order") {
  PersonalBasis b = random_basis(3, 5, 22);
  const RowMatrixXd before = b.rows();
  orthonormalize_rows(b);
  CHECK((gram(b) - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
  // First row keeps its direction.
  CHECK((b.rows().row(0) - before.row(0).normalized()).cwiseAbs().maxCoeff() < 1e-12);
  // Old rows are reproduced from the new ones.
  const RowMatrixXd coeffs = before * b.rows().transpose();
  CHECK((coeffs * b.rows() - before).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("random_orthonormal requires k <= d") {
  CHECK_THROWS(PersonalBasis::random_orthonormal(5, 4, 1));
}
