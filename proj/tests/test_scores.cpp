#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "msfr/scores.hpp"

using msfr::Index;
using msfr::Matrix;
using msfr::Vector;

namespace {

msfr::Params small_params(msfr::Rng& rng, Index p = 6, Index q = 2, Index qs = 1) {
  msfr::ModelDims dims;
  dims.p = p;
  dims.q = q;
  dims.q_s = {qs};
  dims.n_s = {30};
  return oracle::random_params(dims, rng);
}

}  // namespace

TEST_CASE("thurstone_scores") {
  msfr::Rng rng(3);
  const auto params = small_params(rng);

  SECTION("zero data gives zero scores") {
    const auto sc = msfr::thurstone_scores({Matrix::Zero(6, 4)}, params);
    REQUIRE(sc.by_study[0].common.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(sc.by_study[0].specific.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("matches direct joint-Gaussian conditioning") {
    const Matrix x = oracle::random_matrix(6, 25, rng);
    const auto sc = msfr::thurstone_scores({x}, params);
    const auto om = oracle::condition_joint(Matrix::Identity(6, 6), params.phi,
                                            params.lambdas[0], params.psis[0]);
    REQUIRE(oracle::rel_err(sc.by_study[0].common, om.delta * x) < 1e-10);
    REQUIRE(oracle::rel_err(sc.by_study[0].specific, om.delta_s * x) < 1e-10);
  }

  SECTION("score covariance identity") {
    const Matrix x = oracle::random_matrix(6, 200, rng);
    const Matrix c_xx = x * x.transpose() / 200.0;
    const auto m = msfr::e_step_from_cxx(c_xx, params.phi, params.lambdas[0], params.psis[0]);
    const auto sc = msfr::thurstone_scores({x}, params);
    const Matrix sample_cov =
        sc.by_study[0].common * sc.by_study[0].common.transpose() / 200.0;
    const Matrix cap_delta = Matrix::Identity(2, 2) - m.delta * params.phi;
    REQUIRE(oracle::rel_err(sample_cov, m.e_ff - cap_delta) < 1e-10);
  }
}

TEST_CASE("bartlett_scores") {
  msfr::Rng rng(7);

  SECTION("orthonormal loadings with unit variances collapse to a projection") {
    msfr::ModelDims dims;
    dims.p = 5;
    dims.q = 2;
    dims.q_s = {0};
    dims.n_s = {10};
    auto params = msfr::Params::zeros(dims);
    const Matrix q = oracle::random_orthogonal(5, rng).leftCols(2);
    params.phi = q;
    params.psis[0] = Vector::Ones(5);
    const Matrix x = oracle::random_matrix(5, 10, rng);
    const auto sc = msfr::bartlett_scores({x}, params);
    REQUIRE(oracle::rel_err(sc.by_study[0].common, q.transpose() * x) < 1e-10);
  }

  SECTION("exact recovery on noise-free data") {
    msfr::ModelDims dims;
    dims.p = 8;
    dims.q = 2;
    dims.q_s = {1};
    dims.n_s = {12};
    const auto params = oracle::random_params(dims, rng);
    const Matrix g = oracle::random_matrix(3, 12, rng);
    Matrix l(8, 3);
    l.leftCols(2) = params.phi;
    l.rightCols(1) = params.lambdas[0];
    const Matrix x = l * g;
    const auto sc = msfr::bartlett_scores({x}, params);
    Matrix joint(3, 12);
    joint.topRows(2) = sc.by_study[0].common;
    joint.bottomRows(1) = sc.by_study[0].specific;
    REQUIRE(oracle::rel_err(joint, g) < 1e-10);
  }

  SECTION("rank-deficient stacked loadings are reported") {
    msfr::ModelDims dims;
    dims.p = 6;
    dims.q = 1;
    dims.q_s = {1};
    dims.n_s = {10};
    auto params = oracle::random_params(dims, rng);
    params.lambdas[0] = params.phi;  // duplicate column
    REQUIRE_THROWS_AS(msfr::bartlett_scores({Matrix::Ones(6, 4)}, params),
                      msfr::SingularSystem);
  }
}

TEST_CASE("identify") {
  msfr::Rng rng(11);

  SECTION("single common factor only gets a sign fix") {
    auto params = small_params(rng, 6, 1, 1);
    params.phi = -params.phi.cwiseAbs();
    const auto out = msfr::identify(params);
    REQUIRE(out.phi.isApprox(-params.phi));
  }

  SECTION("marginal covariance is preserved") {
    for (int rep = 0; rep < 5; ++rep) {
      msfr::ModelDims dims;
      dims.p = 8;
      dims.p_b = 1;
      dims.q = 3;
      dims.q_s = {2};
      dims.n_s = {20};
      const auto params = oracle::random_params(dims, rng);
      const auto out = msfr::identify(params);
      const auto before = msfr::marginal_covariance(params);
      const auto after = msfr::marginal_covariance(out);
      REQUIRE((before[0] - after[0]).norm() <= 1e-9 * before[0].norm());
      REQUIRE(out.beta.isApprox(params.beta));
      REQUIRE(out.psis[0].isApprox(params.psis[0]));
    }
  }

  SECTION("idempotent") {
    msfr::ModelDims dims;
    dims.p = 10;
    dims.q = 3;
    dims.q_s = {2};
    dims.n_s = {20};
    const auto params = oracle::random_params(dims, rng);
    const auto once = msfr::identify(params);
    const auto twice = msfr::identify(once);
    REQUIRE((once.phi - twice.phi).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE((once.lambdas[0] - twice.lambdas[0]).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("sign convention: largest magnitude entry positive") {
    msfr::ModelDims dims;
    dims.p = 7;
    dims.q = 2;
    dims.q_s = {1};
    dims.n_s = {20};
    const auto out = msfr::identify(oracle::random_params(dims, rng));
    for (Index j = 0; j < out.phi.cols(); ++j) {
      Index idx = 0;
      out.phi.col(j).cwiseAbs().maxCoeff(&idx);
      REQUIRE(out.phi(idx, j) > 0.0);
    }
  }
}
