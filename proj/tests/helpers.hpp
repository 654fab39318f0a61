#pragma once

// Test-side oracles and generators. Everything here recomputes model
// quantities along an independent route (dense joint-Gaussian algebra,
// per-subject sums) so the library implementations have something honest
// to be checked against.

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "msfr/msfr.hpp"

namespace oracle {

using msfr::Index;
using msfr::Matrix;
using msfr::Vector;

inline Matrix random_matrix(Index rows, Index cols, msfr::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = gauss(rng);
  return m;
}

inline Matrix random_orthogonal(Index n, msfr::Rng& rng) {
  const Matrix a = random_matrix(n, n, rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  // fix the sign convention so Q is a deterministic function of A
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

inline Vector random_psi(Index p, msfr::Rng& rng, double lo = 0.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(p);
  for (Index i = 0; i < p; ++i) v(i) = u(rng);
  return v;
}

struct JointMoments {
  Matrix e_ff, e_ll, e_xf, e_xl, e_fl, delta, delta_s;
};

/// Conditional moments of (f, l) given x, obtained by conditioning the
/// dense (p+q+q_s)-dimensional joint Gaussian directly.
inline JointMoments condition_joint(const Matrix& c_xx, const Matrix& phi, const Matrix& lambda,
                                    const Vector& psi) {
  const Index p = psi.size();
  const Index q = phi.cols();
  const Index qs = lambda.cols();

  Matrix sigma = phi * phi.transpose() + lambda * lambda.transpose();
  sigma += Matrix(psi.asDiagonal());
  const Matrix sigma_inv = sigma.inverse();

  Matrix cross(p, q + qs);  // Cov(x, (f,l))
  cross.leftCols(q) = phi;
  cross.rightCols(qs) = lambda;

  const Matrix gain = cross.transpose() * sigma_inv;              // (q+qs) x p
  const Matrix cond_cov = Matrix::Identity(q + qs, q + qs) - gain * cross;

  JointMoments m;
  m.delta = gain.topRows(q);
  m.delta_s = gain.bottomRows(qs);
  const Matrix second = gain * c_xx * gain.transpose() + cond_cov;
  m.e_ff = second.topLeftCorner(q, q);
  m.e_ll = second.bottomRightCorner(qs, qs);
  m.e_fl = second.topRightCorner(q, qs);
  m.e_xf = c_xx * m.delta.transpose();
  m.e_xl = c_xx * m.delta_s.transpose();
  return m;
}

/// Expected complete-data log-likelihood as an explicit function of a new
/// parameter value, with the posterior taken at `old_params` (the additive
/// constant is omitted, matching the library). Works per subject, so beta
/// enters explicitly and its block gradient is meaningful.
inline double q_expanded(const msfr::MultiStudyData& data, const msfr::Params& old_params,
                         const msfr::Params& new_params) {
  double total = 0.0;
  const std::vector<Matrix> xt_old = msfr::residualize(data, old_params.beta);
  for (Index s = 0; s < data.n_studies(); ++s) {
    const auto su = static_cast<std::size_t>(s);
    const Index n = data.n_s(s);
    const Index q = old_params.q();
    const Index qs = old_params.q_s(s);

    const Matrix c_xx = xt_old[su] * xt_old[su].transpose() / static_cast<double>(n);
    const JointMoments om =
        condition_joint(c_xx, old_params.phi, old_params.lambdas[su], old_params.psis[su]);

    Matrix gain(q + qs, data.p());
    gain.topRows(q) = om.delta;
    gain.bottomRows(qs) = om.delta_s;
    Matrix cross(data.p(), q + qs);
    cross.leftCols(q) = old_params.phi;
    cross.rightCols(qs) = old_params.lambdas[su];
    const Matrix cond_cov = Matrix::Identity(q + qs, q + qs) - gain * cross;
    const Matrix means = gain * xt_old[su];  // posterior means per subject

    Matrix l_new(data.p(), q + qs);
    l_new.leftCols(q) = new_params.phi;
    l_new.rightCols(qs) = new_params.lambdas[su];
    const Vector w = new_params.psis[su].cwiseInverse();

    Matrix resid = data.studies[su].X;
    if (new_params.beta.cols() > 0) resid -= new_params.beta * data.studies[su].B;
    resid -= l_new * means;

    double quad = (resid.cwiseProduct(w.asDiagonal() * resid)).sum();
    quad += static_cast<double>(n) *
            ((l_new.transpose() * w.asDiagonal() * l_new).cwiseProduct(cond_cov)).sum();
    total += -0.5 * static_cast<double>(n) * new_params.psis[su].array().log().sum() - 0.5 * quad;
  }
  return total;
}

/// Small synthetic instance for engine-level tests: random sparse-ish truth
/// and data drawn through the library generators at reduced size.
struct Instance {
  msfr::ScenarioSpec spec;
  msfr::Params truth;
  msfr::MultiStudyData data;
};

inline Instance make_instance(int scenario, double ns_scale, std::uint64_t seed) {
  Instance inst;
  inst.spec = msfr::scenario_preset(scenario, ns_scale, 1, seed);
  inst.truth = msfr::generate_truth(inst.spec, seed);
  inst.data = msfr::generate_data(inst.truth, inst.spec, seed);
  return inst;
}

/// Random valid parameter values (not a fit) for update-level tests.
inline msfr::Params random_params(const msfr::ModelDims& dims, msfr::Rng& rng,
                                  double loading_scale = 0.6) {
  msfr::Params p = msfr::Params::zeros(dims);
  p.beta = random_matrix(dims.p, dims.p_b, rng);
  p.phi = random_matrix(dims.p, dims.q, rng, loading_scale);
  for (std::size_t s = 0; s < p.lambdas.size(); ++s) {
    p.lambdas[s] = random_matrix(dims.p, dims.q_s[s], rng, loading_scale);
    p.psis[s] = random_psi(dims.p, rng);
  }
  return p;
}

inline double rel_err(const Matrix& got, const Matrix& want) {
  if (want.size() == 0 && got.size() == 0) return 0.0;
  const double scale = 1.0 + want.cwiseAbs().maxCoeff();
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

}  // namespace oracle
