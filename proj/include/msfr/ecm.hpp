#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "msfr/errors.hpp"
#include "msfr/linalg.hpp"
#include "msfr/model.hpp"

namespace msfr {

inline constexpr double kLog2Pi = 1.8378770664093454836;

struct ConvergenceConfig {
  double eps_star = 1e-7;
  Index max_iter = 50000;
  bool use_aitken = true;
};

/// Per-study sufficient statistics. Every quantity the ECM iteration needs
/// is a function of these, so the per-iteration cost does not grow with n_s.
struct StudyStats {
  Index n = 0;
  Matrix sxx;  // X X^T
  Matrix sxb;  // X B^T
  Matrix sbb;  // B B^T
};

inline std::vector<StudyStats> compute_stats(const MultiStudyData& data) {
  std::vector<StudyStats> out;
  out.reserve(data.studies.size());
  for (const auto& st : data.studies) {
    StudyStats s;
    s.n = st.X.cols();
    s.sxx.noalias() = st.X * st.X.transpose();
    s.sxb.noalias() = st.X * st.B.transpose();
    s.sbb.noalias() = st.B * st.B.transpose();
    out.push_back(std::move(s));
  }
  return out;
}

/// Covariate-adjusted responses x - beta b, one matrix per study.
inline std::vector<Matrix> residualize(const MultiStudyData& data, const Matrix& beta) {
  if (beta.cols() != data.p_b() || (beta.cols() > 0 && beta.rows() != data.p()))
    throw ShapeMismatch("residualize: beta is " + std::to_string(beta.rows()) + "x" +
                        std::to_string(beta.cols()) + " for p=" + std::to_string(data.p()) +
                        ", p_b=" + std::to_string(data.p_b()));
  std::vector<Matrix> out;
  out.reserve(data.studies.size());
  for (const auto& st : data.studies) {
    if (beta.cols() > 0)
      out.push_back(st.X - beta * st.B);
    else
      out.push_back(st.X);
  }
  return out;
}

/// Sample second moment of the adjusted responses, assembled from the
/// sufficient statistics for the current beta.
inline Matrix cxx_from_stats(const StudyStats& st, const Matrix& beta) {
  Matrix c = st.sxx;
  if (beta.cols() > 0) {
    const Matrix bs = beta * st.sbb;  // p x p_b
    c.noalias() -= st.sxb * beta.transpose();
    c.noalias() -= beta * st.sxb.transpose();
    c.noalias() += bs * beta.transpose();
  }
  return c / static_cast<double>(st.n);
}

/// Conditional moments of the latent factors given the adjusted data for
/// one study, all derived from the q x q and q_s x q_s cores of the
/// low-rank inversion identity; the p x p marginal covariance is never
/// inverted directly.
struct EStepMoments {
  Matrix c_xx;     // p x p
  Matrix e_ff;     // q x q
  Matrix e_ll;     // q_s x q_s
  Matrix e_xf;     // p x q
  Matrix e_xl;     // p x q_s
  Matrix e_fl;     // q x q_s
  Matrix delta;    // q x p,   Phi^T Sigma^-1
  Matrix delta_s;  // q_s x p, Lambda^T Sigma^-1
};

inline EStepMoments e_step_from_cxx(const Matrix& c_xx, const Matrix& phi, const Matrix& lambda,
                                    const Vector& psi) {
  const Index q = phi.cols();
  const Index qs = lambda.cols();

  EStepMoments m;
  m.c_xx = c_xx;

  // delta = (I_q + Phi^T W_Lambda Phi)^-1 Phi^T W_Lambda, W_Lambda = (Lambda Lambda^T + Psi)^-1
  if (q > 0) {
    const Matrix w_lambda = woodbury_inverse(psi, lambda);
    const Matrix pw = phi.transpose() * w_lambda;  // q x p
    Matrix core = Matrix::Identity(q, q) + pw * phi;
    m.delta = solve_square(core, pw);
  } else {
    m.delta = Matrix(0, psi.size());
  }
  if (qs > 0) {
    const Matrix w_phi = woodbury_inverse(psi, phi);
    const Matrix lw = lambda.transpose() * w_phi;  // q_s x p
    Matrix core = Matrix::Identity(qs, qs) + lw * lambda;
    m.delta_s = solve_square(core, lw);
  } else {
    m.delta_s = Matrix(0, psi.size());
  }

  Matrix cap_delta = Matrix::Identity(q, q) - m.delta * phi;
  Matrix cap_delta_s = Matrix::Identity(qs, qs) - m.delta_s * lambda;
  cap_delta = 0.5 * (cap_delta + cap_delta.transpose()).eval();
  cap_delta_s = 0.5 * (cap_delta_s + cap_delta_s.transpose()).eval();
  const Matrix cap_delta_fl = -(m.delta * lambda);  // Cov[f, l | x] = -Phi^T Sigma^-1 Lambda

  m.e_xf.noalias() = c_xx * m.delta.transpose();
  m.e_xl.noalias() = c_xx * m.delta_s.transpose();
  m.e_ff = m.delta * m.e_xf + cap_delta;
  m.e_ll = m.delta_s * m.e_xl + cap_delta_s;
  m.e_ff = 0.5 * (m.e_ff + m.e_ff.transpose()).eval();
  m.e_ll = 0.5 * (m.e_ll + m.e_ll.transpose()).eval();
  m.e_fl = m.delta * m.e_xl + cap_delta_fl;
  return m;
}

inline EStepMoments e_step(const Matrix& xtilde_s, const Matrix& phi, const Matrix& lambda,
                           const Vector& psi) {
  const Matrix c_xx =
      xtilde_s * xtilde_s.transpose() / static_cast<double>(xtilde_s.cols());
  return e_step_from_cxx(c_xx, phi, lambda, psi);
}

/// Diagonal of C + Phi Eff Phi^T + Lam Ell Lam^T - 2 Exf Phi^T - 2 Exl Lam^T
/// + 2 Phi Efl Lam^T; this is the conditional expectation of the squared
/// residuals, so it is non-negative up to rounding.
inline Vector cm_psi_raw(const EStepMoments& m, const Matrix& phi, const Matrix& lambda) {
  Vector d = m.c_xx.diagonal();
  if (phi.cols() > 0) {
    d += ((phi * m.e_ff).cwiseProduct(phi)).rowwise().sum();
    d -= 2.0 * (m.e_xf.cwiseProduct(phi)).rowwise().sum();
  }
  if (lambda.cols() > 0) {
    d += ((lambda * m.e_ll).cwiseProduct(lambda)).rowwise().sum();
    d -= 2.0 * (m.e_xl.cwiseProduct(lambda)).rowwise().sum();
  }
  if (phi.cols() > 0 && lambda.cols() > 0)
    d += 2.0 * ((phi * m.e_fl).cwiseProduct(lambda)).rowwise().sum();
  return d;
}

inline Vector cm_psi(const EStepMoments& m, const Matrix& phi, const Matrix& lambda) {
  return cm_psi_raw(m, phi, lambda).cwiseMax(kPsiFloor);
}

/// Common-loading update: the stationarity condition
///   sum_s n_s Psi_s^-1 Phi Eff_s = sum_s n_s Psi_s^-1 (Exf_s - Lambda_s Efl_s^T)
/// is assembled in vec form as a pq x pq linear system and solved densely.
inline Matrix cm_phi(const std::vector<EStepMoments>& moments, const std::vector<Matrix>& lambdas,
                     const std::vector<Vector>& psis, const std::vector<Index>& n_s) {
  const Index p = psis.front().size();
  const Index q = moments.front().e_ff.rows();
  if (q == 0) return Matrix(p, 0);

  Matrix coef = Matrix::Zero(p * q, p * q);
  Matrix rhs_mat = Matrix::Zero(p, q);
  for (std::size_t s = 0; s < moments.size(); ++s) {
    const double n = static_cast<double>(n_s[s]);
    const Vector w = n * psis[s].cwiseInverse();
    const Matrix& eff = moments[s].e_ff;
    for (Index j = 0; j < q; ++j)
      for (Index i = 0; i < q; ++i)
        coef.block(i * p, j * p, p, p).diagonal() += eff(j, i) * w;

    Matrix r = moments[s].e_xf;
    if (lambdas[s].cols() > 0) r.noalias() -= lambdas[s] * moments[s].e_fl.transpose();
    rhs_mat += w.asDiagonal() * r;
  }
  const Vector sol = solve_kron_system(coef, vec(rhs_mat));
  return unvec(sol, p, q);
}

/// Study-specific loading update (Exl - Phi Efl) Ell^-1.
inline Matrix cm_lambda(const EStepMoments& m, const Matrix& phi) {
  const Index qs = m.e_ll.rows();
  if (qs == 0) return Matrix(phi.rows(), 0);
  Matrix num = m.e_xl;
  if (phi.cols() > 0) num.noalias() -= phi * m.e_fl;
  return solve_square(m.e_ll.transpose(), num.transpose()).transpose();
}

namespace detail {

/// Solves the stationarity condition of the coefficient block,
///   sum_s Psi_s^-1 (beta Sbb_s - R_s) = 0,
/// where R_s = sum_i (x_is - Phi Ef_i - Lambda_s El_is) b_is^T. Because the
/// Psi_s are diagonal the p p_b x p p_b system decouples into one
/// p_b x p_b solve per response row.
inline Matrix solve_beta_rows(const std::vector<Matrix>& r_s, const std::vector<Matrix>& sbb_s,
                              const std::vector<Vector>& psis) {
  const Index p = psis.front().size();
  const Index p_b = sbb_s.front().rows();
  Matrix beta(p, p_b);
  for (Index j = 0; j < p; ++j) {
    Matrix m = Matrix::Zero(p_b, p_b);
    Vector rhs = Vector::Zero(p_b);
    for (std::size_t s = 0; s < sbb_s.size(); ++s) {
      const double w = 1.0 / psis[s](j);
      m += w * sbb_s[s];
      rhs += w * r_s[s].row(j).transpose();
    }
    Eigen::LDLT<Matrix> ldlt(m);
    if (ldlt.info() != Eigen::Success ||
        !(ldlt.vectorD().cwiseAbs().minCoeff() >
          kSingularTol * ldlt.vectorD().cwiseAbs().maxCoeff()))
      throw SingularSystem("cm_beta: covariate cross-product is singular (collinear covariates)");
    beta.row(j) = ldlt.solve(rhs).transpose();
  }
  return beta;
}

}  // namespace detail

/// Regression-coefficient update from per-subject posterior factor means.
/// Each row of beta is the Psi-weighted least-squares solution of
///   sum_s Psi_s^-1 beta Sbb_s = sum_s Psi_s^-1 (X_s - Phi Ef_s - Lambda_s El_s) B_s^T.
/// With a single study, or with the same Psi in every study, this collapses
/// to the unweighted pooled form (X - ...) B^T (B B^T)^-1.
inline Matrix cm_beta(const MultiStudyData& data, const Matrix& phi,
                      const std::vector<Matrix>& lambdas, const std::vector<Matrix>& e_f,
                      const std::vector<Matrix>& e_l, const std::vector<Vector>& psis) {
  const Index p = data.p();
  const Index p_b = data.p_b();
  if (p_b == 0) return Matrix(p, 0);

  std::vector<Matrix> r_s, sbb_s;
  for (std::size_t s = 0; s < data.studies.size(); ++s) {
    const auto& st = data.studies[s];
    Matrix adj = st.X;
    if (phi.cols() > 0) adj.noalias() -= phi * e_f[s];
    if (lambdas[s].cols() > 0) adj.noalias() -= lambdas[s] * e_l[s];
    r_s.emplace_back(adj * st.B.transpose());
    sbb_s.emplace_back(st.B * st.B.transpose());
  }
  return detail::solve_beta_rows(r_s, sbb_s, psis);
}

/// Same update assembled from sufficient statistics. `beta_estep` is the
/// value of beta the E-step moments were computed at (the posterior means
/// are delta (X - beta_estep B)).
inline Matrix cm_beta_from_stats(const std::vector<StudyStats>& stats,
                                 const std::vector<EStepMoments>& moments, const Matrix& phi,
                                 const std::vector<Matrix>& lambdas, const Matrix& beta_estep,
                                 const std::vector<Vector>& psis) {
  const Index p = phi.rows();
  const Index p_b = stats.front().sbb.rows();
  if (p_b == 0) return Matrix(p, 0);

  std::vector<Matrix> r_s, sbb_s;
  for (std::size_t s = 0; s < stats.size(); ++s) {
    Matrix xtb = stats[s].sxb;  // Xtilde B^T under the E-step beta
    if (beta_estep.cols() > 0) xtb.noalias() -= beta_estep * stats[s].sbb;
    Matrix r = stats[s].sxb;
    if (phi.cols() > 0) r.noalias() -= phi * (moments[s].delta * xtb);
    if (lambdas[s].cols() > 0) r.noalias() -= lambdas[s] * (moments[s].delta_s * xtb);
    r_s.push_back(std::move(r));
    sbb_s.push_back(stats[s].sbb);
  }
  return detail::solve_beta_rows(r_s, sbb_s, psis);
}

/// Expected complete-data log-likelihood (additive constant omitted):
///   sum_s -n_s/2 [ log|Psi_s| + tr(Psi_s^-1 M_s) ]
/// with M_s the moment combination from the E-step.
inline double expected_complete_loglik(const Params& params,
                                       const std::vector<EStepMoments>& moments,
                                       const std::vector<Index>& n_s) {
  double total = 0.0;
  for (std::size_t s = 0; s < moments.size(); ++s) {
    const Vector& psi = params.psis[s];
    const Vector diag_m = cm_psi_raw(moments[s], params.phi, params.lambdas[s]);
    const double logdet = psi.array().log().sum();
    const double tr = (diag_m.array() / psi.array()).sum();
    total += -0.5 * static_cast<double>(n_s[s]) * (logdet + tr);
  }
  return total;
}

inline double observed_loglik_from_cxx(const std::vector<Matrix>& c_xx, const Params& params,
                                       const std::vector<Index>& n_s) {
  const Index p = params.p();
  double total = 0.0;
  const MarginalCov sigmas = marginal_covariance(params);
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    Eigen::LLT<Matrix> llt(sigmas[s]);
    if (llt.info() != Eigen::Success)
      throw SingularSystem("observed_loglik: marginal covariance is not positive definite");
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double tr = llt.solve(c_xx[s]).trace();
    total += -0.5 * static_cast<double>(n_s[s]) * (static_cast<double>(p) * kLog2Pi + logdet + tr);
  }
  return total;
}

/// Observed-data log-likelihood sum_s sum_i log N(x_is; beta b_is, Sigma_s),
/// log-determinants via Cholesky.
inline double observed_loglik(const MultiStudyData& data, const Params& params) {
  const std::vector<Matrix> xt = residualize(data, params.beta);
  std::vector<Matrix> c_xx;
  std::vector<Index> n_s;
  for (std::size_t s = 0; s < xt.size(); ++s) {
    const double n = static_cast<double>(xt[s].cols());
    c_xx.push_back(xt[s] * xt[s].transpose() / n);
    n_s.push_back(xt[s].cols());
  }
  return observed_loglik_from_cxx(c_xx, params, n_s);
}

}  // namespace msfr
