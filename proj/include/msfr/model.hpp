#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "msfr/errors.hpp"
#include "msfr/linalg.hpp"

namespace msfr {

/// Lower bound kept on every idiosyncratic variance. Prevents Heywood-style
/// collapse of a diagonal entry toward zero, which would make the marginal
/// covariance singular and the likelihood unbounded.
inline constexpr double kPsiFloor = 1e-4;

/// One study: p observed variables by n_s subjects, plus an optional
/// p_b x n_s block of known covariates (p_b may be zero).
struct StudyDataset {
  std::string study_id;
  Matrix X;  // p x n_s, columns are subjects
  Matrix B;  // p_b x n_s, columns are covariate vectors
};

struct MultiStudyData {
  std::vector<StudyDataset> studies;

  Index n_studies() const { return static_cast<Index>(studies.size()); }
  Index p() const { return studies.empty() ? 0 : studies.front().X.rows(); }
  Index p_b() const { return studies.empty() ? 0 : studies.front().B.rows(); }
  Index n_s(Index s) const { return studies[static_cast<std::size_t>(s)].X.cols(); }
  Index total_n() const {
    Index n = 0;
    for (const auto& st : studies) n += st.X.cols();
    return n;
  }
};

/// Dimension bundle every shape check runs against.
struct ModelDims {
  Index p = 0;
  Index p_b = 0;
  Index q = 0;
  std::vector<Index> q_s;  // one entry per study
  std::vector<Index> n_s;  // one entry per study

  Index n_studies() const { return static_cast<Index>(q_s.size()); }
  Index total_n() const { return std::accumulate(n_s.begin(), n_s.end(), Index{0}); }
  Index total_q_s() const { return std::accumulate(q_s.begin(), q_s.end(), Index{0}); }

  static ModelDims from_data(const MultiStudyData& data, Index q, Index q_s_all) {
    ModelDims d;
    d.p = data.p();
    d.p_b = data.p_b();
    d.q = q;
    d.q_s.assign(static_cast<std::size_t>(data.n_studies()), q_s_all);
    d.n_s.resize(static_cast<std::size_t>(data.n_studies()));
    for (Index s = 0; s < data.n_studies(); ++s) d.n_s[static_cast<std::size_t>(s)] = data.n_s(s);
    return d;
  }
};

/// Full parameter set: regression coefficients, common loadings,
/// study-specific loadings and diagonal idiosyncratic variances.
struct Params {
  Matrix beta;                  // p x p_b
  Matrix phi;                   // p x q
  std::vector<Matrix> lambdas;  // p x q_s each
  std::vector<Vector> psis;     // length-p positive diagonals

  Index p() const { return phi.rows(); }
  Index q() const { return phi.cols(); }
  Index p_b() const { return beta.cols(); }
  Index n_studies() const { return static_cast<Index>(lambdas.size()); }
  Index q_s(Index s) const { return lambdas[static_cast<std::size_t>(s)].cols(); }

  static Params zeros(const ModelDims& dims) {
    Params out;
    out.beta = Matrix::Zero(dims.p, dims.p_b);
    out.phi = Matrix::Zero(dims.p, dims.q);
    out.lambdas.reserve(dims.q_s.size());
    out.psis.reserve(dims.q_s.size());
    for (Index qs : dims.q_s) {
      out.lambdas.emplace_back(Matrix::Zero(dims.p, qs));
      out.psis.emplace_back(Vector::Ones(dims.p));
    }
    return out;
  }
};

inline ModelDims dims_of(const Params& params, const std::vector<Index>& n_s) {
  ModelDims d;
  d.p = params.p();
  d.p_b = params.p_b();
  d.q = params.q();
  for (Index s = 0; s < params.n_studies(); ++s) d.q_s.push_back(params.q_s(s));
  d.n_s = n_s;
  return d;
}

inline void validate(const MultiStudyData& data, const ModelDims& dims) {
  if (data.studies.empty()) throw ShapeMismatch("no studies in dataset");
  if (dims.n_studies() != data.n_studies())
    throw ShapeMismatch("dims list " + std::to_string(dims.n_studies()) +
                        " studies, data has " + std::to_string(data.n_studies()));
  const Index p = data.p();
  const Index p_b = data.p_b();
  if (p < 1) throw ShapeMismatch("p must be at least 1");
  if (dims.p != p || dims.p_b != p_b)
    throw ShapeMismatch("dims (p=" + std::to_string(dims.p) + ", p_b=" + std::to_string(dims.p_b) +
                        ") do not match data (p=" + std::to_string(p) +
                        ", p_b=" + std::to_string(p_b) + ")");

  for (Index s = 0; s < data.n_studies(); ++s) {
    const auto& st = data.studies[static_cast<std::size_t>(s)];
    if (st.X.rows() != p)
      throw ShapeMismatch("study " + st.study_id + ": has " + std::to_string(st.X.rows()) +
                          " variables, expected " + std::to_string(p));
    if (st.B.rows() != p_b)
      throw ShapeMismatch("study " + st.study_id + ": has " + std::to_string(st.B.rows()) +
                          " covariates, expected " + std::to_string(p_b));
    if (p_b > 0 && st.B.cols() != st.X.cols())
      throw ShapeMismatch("study " + st.study_id + ": X has " + std::to_string(st.X.cols()) +
                          " subjects but B has " + std::to_string(st.B.cols()));
    if (dims.n_s[static_cast<std::size_t>(s)] != st.X.cols())
      throw ShapeMismatch("study " + st.study_id + ": dims n_s=" +
                          std::to_string(dims.n_s[static_cast<std::size_t>(s)]) + " but data has " +
                          std::to_string(st.X.cols()) + " subjects");
    for (Index j = 0; j < st.X.cols(); ++j)
      for (Index i = 0; i < p; ++i)
        if (!std::isfinite(st.X(i, j)))
          throw NonFiniteData("study " + st.study_id + ": X(" + std::to_string(i) + "," +
                              std::to_string(j) + ") is not finite");
    for (Index j = 0; j < st.B.cols(); ++j)
      for (Index i = 0; i < p_b; ++i)
        if (!std::isfinite(st.B(i, j)))
          throw NonFiniteData("study " + st.study_id + ": B(" + std::to_string(i) + "," +
                              std::to_string(j) + ") is not finite");
  }

  if (p_b > 0 && data.total_n() < p_b + 1)
    throw ShapeMismatch("total sample size " + std::to_string(data.total_n()) +
                        " too small for p_b=" + std::to_string(p_b));

  if (dims.q < 0) throw ShapeMismatch("q must be non-negative");
  for (Index s = 0; s < dims.n_studies(); ++s) {
    const Index qs = dims.q_s[static_cast<std::size_t>(s)];
    if (qs < 0) throw ShapeMismatch("q_s must be non-negative");
    if (dims.q + qs >= p)
      throw RankConstraintViolated("study " + std::to_string(s) + ": q + q_s = " +
                                   std::to_string(dims.q + qs) + " must be < p = " +
                                   std::to_string(p));
  }
  if (dims.q + dims.total_q_s() > p)
    throw RankConstraintViolated("q + sum(q_s) = " + std::to_string(dims.q + dims.total_q_s()) +
                                 " exceeds p = " + std::to_string(p));
}

/// Per-study marginal covariance Phi Phi^T + Lambda_s Lambda_s^T + diag(psi_s).
using MarginalCov = std::vector<Matrix>;

inline MarginalCov marginal_covariance(const Params& params) {
  MarginalCov out;
  out.reserve(params.lambdas.size());
  const Matrix common = params.phi * params.phi.transpose();
  for (Index s = 0; s < params.n_studies(); ++s) {
    const auto& lam = params.lambdas[static_cast<std::size_t>(s)];
    Matrix sigma = common;
    sigma.noalias() += lam * lam.transpose();
    sigma += Matrix(params.psis[static_cast<std::size_t>(s)].asDiagonal());
    out.push_back(std::move(sigma));
  }
  return out;
}

/// Shares of total variance attributed to each factor. The denominator is
/// the study-size-weighted average of tr(Sigma_s); study-specific factors
/// are additionally reported against their own study's total variance.
struct ExplainedVariance {
  Vector common;                        // length q, pooled denominator
  std::vector<Vector> specific_pooled;  // per study, weighted pooled denominator
  std::vector<Vector> specific_local;   // per study, study-local denominator
};

inline ExplainedVariance explained_variance(const Params& params, const std::vector<Index>& n_s) {
  const Index s_count = params.n_studies();
  const double n_total = static_cast<double>(std::accumulate(n_s.begin(), n_s.end(), Index{0}));
  std::vector<double> w(static_cast<std::size_t>(s_count));
  std::vector<double> total(static_cast<std::size_t>(s_count));
  double pooled = 0.0;
  const double common_tr = params.phi.squaredNorm();
  for (Index s = 0; s < s_count; ++s) {
    const auto& lam = params.lambdas[static_cast<std::size_t>(s)];
    total[static_cast<std::size_t>(s)] = common_tr + lam.squaredNorm() +
                                         params.psis[static_cast<std::size_t>(s)].sum();
    w[static_cast<std::size_t>(s)] = static_cast<double>(n_s[static_cast<std::size_t>(s)]) / n_total;
    pooled += w[static_cast<std::size_t>(s)] * total[static_cast<std::size_t>(s)];
  }

  ExplainedVariance out;
  out.common = params.phi.colwise().squaredNorm().transpose() / pooled;
  for (Index s = 0; s < s_count; ++s) {
    const auto& lam = params.lambdas[static_cast<std::size_t>(s)];
    const Vector col2 = lam.colwise().squaredNorm().transpose();
    out.specific_pooled.push_back(w[static_cast<std::size_t>(s)] * col2 / pooled);
    out.specific_local.push_back(col2 / total[static_cast<std::size_t>(s)]);
  }
  return out;
}

/// Raw free-parameter count used by the information criteria (no
/// rotational-identifiability correction).
inline Index n_free_params(const ModelDims& dims) {
  return dims.p * dims.p_b + dims.p * dims.q + dims.p * dims.total_q_s() +
         dims.n_studies() * dims.p;
}

}  // namespace msfr
