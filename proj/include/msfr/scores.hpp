#pragma once

#include <Eigen/Dense>
#include <vector>

#include "msfr/ecm.hpp"
#include "msfr/errors.hpp"
#include "msfr/linalg.hpp"
#include "msfr/model.hpp"

namespace msfr {

enum class ScoreMethod { Bartlett, Thurstone };

inline const char* to_string(ScoreMethod m) {
  return m == ScoreMethod::Bartlett ? "bartlett" : "thurstone";
}

struct StudyScores {
  Matrix common;    // q x n_s
  Matrix specific;  // q_s x n_s
};

struct ScoreMatrix {
  ScoreMethod method;
  std::vector<StudyScores> by_study;
};

/// Posterior-mean (regression) scores: f = Phi^T Sigma^-1 x, l = Lambda^T
/// Sigma^-1 x, computed through the low-rank inversion identities.
inline ScoreMatrix thurstone_scores(const std::vector<Matrix>& xtilde, const Params& params) {
  ScoreMatrix out{ScoreMethod::Thurstone, {}};
  for (std::size_t s = 0; s < xtilde.size(); ++s) {
    const EStepMoments m = e_step(xtilde[s], params.phi, params.lambdas[s], params.psis[s]);
    StudyScores sc;
    sc.common = m.delta * xtilde[s];
    sc.specific = m.delta_s * xtilde[s];
    out.by_study.push_back(std::move(sc));
  }
  return out;
}

/// Generalized-least-squares scores on the stacked loadings L = [Phi Lambda_s]:
///   (L^T Psi^-1 L)^-1 L^T Psi^-1 x,
/// split back into common and study-specific blocks. Exact on noise-free data.
inline ScoreMatrix bartlett_scores(const std::vector<Matrix>& xtilde, const Params& params) {
  ScoreMatrix out{ScoreMethod::Bartlett, {}};
  const Index q = params.q();
  for (std::size_t s = 0; s < xtilde.size(); ++s) {
    const Index qs = params.q_s(static_cast<Index>(s));
    Matrix l(params.p(), q + qs);
    l.leftCols(q) = params.phi;
    l.rightCols(qs) = params.lambdas[s];

    StudyScores sc;
    if (q + qs == 0) {
      sc.common = Matrix(0, xtilde[s].cols());
      sc.specific = Matrix(0, xtilde[s].cols());
      out.by_study.push_back(std::move(sc));
      continue;
    }
    const Matrix lw = params.psis[s].cwiseInverse().asDiagonal() * l;  // Psi^-1 L
    const Matrix gram = l.transpose() * lw;
    Eigen::LDLT<Matrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success ||
        !(ldlt.vectorD().minCoeff() >
          kSingularTol * std::max(1.0, ldlt.vectorD().cwiseAbs().maxCoeff())))
      throw SingularSystem("bartlett_scores: stacked loadings are rank deficient");
    const Matrix joint = ldlt.solve(lw.transpose() * xtilde[s]);
    sc.common = joint.topRows(q);
    sc.specific = joint.bottomRows(qs);
    out.by_study.push_back(std::move(sc));
  }
  return out;
}

namespace detail {

/// Makes the largest-magnitude entry of each column positive.
inline void fix_column_signs(Matrix& m) {
  for (Index j = 0; j < m.cols(); ++j) {
    Index idx = 0;
    m.col(j).cwiseAbs().maxCoeff(&idx);
    if (m(idx, j) < 0.0) m.col(j) = -m.col(j);
  }
}

}  // namespace detail

/// Identification pass: varimax-rotate the common loadings (and any
/// study-specific block with at least two columns), then fix column signs.
/// beta and the idiosyncratic variances are untouched, so every marginal
/// covariance is preserved.
inline Params identify(const Params& params) {
  Params out = params;
  if (out.phi.cols() >= 2) out.phi = varimax(out.phi).rotated;
  detail::fix_column_signs(out.phi);
  for (auto& lam : out.lambdas) {
    if (lam.cols() >= 2) lam = varimax(lam).rotated;
    detail::fix_column_signs(lam);
  }
  return out;
}

}  // namespace msfr
