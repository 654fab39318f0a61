#pragma once

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "msfr/fit.hpp"
#include "msfr/model.hpp"
#include "msfr/parallel.hpp"

namespace msfr {

namespace detail {

/// Top-k eigenpairs of a symmetric matrix as loading columns u_j sqrt(e_j),
/// eigenvalues floored at zero, column signs fixed deterministically.
inline Matrix top_factor_loadings(const Matrix& sym, Index k) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Index p = sym.rows();
  Matrix out(p, k);
  for (Index j = 0; j < k; ++j) {
    // eigenvalues are sorted ascending
    const Index src = p - 1 - j;
    Vector u = eig.eigenvectors().col(src);
    Index idx = 0;
    u.cwiseAbs().maxCoeff(&idx);
    if (u(idx) < 0.0) u = -u;
    out.col(j) = u * std::sqrt(std::max(0.0, eig.eigenvalues()(src)));
  }
  return out;
}

/// Principal-axis factoring: alternate between extracting k factors from the
/// second-moment matrix with communalities on the diagonal and re-estimating
/// the communalities from the extracted loadings.
inline Matrix principal_axis(const Matrix& c, Index k, int sweeps = 20) {
  if (k == 0) return Matrix(c.rows(), 0);
  Vector h = c.diagonal();
  Matrix loadings;
  for (int it = 0; it < sweeps; ++it) {
    Matrix r = c;
    r.diagonal() = h;
    loadings = top_factor_loadings(r, k);
    h = loadings.rowwise().squaredNorm();
  }
  return loadings;
}

}  // namespace detail

/// Two-step least-squares starting point: pooled multivariate regression of
/// the responses on the covariates, then a principal-component start for the
/// common loadings and a per-study principal-axis factor analysis for the
/// study-specific loadings and idiosyncratic variances.
inline Params initialize(const MultiStudyData& data, const ModelDims& dims,
                         std::uint64_t /*seed*/ = 0) {
  validate(data, dims);
  Params params = Params::zeros(dims);

  if (dims.p_b > 0) {
    Matrix sxb = Matrix::Zero(dims.p, dims.p_b);
    Matrix sbb = Matrix::Zero(dims.p_b, dims.p_b);
    for (const auto& st : data.studies) {
      sxb.noalias() += st.X * st.B.transpose();
      sbb.noalias() += st.B * st.B.transpose();
    }
    Eigen::LDLT<Matrix> ldlt(sbb);
    if (ldlt.info() != Eigen::Success ||
        !(ldlt.vectorD().cwiseAbs().minCoeff() >
          kSingularTol * ldlt.vectorD().cwiseAbs().maxCoeff()))
      throw SingularSystem("initialize: collinear covariates");
    params.beta = ldlt.solve(sxb.transpose()).transpose();
  }

  const std::vector<Matrix> xt = residualize(data, params.beta);

  if (dims.q > 0) {
    Matrix pooled = Matrix::Zero(dims.p, dims.p);
    for (const auto& x : xt) pooled.noalias() += x * x.transpose();
    pooled /= static_cast<double>(data.total_n());
    params.phi = detail::top_factor_loadings(pooled, dims.q);
  }

  for (std::size_t s = 0; s < xt.size(); ++s) {
    const Matrix c = xt[s] * xt[s].transpose() / static_cast<double>(xt[s].cols());
    const Matrix lam = detail::principal_axis(c, dims.q_s[s]);
    params.lambdas[s] = lam;
    Vector h = lam.cols() > 0 ? Vector(lam.rowwise().squaredNorm()) : Vector(Vector::Zero(dims.p));
    params.psis[s] = (c.diagonal() - h).cwiseMax(kPsiFloor);
  }
  return params;
}

enum class Criterion { AIC, BIC };

inline const char* to_string(Criterion c) { return c == Criterion::AIC ? "aic" : "bic"; }

struct GridSpec {
  std::vector<Index> q_values;
  std::vector<Index> qs_values;  // applied uniformly to all studies
  Criterion criterion = Criterion::BIC;
};

struct SelectionRow {
  Index q = 0;
  Index qs = 0;
  double aic = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
  double loglik = std::numeric_limits<double>::quiet_NaN();
  Index n_params = 0;
  bool converged = false;
  std::string error;
};

struct SelectionReport {
  std::vector<SelectionRow> rows;  // one per grid point, in grid order
  Criterion criterion = Criterion::BIC;
  int chosen = -1;  // index into rows
};

/// Argmin of the requested criterion over converged rows; ties break toward
/// the smaller total latent dimension, then the smaller q.
inline int choose_best(const std::vector<SelectionRow>& rows, Criterion criterion, Index s_count) {
  int best = -1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!r.converged) continue;
    const double value = criterion == Criterion::AIC ? r.aic : r.bic;
    if (!std::isfinite(value)) continue;
    if (best < 0) {
      best = static_cast<int>(i);
      continue;
    }
    const auto& b = rows[static_cast<std::size_t>(best)];
    const double best_value = criterion == Criterion::AIC ? b.aic : b.bic;
    const Index total = r.q + s_count * r.qs;
    const Index best_total = b.q + s_count * b.qs;
    if (value < best_value ||
        (value == best_value && (total < best_total || (total == best_total && r.q < b.q))))
      best = static_cast<int>(i);
  }
  return best;
}

struct SelectionOutcome {
  SelectionReport report;
  std::vector<std::optional<FitResult>> fits;  // aligned with report.rows
};

/// Fits every grid point from its own fresh initialization. Grid points are
/// independent and may run concurrently; rows are stored in grid order so
/// the report never depends on scheduling.
inline SelectionOutcome select_with_fits(const MultiStudyData& data, const GridSpec& grid,
                                         const ConvergenceConfig& config, std::uint64_t seed,
                                         unsigned max_threads = 0) {
  if (grid.q_values.empty() || grid.qs_values.empty())
    throw ShapeMismatch("select: empty grid");
  const Index s_count = data.n_studies();

  struct Point {
    Index q, qs;
  };
  std::vector<Point> points;
  for (Index q : grid.q_values)
    for (Index qs : grid.qs_values) {
      const ModelDims dims = ModelDims::from_data(data, q, qs);
      validate(data, dims);  // includes the rank constraint for the grid point
      points.push_back({q, qs});
    }

  SelectionOutcome out;
  out.report.criterion = grid.criterion;
  out.report.rows.resize(points.size());
  out.fits.resize(points.size());

  parallel_for(points.size(), [&](std::size_t i) {
    const ModelDims dims = ModelDims::from_data(data, points[i].q, points[i].qs);
    SelectionRow row;
    row.q = points[i].q;
    row.qs = points[i].qs;
    row.n_params = n_free_params(dims);
    try {
      const Params start = initialize(data, dims, seed);
      FitResult fr = fit(data, dims, config, start);
      row.aic = fr.aic;
      row.bic = fr.bic;
      row.loglik = fr.observed_loglik;
      row.converged = fr.converged;
      if (fr.converged) out.fits[i] = std::move(fr);
    } catch (const Error& e) {
      row.error = e.what();
    }
    out.report.rows[i] = row;
  }, max_threads);

  out.report.chosen = choose_best(out.report.rows, grid.criterion, s_count);
  if (out.report.chosen < 0) throw AllFitsFailed("select: no grid point converged");
  return out;
}

inline SelectionReport select(const MultiStudyData& data, const GridSpec& grid,
                              const ConvergenceConfig& config, std::uint64_t seed) {
  return select_with_fits(data, grid, config, seed).report;
}

}  // namespace msfr
