#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "msfr/fit.hpp"
#include "msfr/init.hpp"
#include "msfr/model.hpp"
#include "msfr/parallel.hpp"
#include "msfr/rng.hpp"
#include "msfr/scores.hpp"
#include "msfr/simulate.hpp"

namespace msfr {

struct CVSpec {
  int k = 5;
  ScoreMethod score_method = ScoreMethod::Bartlett;
  std::uint64_t seed = 0;
};

/// Within-study fold labels: fold_of[s][i] is the fold of subject i in
/// study s. Every subject lands in exactly one test fold, and fold sizes
/// within a study differ by at most one.
using FoldAssignment = std::vector<std::vector<int>>;

inline FoldAssignment kfold_split(const MultiStudyData& data, int k, std::uint64_t seed) {
  if (k < 2) throw TooFewSubjects("kfold_split: k must be at least 2");
  FoldAssignment folds;
  for (Index s = 0; s < data.n_studies(); ++s) {
    const Index n = data.n_s(s);
    if (n < k)
      throw TooFewSubjects("study " + data.studies[static_cast<std::size_t>(s)].study_id +
                           " has " + std::to_string(n) + " subjects, fewer than k=" +
                           std::to_string(k));
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng = make_stream(seed, stream::kFoldShuffle, static_cast<std::uint64_t>(s));
    for (Index i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<Index> pick(0, i);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
      fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
          static_cast<int>(i % k);
    folds.push_back(std::move(fold_of));
  }
  return folds;
}

namespace detail {

inline StudyDataset subset_columns(const StudyDataset& st, const std::vector<int>& fold_of,
                                   int fold, bool keep_fold) {
  std::vector<Index> cols;
  for (Index i = 0; i < st.X.cols(); ++i)
    if ((fold_of[static_cast<std::size_t>(i)] == fold) == keep_fold) cols.push_back(i);
  StudyDataset out;
  out.study_id = st.study_id;
  out.X = Matrix(st.X.rows(), static_cast<Index>(cols.size()));
  out.B = Matrix(st.B.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.X.col(static_cast<Index>(j)) = st.X.col(cols[j]);
    if (st.B.rows() > 0) out.B.col(static_cast<Index>(j)) = st.B.col(cols[j]);
  }
  return out;
}

/// Factor scores for a single study under either scoring method.
inline StudyScores score_study(const Matrix& xtilde, const Params& params, Index s,
                               ScoreMethod method) {
  const std::size_t su = static_cast<std::size_t>(s);
  if (method == ScoreMethod::Thurstone) {
    const EStepMoments m = e_step(xtilde, params.phi, params.lambdas[su], params.psis[su]);
    return {m.delta * xtilde, m.delta_s * xtilde};
  }
  const Index q = params.q();
  const Index qs = params.q_s(s);
  if (q + qs == 0) return {Matrix(0, xtilde.cols()), Matrix(0, xtilde.cols())};
  Matrix l(params.p(), q + qs);
  l.leftCols(q) = params.phi;
  l.rightCols(qs) = params.lambdas[su];
  const Matrix lw = params.psis[su].cwiseInverse().asDiagonal() * l;
  Eigen::LDLT<Matrix> ldlt(l.transpose() * lw);
  if (ldlt.info() != Eigen::Success ||
      !(ldlt.vectorD().minCoeff() >
        kSingularTol * std::max(1.0, ldlt.vectorD().cwiseAbs().maxCoeff())))
    throw SingularSystem("score_study: stacked loadings are rank deficient");
  const Matrix joint = ldlt.solve(lw.transpose() * xtilde);
  return {joint.topRows(q), joint.bottomRows(qs)};
}

}  // namespace detail

/// Reconstructs the test responses from fitted parameters: scores are
/// computed from the covariate-adjusted test data (when the fit carries
/// coefficients) and the prediction is beta b + Phi f + Lambda_s l.
inline Matrix predict(const Params& params, ScoreMethod method, const StudyDataset& test,
                      Index study_index) {
  const bool has_beta = params.beta.cols() > 0;
  if (has_beta && test.B.rows() != params.beta.cols())
    throw ShapeMismatch("predict: test covariates do not match beta");
  Matrix xtilde = test.X;
  if (has_beta) xtilde.noalias() -= params.beta * test.B;
  const StudyScores sc = detail::score_study(xtilde, params, study_index, method);
  Matrix xhat = Matrix::Zero(test.X.rows(), test.X.cols());
  if (has_beta) xhat.noalias() += params.beta * test.B;
  if (params.q() > 0) xhat.noalias() += params.phi * sc.common;
  if (params.q_s(study_index) > 0)
    xhat.noalias() += params.lambdas[static_cast<std::size_t>(study_index)] * sc.specific;
  return xhat;
}

struct CvCell {
  double mse_per_entry = 0.0;    // mean over n * p squared residuals
  double mse_per_subject = 0.0;  // mean of squared residual norms over n
  std::vector<double> fold_mse_per_entry;
};

struct CvReport {
  std::vector<MethodKind> methods;
  std::vector<ScoreMethod> score_methods;
  // cells[method index][score index]
  std::vector<std::vector<CvCell>> cells;
};

/// k-fold prediction-error comparison. Latent dimensions stay fixed at
/// `dims` for every fold (FR drops the study-specific block); each fold
/// refits from its own initialization on the training part and accumulates
/// squared errors on the held-out part. Per-fold values are averaged.
inline CvReport cv_mse(const MultiStudyData& data_in, const ModelDims& dims_in,
                       const ConvergenceConfig& config, const CVSpec& cvspec,
                       const std::vector<MethodKind>& methods, unsigned max_threads = 0) {
  validate(data_in, dims_in);

  // Studies are processed in id order so the report does not depend on the
  // order they were listed in.
  std::vector<std::size_t> order(data_in.studies.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data_in.studies[a].study_id < data_in.studies[b].study_id;
  });
  MultiStudyData data;
  ModelDims dims = dims_in;
  for (std::size_t i = 0; i < order.size(); ++i) {
    data.studies.push_back(data_in.studies[order[i]]);
    dims.q_s[i] = dims_in.q_s[order[i]];
    dims.n_s[i] = dims_in.n_s[order[i]];
  }

  const FoldAssignment folds = kfold_split(data, cvspec.k, cvspec.seed);

  for (Index s = 0; s < data.n_studies(); ++s) {
    std::vector<int> count(static_cast<std::size_t>(cvspec.k), 0);
    for (int f : folds[static_cast<std::size_t>(s)]) ++count[static_cast<std::size_t>(f)];
    const int largest_fold = *std::max_element(count.begin(), count.end());
    const Index min_train = data.n_s(s) - largest_fold;
    const Index needed =
        std::max<Index>(dims.q + dims.q_s[static_cast<std::size_t>(s)] + 1, 5);
    if (min_train < needed)
      throw TooFewSubjects("study " + data.studies[static_cast<std::size_t>(s)].study_id +
                           ": training folds keep " + std::to_string(min_train) +
                           " subjects, need at least " + std::to_string(needed));
  }

  const std::vector<ScoreMethod> scorers{ScoreMethod::Bartlett, ScoreMethod::Thurstone};
  struct FoldAccum {
    // [method][scorer] -> (sum of squared residuals, #entries, #subjects)
    std::vector<std::array<std::array<double, 3>, 2>> acc;
  };
  std::vector<FoldAccum> per_fold(static_cast<std::size_t>(cvspec.k));

  parallel_for(static_cast<std::size_t>(cvspec.k), [&](std::size_t f) {
    MultiStudyData train, test;
    for (Index s = 0; s < data.n_studies(); ++s) {
      const auto& st = data.studies[static_cast<std::size_t>(s)];
      train.studies.push_back(
          detail::subset_columns(st, folds[static_cast<std::size_t>(s)], static_cast<int>(f), false));
      test.studies.push_back(
          detail::subset_columns(st, folds[static_cast<std::size_t>(s)], static_cast<int>(f), true));
    }

    FoldAccum accum;
    accum.acc.assign(methods.size(), {});
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      const MethodKind method = methods[mi];
      MultiStudyData fit_data = train;
      ModelDims fit_dims = dims;
      for (auto& n : fit_dims.n_s) n = 0;
      Matrix beta_lr;  // only for MSFA&LR
      if (method == MethodKind::MSFA) {
        fit_data = strip_covariates(train);
        fit_dims.p_b = 0;
      } else if (method == MethodKind::FR) {
        std::fill(fit_dims.q_s.begin(), fit_dims.q_s.end(), Index{0});
      } else if (method == MethodKind::MSFA_LR) {
        beta_lr = pooled_ols_beta(train);
        fit_data = strip_covariates(train);
        for (Index s = 0; s < fit_data.n_studies(); ++s)
          fit_data.studies[static_cast<std::size_t>(s)].X -=
              beta_lr * train.studies[static_cast<std::size_t>(s)].B;
        fit_dims.p_b = 0;
      }
      for (Index s = 0; s < fit_data.n_studies(); ++s)
        fit_dims.n_s[static_cast<std::size_t>(s)] = fit_data.n_s(s);

      const Params start = initialize(fit_data, fit_dims, cvspec.seed);
      FitResult fr = fit(fit_data, fit_dims, config, start);
      if (method == MethodKind::MSFA_LR) fr.params.beta = beta_lr;

      for (std::size_t si = 0; si < scorers.size(); ++si) {
        for (Index s = 0; s < data.n_studies(); ++s) {
          const auto& te = test.studies[static_cast<std::size_t>(s)];
          const Matrix xhat = predict(fr.params, scorers[si], te, s);
          const double sq = (te.X - xhat).squaredNorm();
          accum.acc[mi][si][0] += sq;
          accum.acc[mi][si][1] += static_cast<double>(te.X.size());
          accum.acc[mi][si][2] += static_cast<double>(te.X.cols());
        }
      }
    }
    per_fold[f] = std::move(accum);
  }, max_threads);

  CvReport report;
  report.methods = methods;
  report.score_methods = scorers;
  report.cells.assign(methods.size(), std::vector<CvCell>(scorers.size()));
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (std::size_t si = 0; si < scorers.size(); ++si) {
      CvCell& cell = report.cells[mi][si];
      double sum_entry = 0.0, sum_subject = 0.0;
      for (std::size_t f = 0; f < per_fold.size(); ++f) {
        const auto& a = per_fold[f].acc[mi][si];
        cell.fold_mse_per_entry.push_back(a[0] / a[1]);
        sum_entry += a[0] / a[1];
        sum_subject += a[0] / a[2];
      }
      cell.mse_per_entry = sum_entry / static_cast<double>(per_fold.size());
      cell.mse_per_subject = sum_subject / static_cast<double>(per_fold.size());
    }
  }
  return report;
}

}  // namespace msfr
