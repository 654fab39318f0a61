#pragma once

#include <Eigen/Cholesky>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "msfr/init.hpp"
#include "msfr/model.hpp"
#include "msfr/parallel.hpp"
#include "msfr/rng.hpp"

namespace msfr {

struct ScenarioSpec {
  std::string name;
  Index p = 0;
  Index p_b = 0;
  Index q = 0;
  Index q_s = 0;  // shared across studies
  std::vector<Index> n_s;
  int n_reps = 20;
  std::uint64_t seed = 0;

  Index n_studies() const { return static_cast<Index>(n_s.size()); }

  ModelDims dims() const {
    ModelDims d;
    d.p = p;
    d.p_b = p_b;
    d.q = q;
    d.q_s.assign(n_s.size(), q_s);
    d.n_s = n_s;
    return d;
  }
};

/// The three benchmark scenarios. Scenario 1 uses two studies of 500;
/// scenarios 2 and 3 mirror a six-study cohort layout and differ only in
/// the number of covariates. `ns_scale` shrinks the per-study sample sizes
/// for desk-scale runs.
inline ScenarioSpec scenario_preset(int which, double ns_scale = 1.0, int n_reps = 20,
                                    std::uint64_t seed = 0) {
  ScenarioSpec s;
  s.n_reps = n_reps;
  s.seed = seed;
  switch (which) {
    case 1:
      s.name = "scenario1";
      s.q = 3;
      s.q_s = 1;
      s.p_b = 2;
      s.p = 20;
      s.n_s = {500, 500};
      break;
    case 2:
      s.name = "scenario2";
      s.q = 4;
      s.q_s = 1;
      s.p_b = 7;
      s.p = 42;
      s.n_s = {1257, 1444, 2126, 4940, 2314, 897};
      break;
    case 3:
      s.name = "scenario3";
      s.q = 4;
      s.q_s = 1;
      s.p_b = 9;
      s.p = 42;
      s.n_s = {1257, 1444, 2126, 4940, 2314, 897};
      break;
    default:
      throw ParseError("unknown scenario " + std::to_string(which));
  }
  if (ns_scale != 1.0) {
    for (auto& n : s.n_s)
      n = std::max<Index>(Index(2), static_cast<Index>(std::lround(ns_scale * static_cast<double>(n))));
  }
  return s;
}

namespace detail {

/// Fills `count` uniformly chosen positions of a zero matrix using `draw`.
template <typename Draw>
Matrix sparse_loading(Index rows, Index cols, Rng& rng, Draw&& draw) {
  Matrix m = Matrix::Zero(rows, cols);
  const Index total = rows * cols;
  const Index count = (rows * cols) / 3;  // one-third of entries are non-zero
  std::vector<Index> pos(static_cast<std::size_t>(total));
  std::iota(pos.begin(), pos.end(), Index{0});
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, total - 1);
    std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(pick(rng))]);
    const Index idx = pos[static_cast<std::size_t>(i)];
    m(idx % rows, idx / rows) = draw(rng);
  }
  return m;
}

inline bool full_column_rank(const Matrix& m) {
  if (m.cols() == 0) return true;
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  qr.setThreshold(1e-10);
  return qr.rank() == m.cols();
}

}  // namespace detail

/// Ground-truth parameters for one replication: sparse loadings with
/// one-third non-zero entries (common entries sign * U(0.6, 1), specific
/// entries U(-1, 1)), uniform idiosyncratic variances floored away from
/// zero, and standard-normal regression coefficients. Regenerated until the
/// stacked loading matrix has full column rank.
inline Params generate_truth(const ScenarioSpec& spec, std::uint64_t seed) {
  const Index s_count = spec.n_studies();
  for (int attempt = 0; attempt < 100; ++attempt) {
    Params truth;
    Rng rng_phi = make_stream(seed, stream::kTruthPhi, static_cast<std::uint64_t>(attempt));
    std::uniform_real_distribution<double> mag(0.6, 1.0);
    std::uniform_int_distribution<int> coin(0, 1);
    truth.phi = detail::sparse_loading(spec.p, spec.q, rng_phi, [&](Rng& g) {
      const double v = mag(g);
      return coin(g) == 0 ? -v : v;
    });

    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (Index s = 0; s < s_count; ++s) {
      Rng rng_lam = make_stream(seed, stream::kTruthLambda,
                                static_cast<std::uint64_t>(attempt) * 1000 +
                                    static_cast<std::uint64_t>(s));
      truth.lambdas.push_back(
          detail::sparse_loading(spec.p, spec.q_s, rng_lam, [&](Rng& g) { return unit(g); }));
    }

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (Index s = 0; s < s_count; ++s) {
      Rng rng_psi = make_stream(seed, stream::kTruthPsi,
                                static_cast<std::uint64_t>(attempt) * 1000 +
                                    static_cast<std::uint64_t>(s));
      Vector psi(spec.p);
      for (Index i = 0; i < spec.p; ++i) psi(i) = std::max(u01(rng_psi), kPsiFloor);
      truth.psis.push_back(psi);
    }

    Rng rng_beta = make_stream(seed, stream::kTruthBeta, static_cast<std::uint64_t>(attempt));
    std::normal_distribution<double> gauss(0.0, 1.0);
    truth.beta = Matrix(spec.p, spec.p_b);
    for (Index j = 0; j < spec.p_b; ++j)
      for (Index i = 0; i < spec.p; ++i) truth.beta(i, j) = gauss(rng_beta);

    Matrix stacked(spec.p, spec.q + s_count * spec.q_s);
    stacked.leftCols(spec.q) = truth.phi;
    for (Index s = 0; s < s_count; ++s)
      stacked.middleCols(spec.q + s * spec.q_s, spec.q_s) = truth.lambdas[static_cast<std::size_t>(s)];
    if (detail::full_column_rank(stacked)) return truth;
  }
  throw DegenerateInput("generate_truth: could not reach full column rank in 100 attempts");
}

/// Samples covariates i.i.d. standard normal and responses from
/// N(beta b, Sigma_s) through the Cholesky factor of Sigma_s.
inline MultiStudyData generate_data(const Params& truth, const ScenarioSpec& spec,
                                    std::uint64_t seed) {
  MultiStudyData data;
  const MarginalCov sigmas = marginal_covariance(truth);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index s = 0; s < spec.n_studies(); ++s) {
    const Index n = spec.n_s[static_cast<std::size_t>(s)];
    StudyDataset st;
    st.study_id = "study" + std::to_string(s + 1);

    Rng rng_b = make_stream(seed, stream::kDataCovariates, static_cast<std::uint64_t>(s));
    st.B = Matrix(spec.p_b, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < spec.p_b; ++i) st.B(i, j) = gauss(rng_b);

    Eigen::LLT<Matrix> llt(sigmas[static_cast<std::size_t>(s)]);
    if (llt.info() != Eigen::Success)
      throw SingularSystem("generate_data: truth covariance is not positive definite");
    Rng rng_z = make_stream(seed, stream::kDataNoise, static_cast<std::uint64_t>(s));
    Matrix z(spec.p, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < spec.p; ++i) z(i, j) = gauss(rng_z);
    st.X = Matrix(llt.matrixL()) * z;
    if (spec.p_b > 0) st.X.noalias() += truth.beta * st.B;
    data.studies.push_back(std::move(st));
  }
  return data;
}

enum class MethodKind { MSFR, MSFA, FR, MSFA_LR };

inline const char* to_string(MethodKind m) {
  switch (m) {
    case MethodKind::MSFR: return "msfr";
    case MethodKind::MSFA: return "msfa";
    case MethodKind::FR: return "fr";
    case MethodKind::MSFA_LR: return "msfa-lr";
  }
  return "?";
}

inline MethodKind method_from_string(const std::string& s) {
  if (s == "msfr") return MethodKind::MSFR;
  if (s == "msfa") return MethodKind::MSFA;
  if (s == "fr") return MethodKind::FR;
  if (s == "msfa-lr" || s == "msfa_lr") return MethodKind::MSFA_LR;
  throw ParseError("unknown method '" + s + "'");
}

inline MultiStudyData strip_covariates(const MultiStudyData& data) {
  MultiStudyData out = data;
  for (auto& st : out.studies) st.B = Matrix(0, st.X.cols());
  return out;
}

/// Pooled multivariate least squares of the stacked responses on the
/// stacked covariates.
inline Matrix pooled_ols_beta(const MultiStudyData& data) {
  const Index p_b = data.p_b();
  if (p_b == 0) return Matrix(data.p(), 0);
  Matrix sxb = Matrix::Zero(data.p(), p_b);
  Matrix sbb = Matrix::Zero(p_b, p_b);
  for (const auto& st : data.studies) {
    sxb.noalias() += st.X * st.B.transpose();
    sbb.noalias() += st.B * st.B.transpose();
  }
  Eigen::LDLT<Matrix> ldlt(sbb);
  if (ldlt.info() != Eigen::Success ||
      !(ldlt.vectorD().cwiseAbs().minCoeff() > kSingularTol * ldlt.vectorD().cwiseAbs().maxCoeff()))
    throw SingularSystem("pooled_ols_beta: collinear covariates");
  return ldlt.solve(sxb.transpose()).transpose();
}

struct MethodFit {
  MethodKind method;
  SelectionOutcome outcome;  // grid fits and report
};

/// Runs the grid fits for one method. MSFA drops the covariates, FR drops
/// the study-specific factors, and MSFA&LR removes the covariates by a
/// separate least-squares step before an MSFA fit on the residuals (its
/// reported beta is the least-squares one).
inline MethodFit fit_method(MethodKind method, const MultiStudyData& data, const GridSpec& grid,
                            const ConvergenceConfig& config, std::uint64_t seed) {
  MethodFit out{method, {}};
  switch (method) {
    case MethodKind::MSFR: {
      out.outcome = select_with_fits(data, grid, config, seed, 1);
      break;
    }
    case MethodKind::MSFA: {
      out.outcome = select_with_fits(strip_covariates(data), grid, config, seed, 1);
      break;
    }
    case MethodKind::FR: {
      GridSpec g = grid;
      g.qs_values = {0};
      out.outcome = select_with_fits(data, g, config, seed, 1);
      break;
    }
    case MethodKind::MSFA_LR: {
      const Matrix beta = pooled_ols_beta(data);
      MultiStudyData resid = data;
      for (auto& st : resid.studies) {
        if (beta.cols() > 0) st.X -= beta * st.B;
        st.B = Matrix(0, st.X.cols());
      }
      out.outcome = select_with_fits(resid, grid, config, seed, 1);
      for (auto& f : out.outcome.fits)
        if (f) {
          f->params.beta = beta;
          f->raw_params.beta = beta;
        }
      break;
    }
  }
  return out;
}

struct MethodRvs {
  double rv_beta = std::numeric_limits<double>::quiet_NaN();
  double rv_phi = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> rv_lambda;  // per study
  std::vector<double> rv_sigma;   // per study
};

/// Similarity of a fitted parameter set to the generating truth; loadings
/// and coefficients are compared through their cross-products, covariances
/// directly.
inline MethodRvs compute_rvs(const Params& fitted, const Params& truth) {
  MethodRvs out;
  if (fitted.beta.cols() > 0 && truth.beta.cols() > 0)
    out.rv_beta = rv_coefficient(fitted.beta, truth.beta);
  if (fitted.phi.cols() > 0) out.rv_phi = rv_coefficient(fitted.phi, truth.phi);
  const MarginalCov fit_sigma = marginal_covariance(fitted);
  const MarginalCov true_sigma = marginal_covariance(truth);
  for (Index s = 0; s < truth.n_studies(); ++s) {
    const auto su = static_cast<std::size_t>(s);
    if (fitted.lambdas[su].cols() > 0 && truth.lambdas[su].cols() > 0)
      out.rv_lambda.push_back(rv_coefficient(fitted.lambdas[su], truth.lambdas[su]));
    else
      out.rv_lambda.push_back(std::numeric_limits<double>::quiet_NaN());
    out.rv_sigma.push_back(rv_coefficient_sym(fit_sigma[su], true_sigma[su]));
  }
  return out;
}

struct BenchmarkRow {
  int rep = 0;
  MethodKind method = MethodKind::MSFR;
  Criterion criterion = Criterion::BIC;
  Index q_hat = 0;
  Index qs_hat = 0;
  MethodRvs rvs;
  bool ok = false;
  std::string error;
};

struct BenchmarkSummary {
  MethodKind method;
  Criterion criterion;
  int n_ok = 0;
  double mean_q = 0, mean_qs = 0;
  double mean_rv_beta = 0, mean_rv_phi = 0;
  std::vector<double> mean_rv_lambda, mean_rv_sigma;
};

struct BenchmarkReport {
  ScenarioSpec spec;
  std::vector<BenchmarkRow> rows;  // rep x method x criterion
  std::vector<BenchmarkSummary> summaries;
  int n_failed = 0;
};

/// Grid used in the scenario benchmarks: all values up to two above the
/// generating dimension.
inline GridSpec default_grid(const ScenarioSpec& spec, Criterion criterion = Criterion::BIC) {
  GridSpec g;
  g.criterion = criterion;
  for (Index q = 1; q <= spec.q + 2; ++q) g.q_values.push_back(q);
  for (Index qs = 1; qs <= spec.q_s + 2; ++qs) g.qs_values.push_back(qs);
  return g;
}

/// Full replication loop: per replication, draw a truth and a dataset, run
/// every method over the grid once, then read off the AIC- and BIC-selected
/// models and their similarity to the truth. Replications are independent
/// and seeded as seed + replication index.
inline BenchmarkReport run_benchmark(const ScenarioSpec& spec,
                                     const std::vector<MethodKind>& methods, const GridSpec& grid,
                                     const ConvergenceConfig& config, unsigned max_threads = 0) {
  BenchmarkReport report;
  report.spec = spec;
  const std::array<Criterion, 2> criteria{Criterion::AIC, Criterion::BIC};
  const std::size_t per_rep = methods.size() * criteria.size();
  report.rows.resize(static_cast<std::size_t>(spec.n_reps) * per_rep);

  parallel_for(static_cast<std::size_t>(spec.n_reps), [&](std::size_t rep) {
    const std::uint64_t rep_seed = spec.seed + rep;
    Params truth;
    MultiStudyData data;
    std::string gen_error;
    try {
      truth = generate_truth(spec, rep_seed);
      data = generate_data(truth, spec, rep_seed);
    } catch (const Error& e) {
      gen_error = e.what();
    }
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      SelectionOutcome outcome;
      std::string fit_error = gen_error;
      if (fit_error.empty()) {
        try {
          outcome = fit_method(methods[mi], data, grid, config, rep_seed).outcome;
        } catch (const Error& e) {
          fit_error = e.what();
        }
      }
      for (std::size_t ci = 0; ci < criteria.size(); ++ci) {
        BenchmarkRow row;
        row.rep = static_cast<int>(rep);
        row.method = methods[mi];
        row.criterion = criteria[ci];
        if (fit_error.empty()) {
          const int chosen =
              choose_best(outcome.report.rows, criteria[ci], data.n_studies());
          if (chosen >= 0 && outcome.fits[static_cast<std::size_t>(chosen)]) {
            const auto& fr = *outcome.fits[static_cast<std::size_t>(chosen)];
            row.q_hat = outcome.report.rows[static_cast<std::size_t>(chosen)].q;
            row.qs_hat = outcome.report.rows[static_cast<std::size_t>(chosen)].qs;
            row.rvs = compute_rvs(fr.params, truth);
            row.ok = true;
          } else {
            row.error = "no converged grid point";
          }
        } else {
          row.error = fit_error;
        }
        report.rows[rep * per_rep + mi * criteria.size() + ci] = row;
      }
    }
  }, max_threads);

  // Aggregate means over successful replications, in fixed order.
  for (MethodKind m : methods) {
    for (Criterion c : criteria) {
      BenchmarkSummary sum;
      sum.method = m;
      sum.criterion = c;
      sum.mean_rv_lambda.assign(static_cast<std::size_t>(spec.n_studies()), 0.0);
      sum.mean_rv_sigma.assign(static_cast<std::size_t>(spec.n_studies()), 0.0);
      int n_beta = 0, n_phi = 0;
      std::vector<int> n_lambda(static_cast<std::size_t>(spec.n_studies()), 0);
      for (const auto& row : report.rows) {
        if (row.method != m || row.criterion != c) continue;
        if (!row.ok) continue;
        ++sum.n_ok;
        sum.mean_q += static_cast<double>(row.q_hat);
        sum.mean_qs += static_cast<double>(row.qs_hat);
        if (!std::isnan(row.rvs.rv_beta)) {
          sum.mean_rv_beta += row.rvs.rv_beta;
          ++n_beta;
        }
        if (!std::isnan(row.rvs.rv_phi)) {
          sum.mean_rv_phi += row.rvs.rv_phi;
          ++n_phi;
        }
        for (std::size_t s = 0; s < sum.mean_rv_lambda.size(); ++s) {
          if (!std::isnan(row.rvs.rv_lambda[s])) {
            sum.mean_rv_lambda[s] += row.rvs.rv_lambda[s];
            ++n_lambda[s];
          }
          sum.mean_rv_sigma[s] += row.rvs.rv_sigma[s];
        }
      }
      if (sum.n_ok > 0) {
        sum.mean_q /= sum.n_ok;
        sum.mean_qs /= sum.n_ok;
        for (auto& v : sum.mean_rv_sigma) v /= sum.n_ok;
      }
      sum.mean_rv_beta = n_beta > 0 ? sum.mean_rv_beta / n_beta
                                    : std::numeric_limits<double>::quiet_NaN();
      sum.mean_rv_phi =
          n_phi > 0 ? sum.mean_rv_phi / n_phi : std::numeric_limits<double>::quiet_NaN();
      for (std::size_t s = 0; s < sum.mean_rv_lambda.size(); ++s)
        sum.mean_rv_lambda[s] = n_lambda[s] > 0
                                    ? sum.mean_rv_lambda[s] / n_lambda[s]
                                    : std::numeric_limits<double>::quiet_NaN();
      report.summaries.push_back(std::move(sum));
    }
  }
  for (const auto& row : report.rows)
    if (!row.ok) ++report.n_failed;
  return report;
}

}  // namespace msfr
