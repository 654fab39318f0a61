#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "msfr/ecm.hpp"
#include "msfr/model.hpp"
#include "msfr/scores.hpp"

namespace msfr {

struct FitResult {
  Params params;      // identified (rotated, sign-fixed)
  Params raw_params;  // as converged, before the identification pass
  std::vector<double> loglik_trace;  // observed log-likelihood per iteration
  std::vector<double> lc_trace;      // complete-data surrogate used for stopping
  Index n_iter = 0;
  bool converged = false;
  double observed_loglik = std::numeric_limits<double>::quiet_NaN();
  double aic = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
  ExplainedVariance explained;
};

namespace detail {

/// Stopping statistic on the surrogate log-likelihood sequence. Successive
/// accelerated values are compared; whenever the acceleration is undefined
/// (fewer than three points, non-positive or vanishing denominator) the raw
/// increment is used instead.
class AitkenStop {
 public:
  explicit AitkenStop(bool use_aitken) : use_aitken_(use_aitken) {}

  double push(double lc) {
    values_.push_back(lc);
    const std::size_t t = values_.size();
    if (t < 2) return std::numeric_limits<double>::infinity();
    const double d1 = values_[t - 1] - values_[t - 2];
    double stat = std::numeric_limits<double>::quiet_NaN();
    if (use_aitken_ && t >= 3) {
      const double d0 = values_[t - 2] - values_[t - 3];
      if (d0 > 1e-300) {
        const double c = d1 / d0;
        if (c < 1.0) stat = values_[t - 2] + d1 / (1.0 - c);
      }
    }
    double eps;
    if (std::isnan(stat)) {
      eps = std::abs(d1);
    } else if (std::isnan(prev_stat_)) {
      eps = std::abs(stat - values_[t - 2]);
    } else {
      eps = std::abs(stat - prev_stat_);
    }
    prev_stat_ = stat;
    return eps;
  }

 private:
  bool use_aitken_;
  std::vector<double> values_;
  double prev_stat_ = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace detail

/// One full ECM pass over the four conditional-maximization blocks, in the
/// order Psi, Phi, Lambda, beta; each block sees the freshest values of the
/// blocks updated before it. The E-step moments stay fixed within the pass.
inline void ecm_cycle(const std::vector<StudyStats>& stats, const std::vector<EStepMoments>& moments,
                      const std::vector<Index>& n_s, Params& params) {
  const std::size_t s_count = stats.size();
  const Matrix beta_estep = params.beta;

  for (std::size_t s = 0; s < s_count; ++s)
    params.psis[s] = cm_psi(moments[s], params.phi, params.lambdas[s]);

  params.phi = cm_phi(moments, params.lambdas, params.psis, n_s);

  for (std::size_t s = 0; s < s_count; ++s)
    params.lambdas[s] = cm_lambda(moments[s], params.phi);

  if (params.beta.cols() > 0)
    params.beta =
        cm_beta_from_stats(stats, moments, params.phi, params.lambdas, beta_estep, params.psis);
}

/// Fits the model by ECM from the given starting point. Records the
/// observed log-likelihood at every iterate (for monotonicity checks and
/// the information criteria) and the complete-data surrogate driving the
/// accelerated stopping rule.
inline FitResult fit(const MultiStudyData& data, const ModelDims& dims,
                     const ConvergenceConfig& config, const Params& init) {
  validate(data, dims);
  if (init.p() != dims.p || init.q() != dims.q || init.p_b() != dims.p_b ||
      init.n_studies() != dims.n_studies())
    throw ShapeMismatch("fit: initial parameters do not match dims");
  for (Index s = 0; s < dims.n_studies(); ++s)
    if (init.q_s(s) != dims.q_s[static_cast<std::size_t>(s)])
      throw ShapeMismatch("fit: initial q_s mismatch in study " + std::to_string(s));

  const std::vector<StudyStats> stats = compute_stats(data);
  const std::size_t s_count = stats.size();

  Params params = init;
  for (auto& psi : params.psis) psi = psi.cwiseMax(kPsiFloor);

  FitResult result;
  detail::AitkenStop stop(config.use_aitken);
  std::vector<EStepMoments> moments(s_count);
  std::vector<Matrix> c_xx(s_count);

  Index t = 0;
  while (true) {
    for (std::size_t s = 0; s < s_count; ++s) {
      c_xx[s] = cxx_from_stats(stats[s], params.beta);
      moments[s] = e_step_from_cxx(c_xx[s], params.phi, params.lambdas[s], params.psis[s]);
    }
    result.loglik_trace.push_back(observed_loglik_from_cxx(c_xx, params, dims.n_s));
    const double lc = expected_complete_loglik(params, moments, dims.n_s);
    result.lc_trace.push_back(lc);

    const double eps = stop.push(lc);
    if (eps < config.eps_star) {
      result.converged = true;
      break;
    }
    if (t >= config.max_iter) break;

    ecm_cycle(stats, moments, dims.n_s, params);
    ++t;
  }

  result.n_iter = t;
  result.raw_params = params;
  result.params = identify(params);
  result.observed_loglik = result.loglik_trace.back();
  const double k = static_cast<double>(n_free_params(dims));
  const double n = static_cast<double>(dims.total_n());
  result.aic = -2.0 * result.observed_loglik + 2.0 * k;
  result.bic = -2.0 * result.observed_loglik + k * std::log(n);
  result.explained = explained_variance(result.params, dims.n_s);
  return result;
}

}  // namespace msfr
