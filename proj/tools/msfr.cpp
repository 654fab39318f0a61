// Command-line front end: simulate benchmark datasets, fit and select
// multi-study factor regression models, export factor scores, and run the
// cross-validation and scenario benchmarks.

#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "msfr/msfr.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<msfr::Index> parse_grid(const std::string& text) {
  std::vector<msfr::Index> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      values.push_back(static_cast<msfr::Index>(std::stol(item)));
    } catch (const std::exception&) {
      throw msfr::ParseError("bad grid value '" + item + "'");
    }
  }
  if (values.empty()) throw msfr::ParseError("empty grid '" + text + "'");
  return values;
}

std::vector<msfr::MethodKind> parse_methods(const std::string& text) {
  std::vector<msfr::MethodKind> methods;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) methods.push_back(msfr::method_from_string(item));
  if (methods.empty()) throw msfr::ParseError("no methods given");
  return methods;
}

msfr::Criterion parse_criterion(std::string text) {
  for (auto& c : text) c = static_cast<char>(std::tolower(c));
  if (text == "aic") return msfr::Criterion::AIC;
  if (text == "bic") return msfr::Criterion::BIC;
  throw msfr::ParseError("criterion must be 'aic' or 'bic', got '" + text + "'");
}

msfr::ScoreMethod parse_score(std::string text) {
  for (auto& c : text) c = static_cast<char>(std::tolower(c));
  if (text == "bartlett") return msfr::ScoreMethod::Bartlett;
  if (text == "thurstone") return msfr::ScoreMethod::Thurstone;
  throw msfr::ParseError("score method must be 'bartlett' or 'thurstone', got '" + text + "'");
}

/// Reproducibility record: everything needed to re-run the command.
void write_run_record(const fs::path& out_dir, const std::string& command, const json& config,
                      std::uint64_t seed, double wall_seconds) {
  fs::create_directories(out_dir);
  json record;
  record["tool"] = "msfr";
  record["version"] = msfr::kVersion;
  record["command"] = command;
  record["config"] = config;
  record["seed"] = seed;
  record["wall_time_seconds"] = wall_seconds;
  record["timestamp_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count();
  std::ofstream out(out_dir / "run_record.json");
  out << record.dump(2) << "\n";
}

int exit_code(msfr::ErrorCategory cat) {
  switch (cat) {
    case msfr::ErrorCategory::ShapeMismatch: return 3;
    case msfr::ErrorCategory::RankConstraintViolated: return 4;
    case msfr::ErrorCategory::NonFiniteData: return 5;
    case msfr::ErrorCategory::SingularSystem: return 6;
    case msfr::ErrorCategory::DegenerateInput: return 7;
    case msfr::ErrorCategory::ParseError: return 8;
    case msfr::ErrorCategory::TooFewSubjects: return 9;
    case msfr::ErrorCategory::AllFitsFailed: return 10;
  }
  return 1;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-study factor regression toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may appear after the subcommand
  app.set_config("--config", "", "Read options from an INI/TOML file");

  std::uint64_t seed = 0;
  std::string out_dir = "msfr_out";
  double eps = 1e-7;
  long max_iter = 50000;
  unsigned threads = 0;
  app.add_option("--seed", seed, "Base random seed")->capture_default_str();
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--eps", eps, "Convergence tolerance")->capture_default_str();
  app.add_option("--max-iter", max_iter, "Maximum ECM iterations")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Write a synthetic dataset and its ground truth");
  int scenario = 1;
  double ns_scale = 1.0;
  sim->add_option("--scenario", scenario, "Scenario preset (1, 2 or 3)")
      ->check(CLI::IsMember({1, 2, 3}))
      ->capture_default_str();
  sim->add_option("--ns-scale", ns_scale, "Scale factor for per-study sample sizes")
      ->capture_default_str();

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit the model at one latent dimension");
  std::string data_path;
  std::string truth_dir;
  long q = 1, qs = 1;
  fit_cmd->add_option("--data", data_path, "Dataset manifest")->required();
  fit_cmd->add_option("--q", q, "Number of common factors")->capture_default_str();
  fit_cmd->add_option("--qs", qs, "Number of study-specific factors (all studies)")
      ->capture_default_str();
  fit_cmd->add_option("--truth", truth_dir,
                      "Directory with ground-truth parameter CSVs; prints RV diagnostics");

  // select
  auto* sel = app.add_subcommand("select", "Grid search over latent dimensions");
  std::string q_grid = "1,2,3,4,5";
  std::string qs_grid = "1,2,3";
  std::string criterion_name = "bic";
  sel->add_option("--data", data_path, "Dataset manifest")->required();
  sel->add_option("--q-grid", q_grid, "Comma-separated q values")->capture_default_str();
  sel->add_option("--qs-grid", qs_grid, "Comma-separated q_s values")->capture_default_str();
  sel->add_option("--criterion", criterion_name, "aic or bic")->capture_default_str();

  // score
  auto* score_cmd = app.add_subcommand("score", "Factor scores for a fitted model");
  std::string params_dir;
  std::string score_name = "bartlett";
  score_cmd->add_option("--data", data_path, "Dataset manifest")->required();
  score_cmd->add_option("--params", params_dir, "Directory with fitted parameter CSVs")
      ->required();
  score_cmd->add_option("--score", score_name, "bartlett or thurstone")->capture_default_str();

  // cv
  auto* cv_cmd = app.add_subcommand("cv", "k-fold prediction-error comparison");
  int k_folds = 5;
  std::string methods_name = "msfr,msfa";
  cv_cmd->add_option("--data", data_path, "Dataset manifest")->required();
  cv_cmd->add_option("--q", q, "Number of common factors")->capture_default_str();
  cv_cmd->add_option("--qs", qs, "Number of study-specific factors")->capture_default_str();
  cv_cmd->add_option("--k", k_folds, "Number of folds")->capture_default_str();
  cv_cmd->add_option("--methods,--method", methods_name, "Comma-separated methods")->capture_default_str();

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "Scenario benchmark against the ground truth");
  int reps = 20;
  bench->add_option("--scenario", scenario, "Scenario preset (1, 2 or 3)")
      ->check(CLI::IsMember({1, 2, 3}))
      ->capture_default_str();
  bench->add_option("--reps", reps, "Replications")->capture_default_str();
  bench->add_option("--ns-scale", ns_scale, "Scale factor for per-study sample sizes")
      ->capture_default_str();
  bench->add_option("--criterion", criterion_name, "aic or bic (summary highlight)")
      ->capture_default_str();
  bench->add_option("--methods,--method", methods_name, "Comma-separated methods")
      ->default_val("msfr,msfa,fr,msfa-lr");

  CLI11_PARSE(app, argc, argv);

  Timer timer;
  const fs::path out(out_dir);
  msfr::ConvergenceConfig config;
  config.eps_star = eps;
  config.max_iter = max_iter;

  std::string command_line;
  for (int i = 0; i < argc; ++i) {
    if (i > 0) command_line += ' ';
    command_line += argv[i];
  }

  try {
    if (*sim) {
      msfr::ScenarioSpec spec = msfr::scenario_preset(scenario, ns_scale, 1, seed);
      const msfr::Params truth = msfr::generate_truth(spec, seed);
      const msfr::MultiStudyData data = msfr::generate_data(truth, spec, seed);
      msfr::io::save_multistudy(out / "data", data);
      msfr::io::save_params(out / "truth", truth);
      json cfg{{"scenario", scenario}, {"ns_scale", ns_scale}};
      write_run_record(out, command_line, cfg, seed, timer.seconds());
      std::cout << "wrote dataset (" << data.n_studies() << " studies, p=" << data.p()
                << ") to " << (out / "data").string() << "\n";
    } else if (*fit_cmd) {
      const msfr::MultiStudyData data = msfr::io::load_multistudy(data_path);
      const msfr::ModelDims dims = msfr::ModelDims::from_data(data, q, qs);
      msfr::validate(data, dims);
      const msfr::Params start = msfr::initialize(data, dims, seed);
      const msfr::FitResult result = msfr::fit(data, dims, config, start);
      std::vector<std::string> ids;
      for (const auto& st : data.studies) ids.push_back(st.study_id);
      msfr::io::save_fit(out / "fit", result, ids);
      json cfg{{"data", data_path}, {"q", q}, {"qs", qs},
               {"eps", eps},        {"max_iter", max_iter}};
      write_run_record(out, command_line, cfg, seed, timer.seconds());
      std::cout << "loglik=" << result.observed_loglik << " aic=" << result.aic
                << " bic=" << result.bic << " iters=" << result.n_iter
                << (result.converged ? "" : " (not converged)") << "\n";
      if (!truth_dir.empty()) {
        const msfr::Params truth = msfr::io::load_params(truth_dir);
        const msfr::MethodRvs rvs = msfr::compute_rvs(result.params, truth);
        for (std::size_t s = 0; s < rvs.rv_sigma.size(); ++s)
          std::cout << "rv_sigma" << (s + 1) << "=" << rvs.rv_sigma[s] << "\n";
      }
    } else if (*sel) {
      const msfr::MultiStudyData data = msfr::io::load_multistudy(data_path);
      msfr::GridSpec grid;
      grid.q_values = parse_grid(q_grid);
      grid.qs_values = parse_grid(qs_grid);
      grid.criterion = parse_criterion(criterion_name);
      const msfr::SelectionOutcome outcome =
          msfr::select_with_fits(data, grid, config, seed, threads);
      fs::create_directories(out);
      msfr::io::save_selection_report(out / "selection_report.csv", outcome.report);
      const auto& chosen = outcome.report.rows[static_cast<std::size_t>(outcome.report.chosen)];
      if (outcome.fits[static_cast<std::size_t>(outcome.report.chosen)]) {
        std::vector<std::string> ids;
        for (const auto& st : data.studies) ids.push_back(st.study_id);
        msfr::io::save_fit(out / "best_fit",
                           *outcome.fits[static_cast<std::size_t>(outcome.report.chosen)], ids);
      }
      json cfg{{"data", data_path},   {"q_grid", q_grid},
               {"qs_grid", qs_grid},  {"criterion", criterion_name},
               {"eps", eps},          {"max_iter", max_iter}};
      write_run_record(out, command_line, cfg, seed, timer.seconds());
      std::cout << "selected q=" << chosen.q << " qs=" << chosen.qs << " by "
                << criterion_name << "\n";
    } else if (*score_cmd) {
      msfr::MultiStudyData data = msfr::io::load_multistudy(data_path);
      const msfr::Params params = msfr::io::load_params(params_dir);
      const msfr::ScoreMethod method = parse_score(score_name);
      // a covariate-free fit scores the raw responses
      if (params.beta.cols() == 0 && data.p_b() > 0) data = msfr::strip_covariates(data);
      const std::vector<msfr::Matrix> xtilde = msfr::residualize(data, params.beta);
      const msfr::ScoreMatrix scores = method == msfr::ScoreMethod::Bartlett
                                           ? msfr::bartlett_scores(xtilde, params)
                                           : msfr::thurstone_scores(xtilde, params);
      std::vector<std::string> ids;
      for (const auto& st : data.studies) ids.push_back(st.study_id);
      msfr::io::save_scores(out, scores, ids);
      json cfg{{"data", data_path}, {"params", params_dir}, {"score", score_name}};
      write_run_record(out, command_line, cfg, seed, timer.seconds());
      std::cout << "wrote " << score_name << " scores for " << data.n_studies()
                << " studies to " << out.string() << "\n";
    } else if (*cv_cmd) {
      const msfr::MultiStudyData data = msfr::io::load_multistudy(data_path);
      const msfr::ModelDims dims = msfr::ModelDims::from_data(data, q, qs);
      msfr::CVSpec cvspec;
      cvspec.k = k_folds;
      cvspec.seed = seed;
      const std::vector<msfr::MethodKind> methods = parse_methods(methods_name);
      const msfr::CvReport report = msfr::cv_mse(data, dims, config, cvspec, methods, threads);
      fs::create_directories(out);
      msfr::io::save_cv_report(out / "cv_mse.csv", report);
      json cfg{{"data", data_path}, {"q", q},          {"qs", qs},
               {"k", k_folds},      {"methods", methods_name}, {"eps", eps}};
      write_run_record(out, command_line, cfg, seed, timer.seconds());
      for (std::size_t mi = 0; mi < methods.size(); ++mi)
        std::cout << to_string(methods[mi])
                  << ": bartlett=" << report.cells[mi][0].mse_per_entry
                  << " thurstone=" << report.cells[mi][1].mse_per_entry << "\n";
    } else if (*bench) {
      msfr::ScenarioSpec spec = msfr::scenario_preset(scenario, ns_scale, reps, seed);
      const msfr::GridSpec grid = msfr::default_grid(spec, parse_criterion(criterion_name));
      const std::vector<msfr::MethodKind> methods = parse_methods(methods_name);
      const msfr::BenchmarkReport report = msfr::run_benchmark(spec, methods, grid, config, threads);
      msfr::io::save_benchmark(out, report);
      json cfg{{"scenario", scenario}, {"reps", reps},
               {"ns_scale", ns_scale}, {"criterion", criterion_name},
               {"methods", methods_name}, {"eps", eps}, {"max_iter", max_iter}};
      write_run_record(out, command_line, cfg, seed, timer.seconds());
      for (const auto& s : report.summaries) {
        if (to_string(s.criterion) != criterion_name) continue;
        std::cout << to_string(s.method) << " [" << to_string(s.criterion)
                  << "]: q=" << s.mean_q << " qs=" << s.mean_qs << " rv_phi=" << s.mean_rv_phi
                  << "\n";
      }
      if (report.n_failed > 0)
        std::cout << "replication failures: " << report.n_failed << "\n";
    }
  } catch (const msfr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
