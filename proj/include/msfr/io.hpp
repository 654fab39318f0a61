#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msfr/crossval.hpp"
#include "msfr/errors.hpp"
#include "msfr/fit.hpp"
#include "msfr/init.hpp"
#include "msfr/model.hpp"
#include "msfr/scores.hpp"
#include "msfr/simulate.hpp"

namespace msfr {

namespace io {

namespace fs = std::filesystem;

/// 17 significant digits: doubles survive a write/read round trip exactly.
inline std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Csv {
  std::vector<std::string> header;
  Matrix values;  // rows x cols as laid out in the file
};

inline void write_csv(const fs::path& path, const Matrix& values,
                      const std::vector<std::string>& header, bool full_precision = true) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j > 0) out << ',';
    out << header[j];
  }
  out << '\n';
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      if (j > 0) out << ',';
      out << (full_precision ? format_full(values(i, j)) : format_short(values(i, j)));
    }
    out << '\n';
  }
}

inline std::vector<std::string> default_header(const std::string& prefix, Index count) {
  std::vector<std::string> h;
  for (Index j = 0; j < count; ++j) h.push_back(prefix + std::to_string(j + 1));
  return h;
}

inline Csv read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  Csv csv;
  std::string line;
  std::vector<std::vector<double>> rows;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (line_no == 1) {
      while (std::getline(ss, cell, ',')) csv.header.push_back(cell);
      continue;
    }
    std::vector<double> row;
    std::size_t begin = 0;
    while (begin <= line.size()) {
      const std::size_t end = line.find(',', begin);
      cell = line.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
      begin = end == std::string::npos ? line.size() + 1 : end + 1;
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                         cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(rows.front().size()) + " fields, got " +
                       std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (!rows.empty() && !csv.header.empty() && rows.front().size() != csv.header.size())
    throw ParseError(path.string() + ":2: row width does not match header");
  csv.values = Matrix(static_cast<Index>(rows.size()),
                      rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      csv.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return csv;
}

/// Manifest format: one study block per entry, key-value lines.
///   study <id>
///   data <csv path, subjects in rows>
///   covariates <csv path, optional>
/// Paths are resolved relative to the manifest location.
inline MultiStudyData load_multistudy(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ParseError("cannot open manifest '" + manifest.string() + "'");
  const fs::path base = manifest.parent_path();

  struct Entry {
    std::string id, data, covariates;
  };
  std::vector<Entry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream ss(line);
    std::string key;
    ss >> key;
    if (key.empty() || key[0] == '#') continue;
    std::string value;
    std::getline(ss, value);
    const auto start = value.find_first_not_of(" \t");
    value = start == std::string::npos ? "" : value.substr(start);
    if (key == "study") {
      entries.push_back({value, "", ""});
    } else if (key == "data" || key == "covariates") {
      if (entries.empty())
        throw ParseError(manifest.string() + ":" + std::to_string(line_no) +
                         ": '" + key + "' before any 'study' line");
      (key == "data" ? entries.back().data : entries.back().covariates) = value;
    } else {
      throw ParseError(manifest.string() + ":" + std::to_string(line_no) + ": unknown key '" +
                       key + "'");
    }
  }
  if (entries.empty()) throw ParseError(manifest.string() + ": no studies listed");

  MultiStudyData data;
  for (const auto& e : entries) {
    if (e.data.empty())
      throw ParseError(manifest.string() + ": study '" + e.id + "' has no data file");
    StudyDataset st;
    st.study_id = e.id;
    st.X = read_csv(base / e.data).values.transpose();  // stored p x n_s
    if (!e.covariates.empty())
      st.B = read_csv(base / e.covariates).values.transpose();
    else
      st.B = Matrix(0, st.X.cols());
    data.studies.push_back(std::move(st));
  }

  const Index p = data.p();
  const Index p_b = data.p_b();
  for (const auto& st : data.studies) {
    if (st.X.rows() != p)
      throw ShapeMismatch("study '" + st.study_id + "': " + std::to_string(st.X.rows()) +
                          " variables, expected " + std::to_string(p));
    if (st.B.rows() != p_b)
      throw ShapeMismatch("study '" + st.study_id + "': " + std::to_string(st.B.rows()) +
                          " covariates, expected " + std::to_string(p_b) +
                          " (covariate files must be present for all studies or none)");
    if (st.B.rows() > 0 && st.B.cols() != st.X.cols())
      throw ShapeMismatch("study '" + st.study_id + "': covariate rows do not match subjects");
  }
  return data;
}

inline void save_params(const fs::path& dir, const Params& params) {
  fs::create_directories(dir);
  write_csv(dir / "beta.csv", params.beta, default_header("b", params.beta.cols()));
  write_csv(dir / "phi.csv", params.phi, default_header("F", params.phi.cols()));
  for (Index s = 0; s < params.n_studies(); ++s) {
    const auto su = static_cast<std::size_t>(s);
    write_csv(dir / ("lambda_" + std::to_string(s + 1) + ".csv"), params.lambdas[su],
              default_header("L", params.lambdas[su].cols()));
    write_csv(dir / ("psi_" + std::to_string(s + 1) + ".csv"), params.psis[su],
              {"psi"});
  }
}

inline Params load_params(const fs::path& dir) {
  Params params;
  params.beta = read_csv(dir / "beta.csv").values;
  params.phi = read_csv(dir / "phi.csv").values;
  for (Index s = 1;; ++s) {
    const fs::path lam = dir / ("lambda_" + std::to_string(s) + ".csv");
    const fs::path psi = dir / ("psi_" + std::to_string(s) + ".csv");
    if (!fs::exists(lam) || !fs::exists(psi)) break;
    params.lambdas.push_back(read_csv(lam).values);
    params.psis.push_back(Vector(read_csv(psi).values.col(0)));
  }
  if (params.lambdas.empty()) throw ParseError("no lambda_*.csv files in '" + dir.string() + "'");
  // A 0-column beta loses its row count through the CSV round trip.
  if (params.beta.cols() == 0) params.beta = Matrix(params.phi.rows(), 0);
  return params;
}

inline void save_selection_report(const fs::path& path, const SelectionReport& report) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
  out << "q,q_s,aic,bic,loglik,n_params,converged,chosen,error\n";
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    out << r.q << ',' << r.qs << ',' << format_full(r.aic) << ',' << format_full(r.bic) << ','
        << format_full(r.loglik) << ',' << r.n_params << ',' << (r.converged ? 1 : 0) << ','
        << (static_cast<int>(i) == report.chosen ? 1 : 0) << ',' << r.error << '\n';
  }
}

inline void save_scores(const fs::path& dir, const ScoreMatrix& scores,
                        const std::vector<std::string>& study_ids) {
  fs::create_directories(dir);
  for (std::size_t s = 0; s < scores.by_study.size(); ++s) {
    const auto& sc = scores.by_study[s];
    Matrix table(sc.common.cols(), sc.common.rows() + sc.specific.rows());
    table.leftCols(sc.common.rows()) = sc.common.transpose();
    table.rightCols(sc.specific.rows()) = sc.specific.transpose();
    std::vector<std::string> header = default_header("F", sc.common.rows());
    const auto lh = default_header("L", sc.specific.rows());
    header.insert(header.end(), lh.begin(), lh.end());
    write_csv(dir / (std::string(to_string(scores.method)) + "_scores_" + study_ids[s] + ".csv"),
              table, header);
  }
}

inline void save_benchmark(const fs::path& dir, const BenchmarkReport& report) {
  fs::create_directories(dir);
  const Index s_count = report.spec.n_studies();
  {
    std::ofstream out(dir / "benchmark_raw.csv");
    out << "rep,method,criterion,q_hat,qs_hat,rv_beta,rv_phi";
    for (Index s = 0; s < s_count; ++s) out << ",rv_lambda" << (s + 1);
    for (Index s = 0; s < s_count; ++s) out << ",rv_sigma" << (s + 1);
    out << ",ok,error\n";
    for (const auto& r : report.rows) {
      out << r.rep << ',' << to_string(r.method) << ',' << to_string(r.criterion) << ','
          << r.q_hat << ',' << r.qs_hat << ',' << format_short(r.rvs.rv_beta) << ','
          << format_short(r.rvs.rv_phi);
      for (Index s = 0; s < s_count; ++s)
        out << ',' << (r.ok ? format_short(r.rvs.rv_lambda[static_cast<std::size_t>(s)]) : "nan");
      for (Index s = 0; s < s_count; ++s)
        out << ',' << (r.ok ? format_short(r.rvs.rv_sigma[static_cast<std::size_t>(s)]) : "nan");
      out << ',' << (r.ok ? 1 : 0) << ',' << r.error << '\n';
    }
  }
  {
    std::ofstream out(dir / "benchmark_summary.csv");
    out << "criterion,method,mean_q,mean_qs,rv_beta,rv_phi";
    for (Index s = 0; s < s_count; ++s) out << ",rv_lambda" << (s + 1);
    for (Index s = 0; s < s_count; ++s) out << ",rv_sigma" << (s + 1);
    out << ",n_ok\n";
    for (const auto& m : report.summaries) {
      out << to_string(m.criterion) << ',' << to_string(m.method) << ','
          << format_short(m.mean_q) << ',' << format_short(m.mean_qs) << ','
          << format_short(m.mean_rv_beta) << ',' << format_short(m.mean_rv_phi);
      for (double v : m.mean_rv_lambda) out << ',' << format_short(v);
      for (double v : m.mean_rv_sigma) out << ',' << format_short(v);
      out << ',' << m.n_ok << '\n';
    }
  }
  {
    // Long format, one RV value per line, for external box plotting.
    std::ofstream out(dir / "benchmark_long.csv");
    out << "rep,method,criterion,quantity,value\n";
    auto emit = [&](const BenchmarkRow& r, const std::string& name, double v) {
      if (std::isnan(v)) return;
      out << r.rep << ',' << to_string(r.method) << ',' << to_string(r.criterion) << ',' << name
          << ',' << format_short(v) << '\n';
    };
    for (const auto& r : report.rows) {
      if (!r.ok) continue;
      emit(r, "q_hat", static_cast<double>(r.q_hat));
      emit(r, "qs_hat", static_cast<double>(r.qs_hat));
      emit(r, "rv_beta", r.rvs.rv_beta);
      emit(r, "rv_phi", r.rvs.rv_phi);
      for (Index s = 0; s < s_count; ++s)
        emit(r, "rv_lambda" + std::to_string(s + 1), r.rvs.rv_lambda[static_cast<std::size_t>(s)]);
      for (Index s = 0; s < s_count; ++s)
        emit(r, "rv_sigma" + std::to_string(s + 1), r.rvs.rv_sigma[static_cast<std::size_t>(s)]);
    }
  }
}

inline void save_cv_report(const fs::path& path, const CvReport& report) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
  out << "method";
  for (ScoreMethod sm : report.score_methods)
    out << ',' << to_string(sm) << "_per_entry," << to_string(sm) << "_per_subject";
  out << '\n';
  for (std::size_t mi = 0; mi < report.methods.size(); ++mi) {
    out << to_string(report.methods[mi]);
    for (std::size_t si = 0; si < report.score_methods.size(); ++si)
      out << ',' << format_short(report.cells[mi][si].mse_per_entry) << ','
          << format_short(report.cells[mi][si].mse_per_subject);
    out << '\n';
  }
}

inline void save_fit(const fs::path& dir, const FitResult& result,
                     const std::vector<std::string>& study_ids) {
  fs::create_directories(dir);
  save_params(dir / "params", result.params);
  save_params(dir / "raw_params", result.raw_params);
  {
    Matrix trace(static_cast<Index>(result.loglik_trace.size()), 2);
    for (std::size_t i = 0; i < result.loglik_trace.size(); ++i) {
      trace(static_cast<Index>(i), 0) = result.loglik_trace[i];
      trace(static_cast<Index>(i), 1) = result.lc_trace[i];
    }
    write_csv(dir / "trace.csv", trace, {"observed_loglik", "expected_complete_loglik"});
  }
  {
    std::ofstream out(dir / "summary.csv");
    out << "n_iter,converged,observed_loglik,aic,bic\n";
    out << result.n_iter << ',' << (result.converged ? 1 : 0) << ','
        << format_full(result.observed_loglik) << ',' << format_full(result.aic) << ','
        << format_full(result.bic) << '\n';
  }
  {
    std::ofstream out(dir / "explained_variance.csv");
    out << "scope,factor,share_pooled,share_local\n";
    for (Index j = 0; j < result.explained.common.size(); ++j)
      out << "common,F" << (j + 1) << ',' << format_short(result.explained.common(j)) << ','
          << format_short(result.explained.common(j)) << '\n';
    for (std::size_t s = 0; s < result.explained.specific_pooled.size(); ++s)
      for (Index j = 0; j < result.explained.specific_pooled[s].size(); ++j)
        out << study_ids[s] << ",L" << (j + 1) << ','
            << format_short(result.explained.specific_pooled[s](j)) << ','
            << format_short(result.explained.specific_local[s](j)) << '\n';
  }
}

/// Writes one dataset (plus covariates when present) and a manifest.
inline void save_multistudy(const fs::path& dir, const MultiStudyData& data) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  manifest << "# msfr dataset manifest\n";
  for (const auto& st : data.studies) {
    manifest << "study " << st.study_id << "\n";
    const std::string data_file = st.study_id + "_data.csv";
    write_csv(dir / data_file, st.X.transpose(), default_header("v", st.X.rows()));
    manifest << "data " << data_file << "\n";
    if (st.B.rows() > 0) {
      const std::string cov_file = st.study_id + "_covariates.csv";
      write_csv(dir / cov_file, st.B.transpose(), default_header("b", st.B.rows()));
      manifest << "covariates " << cov_file << "\n";
    }
  }
}

}  // namespace io

}  // namespace msfr
