#include "hmmlab/params_io.hpp"

#include "hmmlab/errors.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace hmmlab {

using nlohmann::json;

namespace {

json flatten(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return out;
}

Eigen::MatrixXd read_matrix(const json& doc, const char* key, int rows, int cols) {
  if (!doc.contains(key)) throw ParseError(std::string("params: missing '") + key + "'");
  const json& v = doc.at(key);
  if (!v.is_array()) throw ParseError(std::string("params: '") + key + "' must be an array");
  Eigen::MatrixXd m(rows, cols);
  if (!v.empty() && v.front().is_array()) {
    if (int(v.size()) != rows) throw ParseError(std::string("params: '") + key + "' has wrong row count");
    for (int i = 0; i < rows; ++i) {
      if (int(v[std::size_t(i)].size()) != cols) {
        throw ParseError(std::string("params: '") + key + "' has a row of wrong length");
      }
      for (int j = 0; j < cols; ++j) m(i, j) = v[std::size_t(i)][std::size_t(j)].get<double>();
    }
    return m;
  }
  if (int(v.size()) != rows * cols) {
    throw ParseError(std::string("params: '") + key + "' needs " + std::to_string(rows * cols) + " entries");
  }
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = v[std::size_t(i * cols + j)].get<double>();
  }
  return m;
}

// JSON has no infinities; the emission temperature uses them.
json finite_or_string(double x) {
  if (std::isfinite(x)) return x;
  return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
}

}  // namespace

json params_to_json(const HmmParams& p) {
  return {{"M", p.num_states()},
          {"L", p.num_obs()},
          {"pi", vector_to_json(p.initial)},
          {"A", flatten(p.transition)},
          {"B", flatten(p.emission)}};
}

HmmParams params_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("params: expected a JSON object");
  try {
    const int m = doc.at("M").get<int>();
    const int l = doc.at("L").get<int>();
    if (m < 1 || l < 1) throw ParseError("params: M and L must be positive");
    HmmParams p;
    p.initial = read_matrix(doc, "pi", 1, m).row(0).transpose();
    p.transition = read_matrix(doc, "A", m, m);
    p.emission = read_matrix(doc, "B", m, l);
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("params: ") + e.what());
  }
}

void write_params(const HmmParams& params, const std::filesystem::path& path) {
  write_file_atomically(path, params_to_json(params).dump(2) + "\n");
}

HmmParams read_params(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  HmmParams p = params_from_json(doc);
  require_valid(p);
  return p;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json analysis_to_json(const ChainAnalysis& a) {
  return {{"stationary", vector_to_json(a.stationary)},
          {"mixing_rate", a.mixing_rate},
          {"ergodic", a.ergodic},
          {"entropy",
           {{"transition", a.entropy.transition},
            {"emission", a.entropy.emission},
            {"normalized_transition", a.entropy.normalized_transition},
            {"normalized_emission", a.entropy.normalized_emission},
            {"normalized_joint", a.entropy.normalized_joint}}}};
}

json report_to_json(const SynthesisReport& r) {
  return {{"accepted", r.accepted},
          {"achieved_lambda2", r.achieved_lambda2},
          {"achieved_transition_entropy", r.achieved_transition_entropy},
          {"achieved_emission_entropy", r.achieved_emission_entropy},
          {"max_row_sum_error", r.max_row_sum_error},
          {"max_negativity", r.max_negativity},
          {"stationary_error", r.stationary_error},
          {"iterations_used", r.iterations_used},
          {"attempts", r.attempts},
          {"seed_used", r.seed_used},
          {"emission_temperature", finite_or_string(r.emission_temperature)},
          {"warnings", r.warnings}};
}

json spec_to_json(const SynthesisSpec& s) {
  json out = {{"M", s.num_states},
              {"L", s.num_obs},
              {"lambda2", s.target_lambda2},
              {"H_B", s.target_emission_entropy},
              {"init", s.init == InitMode::Uniform ? "uniform" : "deterministic"},
              {"seed", s.seed}};
  out["H_A"] = s.target_transition_entropy ? json(*s.target_transition_entropy) : json(nullptr);
  if (s.stationary.kind == StationaryMode::Kind::Uniform) {
    out["stationary"] = "uniform";
  } else {
    out["stationary"] = {{"beta", s.stationary.beta}};
  }
  return out;
}

void write_file_atomically(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os << content;
    if (!os.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace hmmlab
