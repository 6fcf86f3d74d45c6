#include "hmmlab/report.hpp"

#include "hmmlab/errors.hpp"
#include "hmmlab/experiment.hpp"
#include "hmmlab/params_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <vector>

namespace hmmlab {

using nlohmann::json;

namespace {

struct Row {
  std::string method;
  std::string t_converge = "-";
  std::optional<double> epsilon;
  std::string flags;
};

std::string fmt(double x, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string render_report(const std::filesystem::path& run_dir, const std::filesystem::path& curves_out) {
  const auto summary_path = run_dir / "summary.json";
  const auto curves_path = run_dir / "curves.csv";
  std::vector<std::string> missing;
  if (!std::filesystem::exists(summary_path)) missing.push_back("summary.json");
  if (!std::filesystem::exists(curves_path)) missing.push_back("curves.csv");
  if (!missing.empty()) {
    std::string what = "report: " + run_dir.string() + " lacks";
    for (const auto& m : missing) what += " " + m;
    throw MissingArtifacts(what);
  }

  json summary;
  try {
    summary = json::parse(read_file(summary_path));
  } catch (const json::parse_error& e) {
    throw ParseError("summary.json: " + std::string(e.what()));
  }

  // curve rows grouped by setting, file order kept
  std::map<std::string, std::vector<std::string>> rows_by_setting;
  {
    std::istringstream curves(read_file(curves_path));
    std::string line;
    std::getline(curves, line);
    if (line != kCurvesHeader) throw ParseError("curves.csv: unexpected header");
    while (std::getline(curves, line)) {
      if (line.empty()) continue;
      rows_by_setting[line.substr(0, line.find(','))].push_back(line);
    }
  }

  std::ostringstream out;
  const std::string reference = summary.value("reference_method", "viterbi");
  for (const auto& s : summary.at("settings")) {
    const std::string id = s.at("setting_id").get<std::string>();
    out << "setting " << id << " (" << s.value("source", "?");
    if (s.contains("spec") && s.at("spec").is_object()) {
      const json& sp = s.at("spec");
      out << ", M=" << sp.value("M", 0) << " L=" << sp.value("L", 0) << " lambda2=" << sp.value("lambda2", 0.0);
    }
    if (s.contains("analysis") && s.at("analysis").is_object()) {
      const json& a = s.at("analysis");
      out << ", mixing " << fmt(a.at("mixing_rate").get<double>()) << ", H_A "
          << fmt(a.at("entropy").at("transition").get<double>()) << ", H_B "
          << fmt(a.at("entropy").at("emission").get<double>());
    }
    out << ")\n";

    std::vector<Row> rows;
    bool spectral_fired = false;
    for (const auto& [name, m] : s.at("methods").items()) {
      Row r;
      r.method = name;
      if (m.at("T_converge").is_number()) r.t_converge = std::to_string(m.at("T_converge").get<int>());
      if (m.at("T_converge").is_string()) r.t_converge = m.at("T_converge").get<std::string>();
      if (m.at("epsilon_gap").is_number()) r.epsilon = m.at("epsilon_gap").get<double>();
      const json& d = m.at("diagnostics");
      if (m.value("type", "") == "spectral" &&
          d.value("clamp_fired", 0) + d.value("numerical_blowup", 0) + d.value("rank_deficient", 0) > 0) {
        spectral_fired = true;
        r.flags += " spectral-diagnostics(clamp=" + std::to_string(d.value("clamp_fired", 0)) +
                   ",blowup=" + std::to_string(d.value("numerical_blowup", 0)) +
                   ",rank=" + std::to_string(d.value("rank_deficient", 0)) + ")";
      }
      if (d.contains("sources")) {
        for (const auto& [src, count] : d.at("sources").items()) {
          r.flags += " source=" + src + "(" + std::to_string(count.get<long>()) + ")";
        }
      }
      if (d.value("fallback_uniform", 0) > 0) r.flags += " fallback=" + std::to_string(d.value("fallback_uniform", 0));
      rows.push_back(std::move(r));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      const double ea = a.epsilon.value_or(INFINITY);
      const double eb = b.epsilon.value_or(INFINITY);
      return ea < eb;
    });
    out << "  " << pad("rank", 6) << pad("method", 26) << pad("T", 8) << pad("eps", 10) << "flags\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out << "  " << pad(std::to_string(r + 1), 6) << pad(rows[r].method, 26) << pad(rows[r].t_converge, 8)
          << pad(rows[r].epsilon ? fmt(*rows[r].epsilon) : "-", 10) << rows[r].flags << "\n";
    }
    if (spectral_fired) out << "  ! spectral diagnostics fired in this setting\n";
    out << "  (reference: " << reference << ")\n\n";
  }

  if (!curves_out.empty()) {
    if (std::filesystem::exists(curves_out) && std::filesystem::equivalent(run_dir, curves_out)) {
      throw std::invalid_argument("report: curve output directory must differ from the run directory");
    }
    for (const auto& [id, lines] : rows_by_setting) {
      std::string content = std::string(kCurvesHeader) + "\n";
      for (const auto& l : lines) content += l + "\n";
      write_file_atomically(curves_out / (id + ".csv"), content);
    }
  }
  return out.str();
}

}  // namespace hmmlab
