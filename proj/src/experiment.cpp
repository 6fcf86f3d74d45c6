#include "hmmlab/experiment.hpp"

#include "hmmlab/errors.hpp"
#include "hmmlab/parallel.hpp"
#include "hmmlab/params_io.hpp"
#include "hmmlab/rng.hpp"
#include "hmmlab/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <ostream>
#include <set>

namespace hmmlab {

using nlohmann::json;

namespace {

// Rejects keys outside the allowed set.
void only_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": bad value for '" + key + "'");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json diagnostics_to_json(const MethodDiagnostics& d) {
  json out = {{"predictions", d.predictions},
              {"fallback_uniform", d.fallback_uniform},
              {"clamp_fired", d.clamp_fired},
              {"numerical_blowup", d.numerical_blowup},
              {"rank_deficient", d.rank_deficient},
              {"dropped_mass_events", d.dropped_mass_events},
              {"dropped_mass_total", d.dropped_mass_total},
              {"em_monotonicity_violations", d.em_monotonicity_violations},
              {"em_not_converged", d.em_not_converged}};
  if (!d.sources.empty()) out["sources"] = d.sources;
  return out;
}

std::string kind_name(MethodKind k) {
  switch (k) {
    case MethodKind::Viterbi: return "viterbi";
    case MethodKind::TruncatedForward: return "truncated_forward";
    case MethodKind::Ngram: return "ngram";
    case MethodKind::BaumWelch: return "baum_welch";
    case MethodKind::Spectral: return "spectral";
    case MethodKind::Icl: return "icl";
  }
  return "";
}

std::vector<SettingEntry> expand_sweep(const json& doc, const std::string& prefix, std::size_t first_index) {
  static const std::vector<std::string> axes = {"M", "L", "lambda2", "H_A", "H_B", "stationary", "init"};
  only_keys(doc, {"M", "L", "lambda2", "H_A", "H_B", "stationary", "init"}, "sweep");
  std::vector<json> combos{json::object()};
  for (const auto& axis : axes) {
    if (!doc.contains(axis)) continue;
    const json& values = doc.at(axis);
    if (!values.is_array() || values.empty()) throw ConfigError("sweep: '" + axis + "' must be a nonempty array");
    std::vector<json> next;
    for (const auto& c : combos) {
      for (const auto& v : values) {
        json extended = c;
        extended[axis] = v;
        next.push_back(std::move(extended));
      }
    }
    combos = std::move(next);
  }
  std::vector<SettingEntry> out;
  for (std::size_t i = 0; i < combos.size(); ++i) {
    SettingEntry e;
    char id[32];
    std::snprintf(id, sizeof id, "%03zu", first_index + i);
    e.id = prefix + id;
    e.source = SettingEntry::Source::Synth;
    e.spec = parse_synthesis_spec(combos[i]);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

std::uint64_t setting_seed(std::uint64_t master_seed, std::size_t index) { return derive_seed(master_seed, index); }

std::uint64_t stream_seed(std::uint64_t seed, SeedStream stream) {
  return derive_seed(seed, static_cast<std::uint64_t>(stream));
}

SynthesisSpec parse_synthesis_spec(const json& doc) {
  const std::string where = "synth";
  only_keys(doc, {"M", "L", "lambda2", "H_A", "H_B", "stationary", "init", "seed"}, where);
  SynthesisSpec s;
  s.num_states = get_or<int>(doc, "M", 2, where);
  s.num_obs = get_or<int>(doc, "L", s.num_states, where);
  s.target_lambda2 = get_or<double>(doc, "lambda2", 0.5, where);
  if (doc.contains("H_A") && !doc.at("H_A").is_null()) s.target_transition_entropy = get_or<double>(doc, "H_A", 0, where);
  s.target_emission_entropy = get_or<double>(doc, "H_B", 0.0, where);
  s.seed = get_or<std::uint64_t>(doc, "seed", 0, where);
  if (doc.contains("stationary")) {
    const json& st = doc.at("stationary");
    if (st.is_string() && st.get<std::string>() == "uniform") {
      s.stationary = StationaryMode::uniform();
    } else if (st.is_object()) {
      only_keys(st, {"beta"}, "stationary");
      s.stationary = StationaryMode::beta_skew(get_or<double>(st, "beta", 1.0, "stationary"));
    } else {
      throw ConfigError("stationary must be \"uniform\" or {\"beta\": b}");
    }
  }
  const std::string init = get_or<std::string>(doc, "init", "uniform", where);
  if (init == "uniform") {
    s.init = InitMode::Uniform;
  } else if (init == "deterministic") {
    s.init = InitMode::Deterministic;
  } else {
    throw ConfigError("init must be uniform or deterministic");
  }
  try {
    check_spec(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
  return s;
}

MethodSpec parse_method(const json& doc) {
  if (doc.is_string()) return parse_method(json{{"type", doc}});
  const std::string type = get_or<std::string>(doc, "type", "", "method");
  const std::string where = "method " + type;
  MethodSpec m;
  if (type == "viterbi") {
    only_keys(doc, {"type", "name"}, where);
    m = MethodSpec::viterbi();
  } else if (type == "truncated_forward") {
    only_keys(doc, {"type", "name", "k"}, where);
    if (!doc.contains("k") || (doc.at("k").is_string() && doc.at("k") == "full")) {
      m = MethodSpec::truncated_forward(kFullHistory);
    } else {
      const int k = get_or<int>(doc, "k", 0, where);
      if (k < 0) throw ConfigError(where + ": k must be >= 0");
      m = MethodSpec::truncated_forward(std::size_t(k));
    }
  } else if (type == "ngram" || type == "bigram") {
    only_keys(doc, {"type", "name", "n", "delta"}, where);
    m = MethodSpec::ngram(get_or<int>(doc, "n", 2, where), get_or<double>(doc, "delta", 1.0, where));
    if (m.order < 1 || !(m.delta > 0.0)) throw ConfigError(where + ": need n >= 1 and delta > 0");
  } else if (type == "baum_welch") {
    only_keys(doc, {"type", "name", "states", "max_iters", "tol", "prediction"}, where);
    m = MethodSpec::baum_welch(get_or<int>(doc, "states", 0, where));
    m.max_iters = get_or<int>(doc, "max_iters", m.max_iters, where);
    m.tol = get_or<double>(doc, "tol", m.tol, where);
    const std::string pred = get_or<std::string>(doc, "prediction", "viterbi", where);
    if (pred != "viterbi" && pred != "filtered") throw ConfigError(where + ": prediction must be viterbi or filtered");
    m.filtered_prediction = pred == "filtered";
  } else if (type == "spectral") {
    only_keys(doc, {"type", "name", "states", "burn_in", "clamp"}, where);
    m = MethodSpec::spectral(get_or<int>(doc, "states", 0, where));
    if (doc.contains("burn_in") && !(doc.at("burn_in").is_string() && doc.at("burn_in") == "auto")) {
      m.burn_in = get_or<int>(doc, "burn_in", 0, where);
      if (*m.burn_in < 0) throw ConfigError(where + ": burn_in must be >= 0");
    }
    m.clamp = get_or<double>(doc, "clamp", m.clamp, where);
  } else if (type == "icl") {
    only_keys(doc, {"type", "name", "codec", "prefix"}, where);
    try {
      m = MethodSpec::icl(TokenCodec::parse_scheme(get_or<std::string>(doc, "codec", "abc", where)));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": " + e.what());
    }
    m.prefix = get_or<std::string>(doc, "prefix", "", where);
  } else {
    throw ConfigError("unknown method type '" + type + "'");
  }
  m.name = get_or<std::string>(doc, "name", m.name, where);
  return m;
}

void ExperimentConfig::check() const {
  if (settings.empty()) throw ConfigError("config has no settings");
  if (methods.empty()) throw ConfigError("config has no methods");
  if (n_sequences < 1) throw ConfigError("n_sequences must be >= 1");
  if (seq_length < 2) throw ConfigError("seq_length must be >= 2");
  if (context_grid.empty()) throw ConfigError("context_grid is empty");
  for (std::size_t g = 0; g < context_grid.size(); ++g) {
    if (context_grid[g] < 1) throw ConfigError("context_grid values must be >= 1");
    if (g && context_grid[g] <= context_grid[g - 1]) throw ConfigError("context_grid must be strictly increasing");
  }
  if (context_grid.back() >= seq_length) {
    throw ConfigError("max(context_grid) = " + std::to_string(context_grid.back()) +
                      " must be below seq_length = " + std::to_string(seq_length));
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  std::set<std::string> ids;
  for (const auto& s : settings) {
    if (s.id.empty() || s.id.find_first_of(",\n\"") != std::string::npos) {
      throw ConfigError("setting id '" + s.id + "' is empty or contains a comma, quote or newline");
    }
    if (!ids.insert(s.id).second) throw ConfigError("duplicate setting id '" + s.id + "'");
  }
  std::set<std::string> names;
  for (const auto& m : methods) {
    if (!names.insert(m.name).second) throw ConfigError("duplicate method name '" + m.name + "'");
  }
  try {
    llm.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("llm: ") + e.what());
  }
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  only_keys(doc,
            {"schema", "settings", "n_sequences", "seq_length", "context_grid", "methods", "reference_method",
             "output_dir", "master_seed", "threads", "synthesis", "llm"},
            "config");
  if (get_or<std::string>(doc, "schema", "", "config") != kConfigSchema) {
    throw ConfigError(std::string("config: schema must be \"") + kConfigSchema + "\"");
  }
  ExperimentConfig c;
  c.echo = doc;
  c.n_sequences = get_or<int>(doc, "n_sequences", c.n_sequences, "config");
  c.seq_length = get_or<int>(doc, "seq_length", c.seq_length, "config");
  c.context_grid = get_or<std::vector<int>>(doc, "context_grid", c.context_grid, "config");
  c.reference_method = get_or<std::string>(doc, "reference_method", c.reference_method, "config");
  c.output_dir = resolve(base_dir, get_or<std::string>(doc, "output_dir", c.output_dir.string(), "config"));
  c.master_seed = get_or<std::uint64_t>(doc, "master_seed", 0, "config");
  c.threads = get_or<int>(doc, "threads", 1, "config");

  if (!doc.contains("settings") || !doc.at("settings").is_array()) throw ConfigError("config: settings must be a list");
  for (const auto& s : doc.at("settings")) {
    if (s.contains("sweep")) {
      only_keys(s, {"sweep", "id_prefix"}, "setting");
      auto expanded = expand_sweep(s.at("sweep"), get_or<std::string>(s, "id_prefix", "s", "setting"),
                                   c.settings.size());
      c.settings.insert(c.settings.end(), expanded.begin(), expanded.end());
      continue;
    }
    only_keys(s, {"id", "synth", "params_file", "sequences_file", "L", "M"}, "setting");
    SettingEntry e;
    char fallback[32];
    std::snprintf(fallback, sizeof fallback, "s%03zu", c.settings.size());
    e.id = get_or<std::string>(s, "id", fallback, "setting");
    const int sources = int(s.contains("synth")) + int(s.contains("params_file")) + int(s.contains("sequences_file"));
    if (sources != 1) throw ConfigError("setting " + e.id + ": give exactly one of synth, params_file, sequences_file");
    if (s.contains("synth")) {
      e.source = SettingEntry::Source::Synth;
      e.spec = parse_synthesis_spec(s.at("synth"));
      e.seed_given = s.at("synth").contains("seed");
    } else if (s.contains("params_file")) {
      e.source = SettingEntry::Source::ParamsFile;
      e.file = resolve(base_dir, s.at("params_file").get<std::string>());
    } else {
      e.source = SettingEntry::Source::SequencesFile;
      e.file = resolve(base_dir, s.at("sequences_file").get<std::string>());
      e.num_obs = get_or<int>(s, "L", 0, "setting");
      e.num_states = get_or<int>(s, "M", 0, "setting");
    }
    if (e.source != SettingEntry::Source::SequencesFile && (s.contains("L") || s.contains("M"))) {
      throw ConfigError("setting " + e.id + ": L and M only apply to sequences_file");
    }
    c.settings.push_back(std::move(e));
  }

  if (!doc.contains("methods") || !doc.at("methods").is_array()) throw ConfigError("config: methods must be a list");
  for (const auto& m : doc.at("methods")) c.methods.push_back(parse_method(m));

  if (doc.contains("synthesis")) {
    const json& s = doc.at("synthesis");
    only_keys(s, {"adam_iterations", "learning_rate", "max_retries", "entropy_band"}, "synthesis");
    c.synthesis.adam_iterations = get_or<int>(s, "adam_iterations", c.synthesis.adam_iterations, "synthesis");
    c.synthesis.learning_rate = get_or<double>(s, "learning_rate", c.synthesis.learning_rate, "synthesis");
    c.synthesis.max_retries = get_or<int>(s, "max_retries", c.synthesis.max_retries, "synthesis");
    c.synthesis.entropy_band = get_or<double>(s, "entropy_band", c.synthesis.entropy_band, "synthesis");
  }
  if (doc.contains("llm")) {
    const json& l = doc.at("llm");
    only_keys(l,
              {"base_url", "model", "api_key_env", "top_logprobs", "timeout", "max_inflight", "max_attempts",
               "cache_dir", "fixture"},
              "llm");
    c.llm.base_url = get_or<std::string>(l, "base_url", "", "llm");
    c.llm.model_id = get_or<std::string>(l, "model", "", "llm");
    c.llm.api_key_env = get_or<std::string>(l, "api_key_env", "", "llm");
    c.llm.top_logprobs = get_or<int>(l, "top_logprobs", c.llm.top_logprobs, "llm");
    c.llm.timeout_seconds = get_or<double>(l, "timeout", c.llm.timeout_seconds, "llm");
    c.llm.max_inflight = get_or<int>(l, "max_inflight", c.llm.max_inflight, "llm");
    c.llm.max_attempts = get_or<int>(l, "max_attempts", c.llm.max_attempts, "llm");
    if (l.contains("cache_dir")) c.llm.cache_dir = resolve(base_dir, l.at("cache_dir").get<std::string>());
    if (l.contains("fixture")) c.llm.fixture_path = resolve(base_dir, l.at("fixture").get<std::string>());
  }
  c.check();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(doc, path.parent_path());
}

void apply_overrides(ExperimentConfig& c, const RunOverrides& o) {
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.master_seed) c.master_seed = *o.master_seed;
  if (o.threads) c.threads = *o.threads;
  if (o.llm_endpoint) c.llm.base_url = *o.llm_endpoint;
  if (o.llm_fixture) c.llm.fixture_path = *o.llm_fixture;
  if (o.codec) {
    bool any = false;
    for (auto& m : c.methods) {
      if (m.kind != MethodKind::Icl) continue;
      m.codec = *o.codec;
      m.name = "icl_" + TokenCodec::scheme_name(*o.codec);
      any = true;
    }
    if (!any && c.llm_configured()) c.methods.push_back(MethodSpec::icl(*o.codec));
  }
  c.check();
}

std::string format_curve_row(const std::string& setting_id, const CurvePoint& p) {
  std::string row = setting_id + "," + p.method + "," + std::to_string(p.context_len) + "," +
                    format_number(p.accuracy) + "," + format_number(p.acc_std) + ",";
  if (p.mean_hellinger) row += format_number(*p.mean_hellinger);
  row += ",";
  if (p.hell_std) row += format_number(*p.hell_std);
  row += "," + std::to_string(p.n_samples);
  return row;
}

// ---------------------------------------------------------------------------

namespace {

struct Prepared {
  bool ok = false;
  std::string error;
  std::optional<HmmParams> params;
  std::optional<ChainAnalysis> analysis;
  std::optional<SynthesisReport> report;
  std::vector<SymbolSeq> sequences;  // sequences_file settings
  int num_obs = 0;
};

Prepared prepare(const SettingEntry& e, std::uint64_t seed, const SynthesisOptions& options) {
  Prepared p;
  try {
    switch (e.source) {
      case SettingEntry::Source::Synth: {
        SynthesisSpec spec = e.spec;
        if (!e.seed_given) spec.seed = stream_seed(seed, SeedStream::Synthesis);
        Setting s = build_setting(spec, options);
        p.params = std::move(s.params);
        p.analysis = std::move(s.analysis);
        p.report = std::move(s.report);
        break;
      }
      case SettingEntry::Source::ParamsFile:
        p.params = read_params(e.file);
        p.analysis = analyze(*p.params);
        break;
      case SettingEntry::Source::SequencesFile: {
        p.sequences = read_sequences(e.file);
        if (p.sequences.empty()) throw ParseError(e.file.string() + ": no sequences");
        int max_symbol = 0;
        for (const auto& s : p.sequences) max_symbol = std::max(max_symbol, *std::max_element(s.begin(), s.end()));
        p.num_obs = e.num_obs > 0 ? e.num_obs : max_symbol + 1;
        if (max_symbol >= p.num_obs) throw SymbolOutOfRange(max_symbol + 1, p.num_obs);
        break;
      }
    }
    if (p.params) p.num_obs = p.params->num_obs();
    p.ok = true;
  } catch (const SynthesisFailed& ex) {
    p.error = ex.what();
    p.report = ex.best_report();
  } catch (const std::exception& ex) {
    p.error = ex.what();
  }
  return p;
}

json metadata_notes(const ExperimentConfig& c) {
  return {{"entropy_units", "nats"},
          {"entropy_band_nats", c.synthesis.entropy_band},
          {"ngram_backoff", "uniform over symbols seen in the history, zero elsewhere"},
          {"icl_prompt", "raw codec string with optional prefix"},
          {"hellinger_reference", "exact full-history conditional under the true parameters"},
          {"convergence_rule", "first grid length with ref - acc <= 0.025 and acc >= 0.95 * ref"}};
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, std::ostream& log) {
  config.check();
  RunResult result;
  const std::size_t ns = config.settings.size();

  EndpointConfig llm = config.llm;
  llm.resolve_fixture_mode();
  std::unique_ptr<LlmBridge> bridge;
  if (config.llm_configured()) bridge = std::make_unique<LlmBridge>(llm);

  std::vector<Prepared> prepared(ns);
  parallel_for(ns, config.threads, [&](std::size_t i) {
    prepared[i] = prepare(config.settings[i], setting_seed(config.master_seed, i), config.synthesis);
  });

  std::string curves = std::string(kCurvesHeader) + "\n";
  json summary_settings = json::array();
  json manifest_settings = json::array();
  std::set<std::string> skipped;

  for (std::size_t i = 0; i < ns; ++i) {
    const SettingEntry& entry = config.settings[i];
    Prepared& prep = prepared[i];
    const std::uint64_t seed = setting_seed(config.master_seed, i);
    json manifest_entry = {{"setting_id", entry.id}, {"seed", seed}};
    if (entry.source == SettingEntry::Source::Synth) {
      manifest_entry["synthesis_seed"] = entry.seed_given ? entry.spec.seed : stream_seed(seed, SeedStream::Synthesis);
    }
    if (!prep.ok) {
      log << "[" << entry.id << "] failed: " << prep.error << "\n";
      manifest_entry["status"] = "failed";
      manifest_entry["error"] = prep.error;
      if (prep.report) manifest_entry["synthesis_report"] = report_to_json(*prep.report);
      manifest_settings.push_back(manifest_entry);
      result.failed_settings.push_back(entry.id);
      continue;
    }

    std::vector<MethodSpec> methods;
    for (const auto& m : config.methods) {
      std::string reason;
      if (m.needs_true_params() && !prep.params) reason = "no true parameters";
      if (m.kind == MethodKind::Icl && !bridge) reason = "no LLM endpoint or fixture configured";
      if (m.kind == MethodKind::Icl && prep.num_obs > TokenCodec::capacity(m.codec)) reason = "alphabet exceeds codec";
      if (m.kind == MethodKind::Spectral) {
        const int states = m.states > 0 ? m.states : prep.params ? prep.params->num_states() : entry.num_states;
        if (states < 1) reason = "state count unknown";
        else if (states > prep.num_obs) reason = "needs L >= M";
      }
      if (m.kind == MethodKind::BaumWelch && m.states < 1 && !prep.params && entry.num_states < 1) {
        reason = "state count unknown";
      }
      if (!reason.empty()) {
        skipped.insert(entry.id + ":" + m.name + " (" + reason + ")");
        continue;
      }
      MethodSpec use = m;
      if ((use.kind == MethodKind::Spectral || use.kind == MethodKind::BaumWelch) && use.states < 1 && !prep.params) {
        use.states = entry.num_states;
      }
      methods.push_back(std::move(use));
    }

    EvaluationOptions eo;
    eo.threads = config.threads;
    eo.seed = stream_seed(seed, SeedStream::Evaluation);
    eo.llm = bridge.get();
    Evaluation ev;
    std::vector<int> grid = config.context_grid;
    try {
      if (prep.params) {
        eo.true_lambda2 = prep.analysis->mixing_rate;
        eo.start_is_stationary =
            (prep.params->initial - prep.analysis->stationary).cwiseAbs().maxCoeff() < 1e-9;
        const TrajectoryBatch batch =
            sample_batch(*prep.params, config.n_sequences, config.seq_length,
                         stream_seed(seed, SeedStream::Sampling), entry.id, config.threads);
        ev = evaluate_setting(*prep.params, batch, methods, grid, eo);
      } else {
        ev = evaluate_sequences(nullptr, prep.sequences, prep.num_obs, methods, grid, eo);
      }
    } catch (const std::exception& ex) {
      log << "[" << entry.id << "] evaluation failed: " << ex.what() << "\n";
      manifest_entry["status"] = "failed";
      manifest_entry["error"] = ex.what();
      manifest_settings.push_back(manifest_entry);
      result.failed_settings.push_back(entry.id);
      continue;
    }

    for (const auto& pt : ev.points) curves += format_curve_row(entry.id, pt) + "\n";

    json s = {{"setting_id", entry.id}};
    switch (entry.source) {
      case SettingEntry::Source::Synth:
        s["source"] = "synth";
        {
          SynthesisSpec spec = entry.spec;
          if (!entry.seed_given) spec.seed = stream_seed(seed, SeedStream::Synthesis);
          s["spec"] = spec_to_json(spec);
        }
        break;
      case SettingEntry::Source::ParamsFile:
        s["source"] = "params_file";
        s["file"] = entry.file.string();
        break;
      case SettingEntry::Source::SequencesFile:
        s["source"] = "sequences_file";
        s["file"] = entry.file.string();
        s["n_sequences"] = prep.sequences.size();
        break;
    }
    s["L"] = prep.num_obs;
    s["analysis"] = prep.analysis ? analysis_to_json(*prep.analysis) : json(nullptr);
    s["synthesis_report"] = prep.report ? report_to_json(*prep.report) : json(nullptr);

    std::map<std::string, std::vector<CurvePoint>> by_method;
    for (const auto& pt : ev.points) by_method[pt.method].push_back(pt);
    const auto ref = by_method.find(config.reference_method);
    json mj = json::object();
    for (const auto& m : methods) {
      json one = {{"type", kind_name(m.kind)}, {"diagnostics", diagnostics_to_json(ev.diagnostics[m.name])}};
      const auto it = by_method.find(m.name);
      one["T_converge"] = nullptr;
      one["epsilon_gap"] = nullptr;
      if (ref != by_method.end() && it != by_method.end()) {
        try {
          const CurveSummary cs = convergence_summary(it->second, ref->second, config.reference_method);
          one["T_converge"] = cs.t_converge ? json(*cs.t_converge) : json("none");
          one["epsilon_gap"] = cs.epsilon_gap;
        } catch (const GridMismatch&) {
          // ragged ingested data can leave the two curves on different grids
        }
      }
      one["reference_method"] = config.reference_method;
      mj[m.name] = one;
    }
    s["methods"] = mj;
    summary_settings.push_back(s);
    manifest_entry["status"] = "ok";
    manifest_settings.push_back(manifest_entry);
    ++result.settings_ok;
    log << "[" << entry.id << "] done: " << ev.points.size() << " curve points\n";
  }

  result.skipped_methods.assign(skipped.begin(), skipped.end());
  result.exit_code = result.failed_settings.empty() ? 0 : 2;

  const json summary = {{"schema", "hmmlab.summary/1"},
                        {"reference_method", config.reference_method},
                        {"notes", metadata_notes(config)},
                        {"settings", summary_settings}};
  const json manifest = {{"artifact_version", kArtifactVersion},
                         {"created", utc_now()},
                         {"master_seed", config.master_seed},
                         {"config", config.echo},
                         {"effective",
                          {{"n_sequences", config.n_sequences},
                           {"seq_length", config.seq_length},
                           {"context_grid", config.context_grid},
                           {"threads", config.threads},
                           {"llm_endpoint", config.llm.base_url},
                           {"llm_fixture", llm.fixture_path.string()},
                           {"llm_fixture_recorded", llm.record_path.string()}}},
                         {"settings", manifest_settings},
                         {"failed_settings", result.failed_settings},
                         {"skipped_methods", result.skipped_methods},
                         {"exit_code", result.exit_code}};

  if (bridge && !llm.record_path.empty()) {
    const Fixture fx = bridge->recorded();
    fx.save(llm.record_path);
    log << "recorded " << fx.size() << " prompts into " << llm.record_path.string() << "\n";
  }
  std::filesystem::create_directories(config.output_dir);
  write_file_atomically(config.output_dir / "curves.csv", curves);
  write_file_atomically(config.output_dir / "summary.json", summary.dump(2) + "\n");
  write_file_atomically(config.output_dir / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

}  // namespace hmmlab
