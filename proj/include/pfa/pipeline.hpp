#pragma once

// Experiment configuration and the staged pipeline
// prepare -> pretrain -> adapt -> evaluate -> report.
//
// Config grammar (one entry per line):
//   line    := blank | comment | entry
//   comment := '#' anything
//   entry   := key '=' value [ '#' anything ]
//   key     := [a-z0-9_.]+
// Surrounding whitespace is trimmed. Unknown or repeated keys are errors.
// Overrides given on the command line take precedence over the file.

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfa/evaluation.hpp"
#include "pfa/io.hpp"
#include "pfa/synthetic.hpp"
#include "pfa/trainer.hpp"

namespace pfa {

/// Shortest decimal form that round-trips.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(x))
    throw Error("config key '" + key + "': expected a number, got '" + v + "'");
  return x;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw Error("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return x;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  for (const auto& part : split_on(v, ',')) out.push_back(parse_double(key, part));
  return out;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

}  // namespace detail

struct ExperimentConfig {
  std::uint64_t seed = 1;             // split, pretraining and adapter init
  std::string data = "synthetic";     // TSV path, or "synthetic"
  SyntheticConfig synthetic;
  std::size_t kcore = 5;
  std::vector<double> groups = {0.2, 0.6, 0.2};
  PretrainConfig pretrain;
  TrainConfig adapt;
  TargetMode target = TargetMode::uniform_group;
  std::vector<double> target_groups;  // used by target = custom
  std::filesystem::path out = "runs/default";

  ExperimentConfig() { pretrain.seed = seed; adapt.seed = seed; }

  /// Sets one key from its textual value.
  void set(const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw Error("unknown config key '" + key + "'");
    it->second.set(*this, key, detail::trim(value));
  }

  /// Canonical resolved form: every key, sorted, one per line.
  std::string to_text() const {
    std::string s;
    for (const auto& [key, f] : fields()) s += key + " = " + f.get(*this) + "\n";
    return s;
  }

  /// Hash of every key except `out`, so a run's identity does not depend on
  /// where it is written.
  std::string hash() const {
    std::string s;
    for (const auto& [key, f] : fields())
      if (key != "out") s += key + " = " + f.get(*this) + "\n";
    return hex64(fnv1a(s));
  }

  std::string get(const std::string& key) const {
    const auto it = fields().find(key);
    if (it == fields().end()) throw Error("unknown config key '" + key + "'");
    return it->second.get(*this);
  }

  void validate() const {
    if (kcore == 0) throw Error("config: kcore must be >= 1");
    if (data == "synthetic") synthetic.validate();
    if (pretrain.batch == 0 || pretrain.dim == 0) throw Error("config: pretrain.batch and pretrain.dim must be positive");
    if (!(pretrain.lr > 0.0)) throw Error("config: pretrain.lr must be positive");
    if (!(adapt.beta > 0.0)) throw Error("config: adapt.beta must be positive");
    AdapterShape{pretrain.dim, adapt.hidden, adapt.layers}.validate();
    adapt.weights.validate();
    if (target == TargetMode::custom && target_groups.size() != groups.size())
      throw Error("config: target.groups must list one value per group when target = custom");
  }

  struct Field {
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
  };

  static const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = build_fields();
    return table;
  }

 private:
  static std::map<std::string, Field> build_fields() {
    using C = ExperimentConfig;
    using K = const std::string&;
    std::map<std::string, Field> m;
    auto num = [&m](const std::string& key, auto getter) {
      m[key] = {[getter](C& c, K k, K v) { getter(c) = detail::parse_double(k, v); },
                [getter](const C& c) { return format_double(getter(const_cast<C&>(c))); }};
    };
    auto uint = [&m](const std::string& key, auto getter) {
      m[key] = {[getter](C& c, K k, K v) {
                  getter(c) = static_cast<std::remove_reference_t<decltype(getter(c))>>(detail::parse_uint(k, v));
                },
                [getter](const C& c) { return std::to_string(getter(const_cast<C&>(c))); }};
    };
    m["seed"] = {[](C& c, K k, K v) {
                   c.seed = detail::parse_uint(k, v);
                   c.pretrain.seed = c.seed;
                   c.adapt.seed = c.seed;
                 },
                 [](const C& c) { return std::to_string(c.seed); }};
    m["data"] = {[](C& c, K k, K v) {
                   if (v.empty()) throw Error("config key '" + k + "': empty value");
                   c.data = v;
                 },
                 [](const C& c) { return c.data; }};
    uint("synthetic.users", [](C& c) -> std::size_t& { return c.synthetic.users; });
    uint("synthetic.items", [](C& c) -> std::size_t& { return c.synthetic.items; });
    uint("synthetic.providers", [](C& c) -> std::size_t& { return c.synthetic.providers; });
    uint("synthetic.clusters", [](C& c) -> std::size_t& { return c.synthetic.clusters; });
    num("synthetic.skew", [](C& c) -> double& { return c.synthetic.skew; });
    num("synthetic.popularity_skew", [](C& c) -> double& { return c.synthetic.popularity_skew; });
    uint("synthetic.min_catalog", [](C& c) -> std::size_t& { return c.synthetic.min_catalog; });
    num("synthetic.in_cluster", [](C& c) -> double& { return c.synthetic.in_cluster; });
    uint("synthetic.min_per_user", [](C& c) -> std::size_t& { return c.synthetic.min_per_user; });
    uint("synthetic.max_per_user", [](C& c) -> std::size_t& { return c.synthetic.max_per_user; });
    uint("synthetic.min_per_item", [](C& c) -> std::size_t& { return c.synthetic.min_per_item; });
    uint("synthetic.seed", [](C& c) -> std::uint64_t& { return c.synthetic.seed; });
    uint("kcore", [](C& c) -> std::size_t& { return c.kcore; });
    m["groups"] = {[](C& c, K k, K v) { c.groups = detail::parse_list(k, v); },
                   [](const C& c) { return detail::format_list(c.groups); }};
    num("pretrain.lr", [](C& c) -> double& { return c.pretrain.lr; });
    uint("pretrain.epochs", [](C& c) -> std::size_t& { return c.pretrain.epochs; });
    uint("pretrain.batch", [](C& c) -> std::size_t& { return c.pretrain.batch; });
    uint("pretrain.dim", [](C& c) -> std::size_t& { return c.pretrain.dim; });
    num("pretrain.l2", [](C& c) -> double& { return c.pretrain.l2; });
    num("adapt.lr", [](C& c) -> double& { return c.adapt.lr; });
    uint("adapt.epochs", [](C& c) -> std::size_t& { return c.adapt.epochs; });
    uint("adapt.batch", [](C& c) -> std::size_t& { return c.adapt.batch_size; });
    num("adapt.beta", [](C& c) -> double& { return c.adapt.beta; });
    m["adapt.candidates"] = {[](C& c, K k, K v) { c.adapt.candidates = v == "full" ? 0 : detail::parse_uint(k, v); },
                             [](const C& c) {
                               return c.adapt.candidates == 0 ? std::string("full") : std::to_string(c.adapt.candidates);
                             }};
    num("adapt.ndcg_floor", [](C& c) -> double& { return c.adapt.ndcg_floor; });
    uint("adapt.hidden", [](C& c) -> std::size_t& { return c.adapt.hidden; });
    uint("adapt.layers", [](C& c) -> std::size_t& { return c.adapt.layers; });
    num("adapt.init_scale", [](C& c) -> double& { return c.adapt.init_scale; });
    num("lambda_acc", [](C& c) -> double& { return c.adapt.weights.acc; });
    num("lambda_inter", [](C& c) -> double& { return c.adapt.weights.inter; });
    num("lambda_intra", [](C& c) -> double& { return c.adapt.weights.intra; });
    m["fairness"] = {[](C& c, K, K v) { c.adapt.fairness = parse_fairness_loss(v); },
                     [](const C& c) { return to_string(c.adapt.fairness); }};
    m["target"] = {[](C& c, K, K v) { c.target = parse_target_mode(v); },
                   [](const C& c) { return to_string(c.target); }};
    m["target.groups"] = {[](C& c, K k, K v) { c.target_groups = detail::parse_list(k, v); },
                          [](const C& c) { return detail::format_list(c.target_groups); }};
    m["k"] = {[](C& c, K k, K v) {
                c.adapt.k = detail::parse_uint(k, v);
                c.pretrain.eval_k = c.adapt.k;
              },
              [](const C& c) { return std::to_string(c.adapt.k); }};
    m["out"] = {[](C& c, K k, K v) {
                  if (v.empty()) throw Error("config key '" + k + "': empty value");
                  c.out = v;
                },
                [](const C& c) { return c.out.string(); }};
    return m;
  }
};

/// Splits "key=value" (as used on the command line).
inline std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw Error("expected key=value, got '" + s + "'");
  return {detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1))};
}

/// Parses config text into ordered (key, value) entries.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(lineno, "missing key");
    for (char ch : key)
      if (!(std::islower(static_cast<unsigned char>(ch)) || std::isdigit(static_cast<unsigned char>(ch)) || ch == '_' ||
            ch == '.'))
        throw ParseError(lineno, "invalid character in key '" + key + "'");
    if (const auto it = seen.find(key); it != seen.end())
      throw ParseError(lineno, "key '" + key + "' already set on line " + std::to_string(it->second));
    seen[key] = lineno;
    out.emplace_back(key, value);
  }
  return out;
}

/// Defaults, then the file (if any), then overrides.
inline ExperimentConfig resolve_config(const std::string& file_text,
                                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : parse_config_text(file_text)) {
    try {
      cfg.set(k, v);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw Error(std::string("config file: ") + e.what());
    }
  }
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  return resolve_config(path.empty() ? std::string() : read_text(path), overrides);
}

// ---------------------------------------------------------------------------
// Stage building blocks, shared by the pipeline and the CLI subcommands.

/// "skew=2.5,seed=3" -> SyntheticConfig on top of the defaults.
inline SyntheticConfig parse_synthetic_spec(const std::string& spec) {
  ExperimentConfig tmp;
  if (!detail::trim(spec).empty())
    for (const auto& part : detail::split_on(spec, ',')) {
      const auto [k, v] = split_assignment(part);
      tmp.set("synthetic." + k, v);
    }
  tmp.synthetic.validate();
  return tmp.synthetic;
}

inline DatasetBundle prepare_bundle(const RawInteractions& raw, std::size_t kcore, std::uint64_t seed,
                                    std::span<const double> groups) {
  DatasetBundle b;
  b.ds = kcore_filter(raw, kcore);
  b.split = split_per_user(b.ds, seed);
  b.part = partition_providers(b.ds, b.split, groups);
  return b;
}

inline DatasetBundle prepare_from_config(const ExperimentConfig& cfg) {
  const RawInteractions raw = cfg.data == "synthetic" ? generate_synthetic(cfg.synthetic) : load_interactions(cfg.data);
  return prepare_bundle(raw, cfg.kcore, cfg.seed, cfg.groups);
}

inline Target target_from_config(const ExperimentConfig& cfg, const DatasetBundle& b) {
  return build_target(cfg.target, b.ds.num_providers, b.part, cfg.target_groups);
}

inline std::string csv_train_log(std::span<const EpochRecord> log) {
  std::string s = "epoch,fairness_loss,ndcg_loss,total_loss,val_ndcg,val_gini\n";
  for (const auto& r : log)
    s += std::to_string(r.epoch) + "," + format_double(r.fairness_loss) + "," + format_double(r.ndcg_loss) + "," +
         format_double(r.total_loss) + "," + format_double(r.val_ndcg) + "," + format_double(r.val_gini) + "\n";
  return s;
}

inline std::string csv_steps(std::span<const StepRecord> steps) {
  std::string s = "epoch,step,fairness_loss,ndcg_loss,total_loss\n";
  for (const auto& r : steps)
    s += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + format_double(r.fairness_loss) + "," +
         format_double(r.ndcg_loss) + "," + format_double(r.total_loss) + "\n";
  return s;
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["k"] = r.k;
  j["ndcg"] = r.ndcg;
  j["hr"] = r.hr;
  j["mrr"] = r.mrr;
  j["eligible_users"] = r.eligible_users;
  j["gini"] = r.gini;
  j["entropy_bits"] = r.entropy_bits;
  j["cv"] = r.cv;
  auto& g = j["groups"] = nlohmann::ordered_json::array();
  for (const auto& x : r.groups) g.push_back({{"share", x.share}, {"within_gini", x.within_gini}});
  return j;
}

/// Exposure per provider for each named report.
inline std::string csv_exposure(const DatasetBundle& b, const std::vector<std::pair<std::string, const EvalReport*>>& cols) {
  std::string s = "provider,token,group";
  for (const auto& [name, r] : cols) s += "," + name + "_exposure";
  s += "\n";
  for (std::size_t p = 0; p < b.ds.num_providers; ++p) {
    s += std::to_string(p) + "," + b.ds.provider_tokens[p] + "," + std::to_string(b.part.provider_group[p]);
    for (const auto& col : cols) s += "," + format_double(col.second->exposure[p]);
    s += "\n";
  }
  return s;
}

inline std::string csv_subgroups(const std::vector<std::pair<std::string, const EvalReport*>>& rows) {
  std::string s = "model,group,share,within_gini\n";
  for (const auto& [name, r] : rows)
    for (std::size_t c = 0; c < r->groups.size(); ++c)
      s += name + "," + std::to_string(c) + "," + format_double(r->groups[c].share) + "," +
           format_double(r->groups[c].within_gini) + "\n";
  return s;
}

/// Subgroup rows for every report in a metrics.json document.
inline std::string csv_subgroups_from_metrics(const nlohmann::json& m) {
  std::string s = "model,group,share,within_gini\n";
  for (const auto& [name, rep] : m.items()) {
    if (!rep.is_object() || !rep.contains("groups")) continue;
    const auto& groups = rep.at("groups");
    for (std::size_t c = 0; c < groups.size(); ++c)
      s += std::string(name) + "," + std::to_string(c) + "," + format_double(groups[c].at("share").get<double>()) + "," +
           format_double(groups[c].at("within_gini").get<double>()) + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Pipeline with per-stage hashing.

enum class Stage { prepare, pretrain, adapt, evaluate, report };

inline const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s = {Stage::prepare, Stage::pretrain, Stage::adapt, Stage::evaluate, Stage::report};
  return s;
}

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::prepare: return "prepare";
    case Stage::pretrain: return "pretrain";
    case Stage::adapt: return "adapt";
    case Stage::evaluate: return "evaluate";
    case Stage::report: return "report";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  for (auto st : all_stages())
    if (to_string(st) == s) return st;
  throw Error("unknown stage '" + s + "' (expected prepare, pretrain, adapt, evaluate, report or grad-check)");
}

/// Keys each stage depends on directly; a stage's hash also folds in the
/// hash of the stage before it.
inline std::vector<std::string> stage_keys(Stage s, const ExperimentConfig& cfg) {
  switch (s) {
    case Stage::prepare: {
      std::vector<std::string> keys = {"data", "seed", "kcore", "groups"};
      if (cfg.data == "synthetic")
        for (const auto& [k, f] : ExperimentConfig::fields())
          if (k.rfind("synthetic.", 0) == 0) keys.push_back(k);
      return keys;
    }
    case Stage::pretrain:
      return {"pretrain.lr", "pretrain.epochs", "pretrain.batch", "pretrain.dim", "pretrain.l2", "k"};
    case Stage::adapt:
      return {"adapt.lr",        "adapt.epochs",     "adapt.batch",  "adapt.beta",   "adapt.candidates",
              "adapt.ndcg_floor", "adapt.hidden",     "adapt.layers", "adapt.init_scale", "lambda_acc",
              "lambda_inter",    "lambda_intra",     "fairness",     "target",       "target.groups"};
    case Stage::evaluate:
    case Stage::report:
      return {};
  }
  return {};
}

inline std::vector<std::string> stage_outputs(Stage s) {
  switch (s) {
    case Stage::prepare: return {"bundle.json"};
    case Stage::pretrain: return {"backbone.bin", "pretrain_log.csv"};
    case Stage::adapt: return {"adapter.bin", "adapter_final.bin", "train_log.csv", "steps.csv", "selection.json"};
    case Stage::evaluate: return {"metrics.json", "exposure.csv"};
    case Stage::report: return {"subgroups.csv"};
  }
  return {};
}

inline std::map<Stage, std::string> stage_hashes(const ExperimentConfig& cfg) {
  std::map<Stage, std::string> out;
  std::uint64_t h = fnv1a(std::string("pfa-pipeline-1"));
  for (auto s : all_stages()) {
    h = fnv1a(to_string(s), h);
    for (const auto& k : stage_keys(s, cfg)) h = fnv1a(k + "=" + cfg.get(k) + "\n", h);
    if (s == Stage::prepare && cfg.data != "synthetic") h = fnv1a(read_text(cfg.data), h);
    out[s] = hex64(h);
  }
  return out;
}

struct StageOutcome {
  Stage stage;
  bool ran;
};

struct PipelineResult {
  std::filesystem::path dir;
  std::string config_hash;
  std::vector<StageOutcome> stages;

  bool ran(Stage s) const {
    for (const auto& o : stages)
      if (o.stage == s) return o.ran;
    return false;
  }
};

/// Wraps a stage failure so callers can report which stage broke.
class StageError : public Error {
 public:
  StageError(Stage s, const std::string& cause) : Error(to_string(s) + ": " + cause), stage_(s) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

namespace detail {

inline nlohmann::json read_stamps(const std::filesystem::path& dir) {
  const auto path = dir / "stages.json";
  if (!std::filesystem::exists(path)) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json::object();
  }
}

inline bool stage_current(const std::filesystem::path& dir, const nlohmann::json& stamps, Stage s,
                          const std::string& hash) {
  if (!stamps.contains(to_string(s)) || stamps.at(to_string(s)) != hash) return false;
  for (const auto& f : stage_outputs(s))
    if (!std::filesystem::exists(dir / f)) return false;
  return true;
}

}  // namespace detail

/// Runs stages in order up to `last`, skipping any stage whose outputs exist
/// and whose recorded hash matches the current config.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg, Stage last = Stage::report) {
  cfg.validate();
  const auto dir = cfg.out;
  std::filesystem::create_directories(dir);
  std::map<Stage, std::string> hashes;
  try {
    hashes = stage_hashes(cfg);  // reads the data file
  } catch (const std::exception& ex) {
    throw StageError(Stage::prepare, ex.what());
  }
  PipelineResult res;
  res.dir = dir;
  res.config_hash = cfg.hash();
  write_text(dir / "config.resolved", "# config hash " + res.config_hash + "\n" + cfg.to_text());

  auto stamps = detail::read_stamps(dir);
  bool upstream_ran = false;
  std::optional<DatasetBundle> bundle;
  std::optional<EmbeddingTable> emb;
  auto need_bundle = [&]() -> const DatasetBundle& {
    if (!bundle) bundle = load_bundle(dir / "bundle.json");
    return *bundle;
  };
  auto need_emb = [&]() -> const EmbeddingTable& {
    if (!emb) emb = load_embeddings(dir / "backbone.bin");
    return *emb;
  };

  for (auto s : all_stages()) {
    const auto& hash = hashes.at(s);
    const bool current = !upstream_ran && detail::stage_current(dir, stamps, s, hash);
    if (current) {
      res.stages.push_back({s, false});
    } else {
      // Invalidate this stage's stamp before touching its outputs.
      stamps.erase(to_string(s));
      write_text(dir / "stages.json", stamps.dump(2) + "\n");
      try {
        switch (s) {
          case Stage::prepare: {
            bundle = prepare_from_config(cfg);
            save_bundle(*bundle, dir / "bundle.json");
            break;
          }
          case Stage::pretrain: {
            const auto& b = need_bundle();
            auto pr = pretrain(b.ds, b.split, cfg.pretrain);
            std::string log = "epoch,bpr_loss,val_ndcg\n";
            for (const auto& r : pr.log)
              log += std::to_string(r.epoch) + "," + (std::isfinite(r.loss) ? format_double(r.loss) : "") + "," +
                     format_double(r.val_ndcg) + "\n";
            write_text(dir / "pretrain_log.csv", log);
            save_embeddings(pr.table, dir / "backbone.bin");
            emb = std::move(pr.table);
            break;
          }
          case Stage::adapt: {
            const auto& b = need_bundle();
            const auto& e = need_emb();
            const auto checksum = e.checksum();
            const auto tr = train_adapter(b.ds, b.split, b.part, e, target_from_config(cfg, b), cfg.adapt);
            if (e.checksum() != checksum) throw Error("backbone embeddings changed during adapter training");
            save_adapter(tr.best.params, dir / "adapter.bin");
            save_adapter(tr.snapshots.back(), dir / "adapter_final.bin");
            write_text(dir / "train_log.csv", csv_train_log(tr.log));
            write_text(dir / "steps.csv", csv_steps(tr.steps));
            nlohmann::ordered_json sel;
            sel["selected_epoch"] = tr.best.epoch;
            sel["final_epoch"] = tr.log.back().epoch;
            sel["val_ndcg"] = tr.best.val_ndcg;
            sel["val_gini"] = tr.best.val_gini;
            sel["base_val_ndcg"] = tr.base_val_ndcg;
            sel["base_val_gini"] = tr.base_val_gini;
            sel["ndcg_floor"] = cfg.adapt.ndcg_floor;
            write_text(dir / "selection.json", sel.dump(2) + "\n");
            break;
          }
          case Stage::evaluate: {
            const auto& b = need_bundle();
            const auto& e = need_emb();
            const auto selected = load_adapter(dir / "adapter.bin");
            const auto final_params = load_adapter(dir / "adapter_final.bin");
            const auto sel = nlohmann::json::parse(read_text(dir / "selection.json"));
            const auto k = cfg.adapt.k;
            const auto base = evaluate(b.ds, b.split, b.part, e, nullptr, k, EvalPhase::test);
            const auto adapted = evaluate(b.ds, b.split, b.part, e, &selected, k, EvalPhase::test);
            const auto last_r = evaluate(b.ds, b.split, b.part, e, &final_params, k, EvalPhase::test);
            nlohmann::ordered_json m;
            m["config_hash"] = res.config_hash;
            m["dataset"] = {{"users", b.ds.num_users},
                            {"items", b.ds.num_items},
                            {"providers", b.ds.num_providers},
                            {"interactions", b.ds.interactions.size()}};
            m["base"] = report_json(base);
            m["selected"] = report_json(adapted);
            m["selected"]["epoch"] = sel.at("selected_epoch");
            m["final"] = report_json(last_r);
            m["final"]["epoch"] = sel.at("final_epoch");
            m["relative_change"] = {{"ndcg", adapted.ndcg / base.ndcg - 1.0}, {"gini", adapted.gini / base.gini - 1.0}};
            write_text(dir / "metrics.json", m.dump(2) + "\n");
            write_text(dir / "exposure.csv",
                       csv_exposure(b, {{"base", &base}, {"selected", &adapted}, {"final", &last_r}}));
            break;
          }
          case Stage::report: {
            const auto m = nlohmann::json::parse(read_text(dir / "metrics.json"));
            write_text(dir / "subgroups.csv", csv_subgroups_from_metrics(m));
            break;
          }
        }
      } catch (const StageError&) {
        throw;
      } catch (const std::exception& ex) {
        throw StageError(s, ex.what());
      }
      stamps[to_string(s)] = hash;
      write_text(dir / "stages.json", stamps.dump(2) + "\n");
      upstream_ran = true;
      res.stages.push_back({s, true});
    }
    if (s == last) break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Sweeps over one axis, sharing the prepared data and backbone.

enum class SweepAxis { lambda_acc, inter_intra_ratio, hidden_dim, layers };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "lambda_acc") return SweepAxis::lambda_acc;
  if (s == "inter_intra_ratio") return SweepAxis::inter_intra_ratio;
  if (s == "hidden_dim") return SweepAxis::hidden_dim;
  if (s == "layers") return SweepAxis::layers;
  throw Error("unknown sweep axis '" + s + "' (expected lambda_acc, inter_intra_ratio, hidden_dim or layers)");
}

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::lambda_acc: return "lambda_acc";
    case SweepAxis::inter_intra_ratio: return "inter_intra_ratio";
    case SweepAxis::hidden_dim: return "hidden_dim";
    case SweepAxis::layers: return "layers";
  }
  return "?";
}

/// Applies one sweep value ("5:1" for ratios) to a config.
inline void apply_sweep_value(ExperimentConfig& cfg, SweepAxis axis, const std::string& value) {
  switch (axis) {
    case SweepAxis::lambda_acc: cfg.set("lambda_acc", value); break;
    case SweepAxis::hidden_dim: cfg.set("adapt.hidden", value); break;
    case SweepAxis::layers: cfg.set("adapt.layers", value); break;
    case SweepAxis::inter_intra_ratio: {
      const auto colon = value.find(':');
      if (colon == std::string::npos) throw Error("ratio value must look like inter:intra, got '" + value + "'");
      cfg.set("lambda_inter", value.substr(0, colon));
      cfg.set("lambda_intra", value.substr(colon + 1));
      break;
    }
  }
  cfg.validate();
}

struct SweepRow {
  std::string value;
  bool ok = false;
  std::string error;
  std::filesystem::path dir;
};

inline std::string sweep_dir_name(const std::string& value) {
  std::string s;
  for (char c : value) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  return s;
}

/// One pipeline run per value under cfg.out/<axis>/<value>; prepare and
/// pretrain run once in cfg.out/shared. Failed values are recorded and the
/// sweep continues. Writes cfg.out/sweep_<axis>.csv.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                       const std::vector<std::string>& values) {
  if (values.empty()) throw Error("sweep: no values given");
  ExperimentConfig shared = cfg;
  shared.out = cfg.out / "shared";
  run_pipeline(shared, Stage::pretrain);
  const auto shared_stamps = detail::read_stamps(shared.out);

  std::vector<SweepRow> rows;
  std::string csv =
      "value,status,ndcg,hr,mrr,gini,entropy_bits,cv,head_share,mid_share,tail_share,head_gini,mid_gini,tail_gini,"
      "selected_epoch,error\n";
  for (const auto& v : values) {
    SweepRow row;
    row.value = v;
    try {
      ExperimentConfig sub = cfg;
      apply_sweep_value(sub, axis, v);
      sub.out = cfg.out / to_string(axis) / sweep_dir_name(v);
      row.dir = sub.out;
      std::filesystem::create_directories(sub.out);
      nlohmann::json stamps = nlohmann::json::object();
      for (auto s : {Stage::prepare, Stage::pretrain}) {
        for (const auto& f : stage_outputs(s))
          std::filesystem::copy_file(shared.out / f, sub.out / f, std::filesystem::copy_options::overwrite_existing);
        stamps[to_string(s)] = shared_stamps.at(to_string(s));
      }
      write_text(sub.out / "stages.json", stamps.dump(2) + "\n");
      run_pipeline(sub);
      const auto m = nlohmann::json::parse(read_text(sub.out / "metrics.json"));
      const auto& s = m.at("selected");
      std::string line = v + ",ok";
      for (const char* key : {"ndcg", "hr", "mrr", "gini", "entropy_bits", "cv"})
        line += "," + format_double(s.at(key).get<double>());
      const auto& g = s.at("groups");
      for (std::size_t c = 0; c < 3; ++c) line += "," + (c < g.size() ? format_double(g[c].at("share").get<double>()) : "");
      for (std::size_t c = 0; c < 3; ++c)
        line += "," + (c < g.size() ? format_double(g[c].at("within_gini").get<double>()) : "");
      line += "," + std::to_string(s.at("epoch").get<std::size_t>()) + ",\n";
      csv += line;
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
      std::string msg = row.error;
      for (auto& c : msg)
        if (c == ',' || c == '\n' || c == '"') c = ' ';
      csv += v + ",error,,,,,,,,,,,,,," + msg + "\n";
    }
    rows.push_back(row);
  }
  write_text(cfg.out / ("sweep_" + to_string(axis) + ".csv"), csv);
  return rows;
}

}  // namespace pfa
