#include "sage/io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "sage/error.hpp"

namespace sage {

namespace {

std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Reads known keys from one JSON object and rejects everything else.
class Section {
 public:
  Section(const Json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void number(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(join_key(prefix_, key), "expected a number");
    out = v.get<double>();
  }

  template <class Int>
  void integer(const std::string& key, Int& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (v.is_number_unsigned()) {
      out = static_cast<Int>(v.get<std::uint64_t>());
    } else if (v.is_number_integer()) {
      const auto x = v.get<std::int64_t>();
      if constexpr (std::is_unsigned_v<Int>) {
        if (x < 0) throw ConfigError(join_key(prefix_, key), "expected a nonnegative integer");
      }
      out = static_cast<Int>(x);
    } else {
      throw ConfigError(join_key(prefix_, key), "expected an integer");
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(join_key(prefix_, key), "expected true or false");
    out = v.get<bool>();
  }

  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(join_key(prefix_, key), "expected a string");
    out = v.get<std::string>();
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(join_key(prefix_, k), "unknown key");
    }
  }

  std::string key(const std::string& k) const { return join_key(prefix_, k); }

 private:
  const Json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

std::string context_label(std::size_t c) { return "ref_logits[" + std::to_string(c) + "]"; }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Json env_to_json(const TokenTreeEnvironment& env, const TabularPolicy& reference) {
  if (!(reference.shape() == env.shape())) throw DomainError("reference shape does not match env");
  Json j;
  j["vocab_size"] = env.vocab_size();
  j["max_depth"] = env.max_depth();
  j["valid_trajectories"] = env.valid_trajectories();
  Json rows = Json::array();
  for (std::size_t c = 0; c < reference.num_contexts(); ++c) {
    const auto l = reference.logits(c);
    rows.push_back(std::vector<double>(l.begin(), l.end()));
  }
  j["ref_logits"] = std::move(rows);
  return j;
}

LoadedEnv env_from_json(const Json& j, const std::string& where) {
  Section s(j, where);
  int vocab = 0;
  int depth = 0;
  std::uint64_t budget = kDefaultEnumerationBudget;
  s.integer("vocab_size", vocab);
  s.integer("max_depth", depth);
  s.integer("enumeration_budget", budget);
  if (vocab < 1) throw ConfigError(s.key("vocab_size"), "must be a positive integer");
  if (depth < 1) throw ConfigError(s.key("max_depth"), "must be a positive integer");
  if (!s.has("valid_trajectories")) throw ConfigError(s.key("valid_trajectories"), "missing");
  std::vector<Trajectory> valid;
  try {
    valid = s.raw("valid_trajectories").get<std::vector<Trajectory>>();
  } catch (const Json::exception&) {
    throw ConfigError(s.key("valid_trajectories"), "expected a list of token-index lists");
  }
  std::optional<Json> logits_json;
  if (s.has("ref_logits")) logits_json = s.raw("ref_logits");
  s.finish();

  const TreeShape shape(vocab, depth);
  std::vector<double> flat;
  if (logits_json) {
    if (!logits_json->is_array() || logits_json->size() != shape.num_contexts()) {
      throw ConfigError(s.key("ref_logits"),
                        "expected " + std::to_string(shape.num_contexts()) + " per-context arrays");
    }
    flat.reserve(shape.num_contexts() * static_cast<std::size_t>(vocab));
    for (std::size_t c = 0; c < shape.num_contexts(); ++c) {
      const auto& row = (*logits_json)[c];
      if (!row.is_array() || row.size() != static_cast<std::size_t>(vocab)) {
        throw ConfigError(s.key(context_label(c)), "expected " + std::to_string(vocab) + " numbers");
      }
      for (const auto& x : row) {
        if (!x.is_number()) throw ConfigError(s.key(context_label(c)), "expected numbers");
        flat.push_back(x.get<double>());
      }
    }
  } else {
    flat.assign(shape.num_contexts() * static_cast<std::size_t>(vocab), 0.0);
  }
  try {
    TokenTreeEnvironment env(vocab, depth, std::move(valid), budget);
    TabularPolicy ref(shape, std::move(flat));
    return LoadedEnv{std::move(env), std::move(ref), std::nullopt, {}};
  } catch (const DomainError& e) {
    throw ConfigError(where, e.what());
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open file");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string(), std::string("malformed JSON: ") + e.what());
  }
}

void save_env(const std::filesystem::path& path, const TokenTreeEnvironment& env,
              const TabularPolicy& reference) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << env_to_json(env, reference).dump(2) << "\n";
}

LoadedEnv load_env(const std::filesystem::path& path) {
  return env_from_json(read_json_file(path), path.string());
}

Json policy_to_json(const TabularPolicy& policy) {
  Json j;
  j["vocab_size"] = policy.vocab_size();
  j["max_depth"] = policy.shape().max_depth();
  Json rows = Json::array();
  for (std::size_t c = 0; c < policy.num_contexts(); ++c) {
    const auto l = policy.logits(c);
    rows.push_back(std::vector<double>(l.begin(), l.end()));
  }
  j["logits"] = std::move(rows);
  return j;
}

TabularPolicy policy_from_json(const Json& j) {
  const TreeShape shape(j.at("vocab_size").get<int>(), j.at("max_depth").get<int>());
  std::vector<double> flat;
  const auto& rows = j.at("logits");
  if (rows.size() != shape.num_contexts()) throw DomainError("policy: wrong number of contexts");
  for (const auto& row : rows) {
    if (row.size() != static_cast<std::size_t>(shape.vocab_size())) {
      throw DomainError("policy: wrong row length");
    }
    for (const auto& x : row) flat.push_back(x.get<double>());
  }
  return TabularPolicy(shape, std::move(flat));
}

Json ExperimentConfig::resolved() const {
  const auto& t = trainer;
  const auto& g = t.guide;
  Json j;
  j["seed"] = seed;
  j["env"] = env;
  j["trainer"] = {{"beta", t.beta},
                  {"group_size", t.group_size},
                  {"steps", t.steps},
                  {"learning_rate", t.learning_rate},
                  {"clip_low", t.clip_low},
                  {"clip_high", t.clip_high},
                  {"kl_mode", to_string(t.kl_mode)},
                  {"adv_std_floor", t.adv_std_floor},
                  {"normalize_advantages", t.normalize_advantages},
                  {"clip", t.clip},
                  {"guide_bonus", t.guide_bonus}};
  // Flat keys, the same ones the parser reads, so the echo is itself a config.
  j["guide"] = {{"family", to_string(g.family)},
                {"gamma", g.gamma},
                {"tau", g.tau},
                {"factor_floor", g.factor_floor},
                {"eps_lo", g.epsilon.lo},
                {"eps_hi", g.epsilon.hi},
                {"random_sigma_lo", g.random_sigma.lo},
                {"random_sigma_hi", g.random_sigma.hi},
                {"alpha_lo", g.alpha.lo},
                {"alpha_hi", g.alpha.hi},
                {"token_sigma_lo", g.token_sigma.lo},
                {"token_sigma_hi", g.token_sigma.hi},
                {"decay", g.epsilon.decay},
                {"periods", g.epsilon.periods}};
  j["eval"] = {{"n_samples", t.eval.n_samples},
               {"ks", t.eval.ks},
               {"epsilon", t.eval.epsilon},
               {"every", t.eval.every}};
  Json formats = Json::array();
  if (output.csv) formats.push_back("csv");
  if (output.json) formats.push_back("json");
  j["output"] = {{"dir", output.dir}, {"formats", formats}};
  return j;
}

ExperimentConfig parse_experiment_config(const Json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  Section root(j, "");
  root.integer("seed", cfg.seed);
  cfg.trainer.seed = cfg.seed;

  if (!root.has("env")) throw ConfigError("env", "missing");
  cfg.env = root.raw("env");
  {
    Section env(cfg.env, "env");
    int sources = 0;
    for (const char* k : {"file", "inline", "rare_mode"}) sources += env.has(k) ? 1 : 0;
    if (sources != 1) throw ConfigError("env", "needs exactly one of file, inline, rare_mode");
    if (env.has("file") && !cfg.env.at("file").is_string()) {
      throw ConfigError("env.file", "expected a path string");
    }
    if (env.has("inline")) env_from_json(cfg.env.at("inline"), "env.inline");
    if (env.has("rare_mode")) {
      Section rm(cfg.env.at("rare_mode"), "env.rare_mode");
      RareModeSpec spec;
      std::uint64_t label_seed = 0;
      rm.number("rare_mass", spec.rare_mass);
      rm.number("branch_entropy_target", spec.branch_entropy_target);
      rm.integer("num_common_valid", spec.num_common_valid);
      rm.integer("vocab_size", spec.vocab_size);
      rm.integer("max_depth", spec.max_depth);
      rm.number("branch_mass", spec.branch_mass);
      rm.number("decoy_mass", spec.decoy_mass);
      rm.number("common_continuation", spec.common_continuation);
      rm.boolean("branch_valid", spec.branch_valid);
      rm.number("support_epsilon", spec.support_epsilon);
      rm.number("filler_gap", spec.filler_gap);
      rm.integer("enumeration_budget", spec.enumeration_budget);
      rm.integer("seed", label_seed);
      rm.finish();
    }
    env.finish();
  }

  auto& t = cfg.trainer;
  if (root.has("trainer")) {
    Section s(j.at("trainer"), "trainer");
    s.number("beta", t.beta);
    s.integer("group_size", t.group_size);
    s.integer("steps", t.steps);
    s.number("learning_rate", t.learning_rate);
    s.number("clip_low", t.clip_low);
    s.number("clip_high", t.clip_high);
    std::string mode = to_string(t.kl_mode);
    s.string("kl_mode", mode);
    try {
      t.kl_mode = parse_kl_mode(mode);
    } catch (const ConfigError& e) {
      throw ConfigError("trainer.kl_mode", e.what());
    }
    s.number("adv_std_floor", t.adv_std_floor);
    s.boolean("normalize_advantages", t.normalize_advantages);
    s.boolean("clip", t.clip);
    s.boolean("guide_bonus", t.guide_bonus);
    s.finish();
  }

  auto& g = t.guide;
  if (root.has("guide")) {
    Section s(j.at("guide"), "guide");
    std::string family = to_string(g.family);
    s.string("family", family);
    try {
      g.family = parse_guide_family(family);
    } catch (const Error& e) {
      throw ConfigError("guide.family", e.what());
    }
    s.number("gamma", g.gamma);
    s.number("tau", g.tau);
    s.number("factor_floor", g.factor_floor);
    s.number("eps_lo", g.epsilon.lo);
    s.number("eps_hi", g.epsilon.hi);
    // sigma_lo/hi set the noise scale of whichever stochastic family runs;
    // the family-specific keys below take precedence.
    s.number("sigma_lo", g.random_sigma.lo);
    s.number("sigma_hi", g.random_sigma.hi);
    s.number("sigma_lo", g.token_sigma.lo);
    s.number("sigma_hi", g.token_sigma.hi);
    s.number("random_sigma_lo", g.random_sigma.lo);
    s.number("random_sigma_hi", g.random_sigma.hi);
    s.number("alpha_lo", g.alpha.lo);
    s.number("alpha_hi", g.alpha.hi);
    s.number("token_sigma_lo", g.token_sigma.lo);
    s.number("token_sigma_hi", g.token_sigma.hi);
    double decay = g.epsilon.decay;
    int periods = g.epsilon.periods;
    s.number("decay", decay);
    s.integer("periods", periods);
    for (auto* sch : {&g.epsilon, &g.random_sigma, &g.alpha, &g.token_sigma}) {
      sch->decay = decay;
      sch->periods = periods;
    }
    s.finish();
  }

  if (root.has("eval")) {
    Section s(j.at("eval"), "eval");
    s.integer("n_samples", t.eval.n_samples);
    if (s.has("ks")) {
      const auto& ks = j.at("eval").at("ks");
      if (!ks.is_array() || ks.empty()) throw ConfigError("eval.ks", "expected a nonempty list");
      t.eval.ks.clear();
      for (const auto& k : ks) {
        if (!k.is_number_integer()) throw ConfigError("eval.ks", "expected integers");
        t.eval.ks.push_back(k.get<std::int64_t>());
      }
    }
    s.number("epsilon", t.eval.epsilon);
    s.integer("every", t.eval.every);
    s.finish();
  }

  if (root.has("output")) {
    Section s(j.at("output"), "output");
    s.string("dir", cfg.output.dir);
    if (s.has("formats")) {
      const auto& f = j.at("output").at("formats");
      if (!f.is_array()) throw ConfigError("output.formats", "expected a list");
      cfg.output.csv = false;
      cfg.output.json = false;
      for (const auto& x : f) {
        const auto name = x.is_string() ? x.get<std::string>() : std::string();
        if (name == "csv") {
          cfg.output.csv = true;
        } else if (name == "json") {
          cfg.output.json = true;
        } else {
          throw ConfigError("output.formats", "unknown format (csv, json)");
        }
      }
    }
    s.finish();
  }
  root.finish();

  try {
    t.guide.validate();
  } catch (const DomainError& e) {
    throw ConfigError("guide", e.what());
  }
  try {
    t.validate();
  } catch (const ConfigError& e) {
    const bool scoped = e.key().rfind("eval.", 0) == 0;
    throw ConfigError(scoped ? e.key() : "trainer." + e.key(), e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_json_file(path), path.parent_path());
}

LoadedEnv build_environment(const ExperimentConfig& cfg) {
  const auto& e = cfg.env;
  if (e.contains("file")) {
    std::filesystem::path p = e.at("file").get<std::string>();
    if (p.is_relative()) p = cfg.base_dir / p;
    return load_env(p);
  }
  if (e.contains("inline")) return env_from_json(e.at("inline"), "env.inline");

  const auto& r = e.at("rare_mode");
  RareModeSpec spec;
  spec.rare_mass = r.value("rare_mass", spec.rare_mass);
  spec.branch_entropy_target = r.value("branch_entropy_target", spec.branch_entropy_target);
  spec.num_common_valid = r.value("num_common_valid", spec.num_common_valid);
  spec.vocab_size = r.value("vocab_size", spec.vocab_size);
  spec.max_depth = r.value("max_depth", spec.max_depth);
  spec.branch_mass = r.value("branch_mass", spec.branch_mass);
  spec.decoy_mass = r.value("decoy_mass", spec.decoy_mass);
  spec.common_continuation = r.value("common_continuation", spec.common_continuation);
  spec.branch_valid = r.value("branch_valid", spec.branch_valid);
  spec.support_epsilon = r.value("support_epsilon", spec.support_epsilon);
  spec.filler_gap = r.value("filler_gap", spec.filler_gap);
  spec.enumeration_budget = r.value("enumeration_budget", spec.enumeration_budget);
  const std::uint64_t label_seed = r.value("seed", cfg.seed);
  try {
    auto rm = make_rare_mode_env(spec, label_seed);
    return LoadedEnv{std::move(rm.env), std::move(rm.reference), std::move(rm.y_star),
                     std::move(rm.warnings)};
  } catch (const ConstructionError& err) {
    throw ConfigError("env.rare_mode", err.what());
  }
}

void set_dotted(Json& doc, const std::string& dotted_key, const Json& value) {
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const auto part = dotted_key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError(dotted_key, "malformed key");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    Json& next = (*node)[part];
    if (next.is_null()) next = Json::object();
    if (!next.is_object()) throw ConfigError(dotted_key, "path crosses a non-object value");
    node = &next;
    start = dot + 1;
  }
}

std::string metrics_csv(const std::vector<MetricsRecord>& log) {
  std::ostringstream os;
  os << "step,mean_train_reward,kl_value,grad_norm,mean_rollout_entropy,pass_at_1,pass_at_kmax,"
        "support_size\n";
  for (const auto& m : log) {
    os << m.step << ',' << format_double(m.mean_train_reward) << ',' << format_double(m.kl_value)
       << ',' << format_double(m.grad_norm) << ',' << format_double(m.mean_rollout_entropy);
    if (m.eval && !m.eval->pass_at_k.empty()) {
      const auto& pk = m.eval->pass_at_k;
      const auto one = pk.find(1);
      os << ',' << (one != pk.end() ? format_double(one->second) : std::string());
      os << ',' << format_double(pk.rbegin()->second) << ',' << m.eval->support_size_at_eps;
    } else {
      os << ",,,";
    }
    os << '\n';
  }
  return os.str();
}

Json metrics_json(const std::vector<MetricsRecord>& log) {
  Json rows = Json::array();
  for (const auto& m : log) {
    Json r = {{"step", m.step},
              {"mean_train_reward", m.mean_train_reward},
              {"kl_value", m.kl_value},
              {"grad_norm", m.grad_norm},
              {"mean_rollout_entropy", m.mean_rollout_entropy},
              {"zero_advantage", m.zero_advantage}};
    if (m.eval) {
      Json pk = Json::object();
      for (const auto& [k, v] : m.eval->pass_at_k) pk[std::to_string(k)] = v;
      r["eval"] = {{"n_samples", m.eval->n_samples},
                   {"correct_count", m.eval->correct_count},
                   {"pass_at_k", pk},
                   {"support_size_at_eps", m.eval->support_size_at_eps},
                   {"mean_trajectory_entropy", m.eval->mean_trajectory_entropy}};
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace sage
