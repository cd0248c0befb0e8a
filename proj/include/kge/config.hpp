#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kge/anchors.hpp"
#include "kge/error.hpp"
#include "kge/evaluation.hpp"
#include "kge/kg_core.hpp"
#include "kge/model.hpp"
#include "kge/train_loop.hpp"

namespace kge {

struct ConfigKey {
  std::string_view name;
  std::string_view fallback;  // used when no source sets the key; "" = unset
  std::string_view help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"model", "interht", "transe|rotate|pairre|triplere-v1|triplere-v2|distmult|complex|interht|interht-plus"},
      {"dim", "200", "entity embedding dimension d"},
      {"u", "0.05", "InterHT+ / TripleRE v2 constant"},
      {"norm", "1", "residual norm order (1 or 2)"},
      {"representation", "lookup", "lookup (one vector per entity) or tokens (anchor tokenization + encoder)"},
      {"precision", "float", "float or double for training parameters"},
      {"gamma", "10", "margin"},
      {"adv_alpha", "1", "self-adversarial temperature; 0 = uniform negative weights"},
      {"lr", "5e-4", "Adam learning rate"},
      {"beta1", "0.9", "Adam beta1"},
      {"beta2", "0.999", "Adam beta2"},
      {"adam_eps", "1e-8", "Adam epsilon"},
      {"batch_size", "512", "positives per step"},
      {"neg_size", "128", "negatives per positive"},
      {"steps_max", "500000", "training steps (0 writes the initial checkpoint)"},
      {"valid_every", "20000", "validation period in steps; 0 disables"},
      {"log_every", "100", "metrics period in steps"},
      {"neg_mode", "alternate", "alternate|head|tail corruption"},
      {"filter_negatives", "false", "redraw negatives that are train triples"},
      {"seed", "0", "seed for initialization, shuffling, sampling and tokenization"},
      {"threads", "1", "worker threads"},
      {"deterministic", "false", "force single-threaded paths"},
      {"log_wall_clock", "true", "include elapsed seconds in metric records"},
      {"anchors", "20000", "number of global anchors (capped at |E|)"},
      {"anchor_strategy", "degree", "degree or random"},
      {"k_anc", "20", "anchor slots per entity"},
      {"k_in", "5", "in-direction neighbor slots"},
      {"k_out", "5", "out-direction neighbor slots"},
      {"d_tok", "200", "token embedding width"},
      {"heads", "4", "attention heads"},
      {"ffn_mult", "2", "feed-forward expansion"},
      {"combiner", "transformer", "transformer or mean-pool"},
      {"center_token", "true", "give each entity its own center token"},
      {"protocol", "filtered-full", "filtered-full|candidate-set|raw-full"},
      {"tie_policy", "mean", "optimistic|pessimistic|mean"},
      {"eval_split", "test", "valid or test"},
      {"both_directions", "true", "rank heads as well as tails"},
      {"max_eval_triples", "0", "evaluate only the first N triples; 0 = all"},
      {"candidates", "", "candidate list file for the candidate-set protocol"},
      {"format", "labels", "triple files hold labels or numeric ids"},
      {"train", "", "train triples (ingest)"},
      {"valid", "", "valid triples (ingest)"},
      {"test", "", "test triples (ingest)"},
      {"data_dir", "", "ingested store directory"},
      {"tokens", "", "token cache file"},
      {"checkpoint", "", "checkpoint file (written by train, read by eval/export)"},
      {"log", "", "metrics JSON-lines file"},
      {"out", "", "export destination"},
      {"export_table", "entities", "entities or relations"},
      {"gradcheck_instances", "100", "finite-difference instances per kernel"},
      {"gradcheck_dim", "8", "kernel dimension for gradcheck"},
  };
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

// Presets list every key they set; gamma and adv_alpha are left for the user.
inline const std::map<std::string, std::map<std::string, std::string>>& presets() {
  static const std::map<std::string, std::map<std::string, std::string>> p = {
      {"interht-paper",
       {{"model", "interht"}, {"dim", "200"}, {"u", "0.05"}, {"norm", "1"}, {"representation", "tokens"},
        {"lr", "5e-4"}, {"batch_size", "512"}, {"neg_size", "128"}, {"steps_max", "500000"},
        {"valid_every", "20000"}, {"neg_mode", "alternate"}, {"anchors", "20000"}, {"k_anc", "20"}, {"k_in", "5"},
        {"k_out", "5"}, {"d_tok", "200"}, {"heads", "4"}, {"ffn_mult", "2"}, {"combiner", "transformer"},
        {"center_token", "true"}, {"beta1", "0.9"}, {"beta2", "0.999"}, {"adam_eps", "1e-8"},
        {"filter_negatives", "false"}, {"anchor_strategy", "degree"}}},
      {"interht-plus-paper",
       {{"model", "interht-plus"}, {"dim", "512"}, {"u", "0.05"}, {"norm", "1"}, {"representation", "tokens"},
        {"lr", "5e-4"}, {"batch_size", "512"}, {"neg_size", "128"}, {"steps_max", "500000"},
        {"valid_every", "20000"}, {"neg_mode", "alternate"}, {"anchors", "20000"}, {"k_anc", "20"}, {"k_in", "5"},
        {"k_out", "5"}, {"d_tok", "512"}, {"heads", "4"}, {"ffn_mult", "2"}, {"combiner", "transformer"},
        {"center_token", "true"}, {"beta1", "0.9"}, {"beta2", "0.999"}, {"adam_eps", "1e-8"},
        {"filter_negatives", "false"}, {"anchor_strategy", "degree"}}},
  };
  return p;
}

inline constexpr std::string_view kEnvPrefix = "KGE_";

inline std::string env_name(std::string_view key) {
  std::string s(kEnvPrefix);
  for (char c : key) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TokenizerConfig tokenizer;
  std::size_t anchors = 20000;
  AnchorStrategy anchor_strategy = AnchorStrategy::degree;
  bool double_precision = false;
  bool deterministic = false;
  Split eval_split = Split::test;
  TripleFormat format = TripleFormat::labels;
  std::string export_table = "entities";
  std::size_t gradcheck_instances = 100;
  std::size_t gradcheck_dim = 8;
  std::map<std::string, std::filesystem::path> paths;  // only keys that were set
  std::map<std::string, std::string> values;           // every key, resolved
  std::map<std::string, std::string> sources;          // default|preset:<name>|file|env|flag

  std::optional<std::filesystem::path> path(const std::string& key) const {
    const auto it = paths.find(key);
    if (it == paths.end()) return std::nullopt;
    return it->second;
  }
};

// Layering, lowest first: key defaults, preset, config file, environment, flags.
class ConfigBuilder {
 public:
  void preset(const std::string& name) {
    const auto it = presets().find(name);
    if (it == presets().end()) {
      errors_.push_back("unknown preset '" + name + "'");
      return;
    }
    preset_ = name;
    for (const auto& [k, v] : it->second) put(k, v, "preset:" + name);
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
      errors_.push_back("cannot open config file " + path.string());
      return;
    }
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      if (!set_assignment(line, "file")) {
        errors_.push_back(path.string() + ":" + std::to_string(no) + ": expected key=value");
      }
    }
  }

  void load_env(const std::function<const char*(const char*)>& getenv = [](const char* n) { return std::getenv(n); }) {
    for (const auto& k : config_keys()) {
      if (const char* v = getenv(env_name(k.name).c_str())) put(std::string(k.name), v, "env");
    }
  }

  void set(const std::string& key, const std::string& value, const std::string& source = "flag") {
    put(key, value, source);
  }

  // "key=value"; returns false when there is no '='.
  bool set_assignment(std::string_view text, const std::string& source = "flag") {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) return false;
    auto trim = [](std::string_view s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string_view::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return std::string(s.substr(b, e - b + 1));
    };
    put(trim(text.substr(0, eq)), trim(text.substr(eq + 1)), source);
    return true;
  }

  RunConfig build() const;

 private:
  void put(const std::string& key, const std::string& value, const std::string& source) {
    if (!find_config_key(key)) {
      errors_.push_back("unknown config key '" + key + "' (from " + source + ")");
      return;
    }
    values_[key] = {value, source};
  }

  std::map<std::string, std::pair<std::string, std::string>> values_;
  std::vector<std::string> errors_;
  std::optional<std::string> preset_;
};

namespace detail {

class Fields {
 public:
  Fields(const std::map<std::string, std::string>& v, std::vector<std::string>& errors) : v_(v), errors_(errors) {}

  const std::string& str(const std::string& key) const { return v_.at(key); }

  template <typename T>
  T number(const std::string& key, T fallback, std::optional<T> min = std::nullopt) {
    const std::string& s = v_.at(key);
    T out{};
    const auto* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, out);
    if (s.empty() || ec != std::errc() || p != end) {
      errors_.push_back(key + ": '" + s + "' is not a valid number");
      return fallback;
    }
    if (min && out < *min) {
      errors_.push_back(key + ": must be at least " + std::to_string(*min));
      return fallback;
    }
    return out;
  }

  bool boolean(const std::string& key) {
    const std::string& s = v_.at(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    errors_.push_back(key + ": '" + s + "' is not a boolean");
    return false;
  }

  template <typename E>
  E choice(const std::string& key, std::initializer_list<std::pair<std::string_view, E>> options, E fallback) {
    const std::string& s = v_.at(key);
    for (const auto& [name, value] : options) {
      if (name == s) return value;
    }
    std::string allowed;
    for (const auto& [name, value] : options) allowed += (allowed.empty() ? "" : "|") + std::string(name);
    errors_.push_back(key + ": '" + s + "' is not one of " + allowed);
    return fallback;
  }

  template <typename F>
  auto parsed(const std::string& key, F parse, decltype(parse(std::string_view{})) fallback) {
    try {
      return parse(v_.at(key));
    } catch (const ConfigError& e) {
      errors_.push_back(key + ": " + e.what());
      return fallback;
    }
  }

 private:
  const std::map<std::string, std::string>& v_;
  std::vector<std::string>& errors_;
};

}  // namespace detail

// Every problem is collected and reported in one ConfigError.
inline RunConfig ConfigBuilder::build() const {
  std::vector<std::string> errors = errors_;
  RunConfig cfg;
  for (const auto& k : config_keys()) {
    const std::string key(k.name);
    if (const auto it = values_.find(key); it != values_.end()) {
      cfg.values[key] = it->second.first;
      cfg.sources[key] = it->second.second;
    } else {
      cfg.values[key] = std::string(k.fallback);
      cfg.sources[key] = "default";
    }
  }
  if (preset_) {
    for (const char* key : {"gamma", "adv_alpha"}) {
      if (cfg.sources[key] == "default") {
        errors.push_back(std::string(key) + ": preset '" + *preset_ + "' requires an explicit value");
      }
    }
  }

  detail::Fields f(cfg.values, errors);
  auto& m = cfg.model;
  m.kind = f.parsed("model", parse_model_kind, ModelKind::interht);
  m.dim = f.number<std::uint32_t>("dim", 200, 1u);
  m.u = f.number<double>("u", 0.05, 0.0);
  m.norm = f.choice<NormOrder>("norm", {{"1", NormOrder::l1}, {"2", NormOrder::l2}}, NormOrder::l1);
  m.representation = f.choice<EntityRepresentation>(
      "representation", {{"lookup", EntityRepresentation::lookup}, {"tokens", EntityRepresentation::tokens}},
      EntityRepresentation::lookup);
  cfg.double_precision = f.choice<bool>("precision", {{"float", false}, {"double", true}}, false);
  if (traits(m.kind).complex_valued && m.dim % 2) errors.push_back("dim: " + cfg.values["model"] + " needs an even dim");

  auto& t = cfg.train;
  t.loss.gamma = f.number<double>("gamma", 10.0);
  if (t.loss.gamma <= 0) errors.push_back("gamma: must be positive");
  t.loss.adv_alpha = f.number<double>("adv_alpha", 1.0, 0.0);
  t.adam.lr = f.number<double>("lr", 5e-4);
  if (t.adam.lr <= 0) errors.push_back("lr: must be positive");
  t.adam.beta1 = f.number<double>("beta1", 0.9, 0.0);
  t.adam.beta2 = f.number<double>("beta2", 0.999, 0.0);
  if (t.adam.beta1 >= 1 || t.adam.beta2 >= 1) errors.push_back("beta1/beta2: must be below 1");
  t.adam.eps = f.number<double>("adam_eps", 1e-8);
  if (t.adam.eps <= 0) errors.push_back("adam_eps: must be positive");
  t.batch_size = f.number<std::size_t>("batch_size", 512, 1);
  t.neg_size = f.number<std::size_t>("neg_size", 128, 1);
  t.steps_max = f.number<std::uint64_t>("steps_max", 500000);
  t.valid_every = f.number<std::uint64_t>("valid_every", 20000);
  t.log_every = f.number<std::uint64_t>("log_every", 100);
  t.neg_mode = f.choice<NegativeMode>("neg_mode",
                                      {{"alternate", NegativeMode::alternate},
                                       {"head", NegativeMode::corrupt_head},
                                       {"tail", NegativeMode::corrupt_tail}},
                                      NegativeMode::alternate);
  t.filter_negatives = f.boolean("filter_negatives");
  t.seed = f.number<std::uint64_t>("seed", 0);
  t.threads = f.number<std::size_t>("threads", 1, 1);
  cfg.deterministic = f.boolean("deterministic");
  if (cfg.deterministic) t.threads = 1;
  t.log_wall_clock = f.boolean("log_wall_clock");

  cfg.anchors = f.number<std::size_t>("anchors", 20000);
  cfg.anchor_strategy = f.choice<AnchorStrategy>(
      "anchor_strategy", {{"degree", AnchorStrategy::degree}, {"random", AnchorStrategy::random}},
      AnchorStrategy::degree);
  cfg.tokenizer.k_anc = f.number<std::uint32_t>("k_anc", 20);
  cfg.tokenizer.k_in = f.number<std::uint32_t>("k_in", 5);
  cfg.tokenizer.k_out = f.number<std::uint32_t>("k_out", 5);
  auto& enc = m.encoder;
  enc.d_tok = f.number<std::uint32_t>("d_tok", 200, 1u);
  enc.heads = f.number<std::uint32_t>("heads", 4, 1u);
  if (enc.heads && enc.d_tok % enc.heads) errors.push_back("heads: must divide d_tok");
  enc.ffn_mult = f.number<std::uint32_t>("ffn_mult", 2, 1u);
  enc.combiner = f.choice<Combiner>("combiner",
                                    {{"transformer", Combiner::transformer}, {"mean-pool", Combiner::mean_pool}},
                                    Combiner::transformer);
  enc.center_token = f.boolean("center_token");

  auto& e = t.valid_eval;
  e.protocol = f.parsed("protocol", parse_protocol, Protocol::filtered_full);
  e.tie_policy = f.parsed("tie_policy", parse_tie_policy, TiePolicy::mean);
  e.both_directions = f.boolean("both_directions");
  e.max_triples = f.number<std::size_t>("max_eval_triples", 0);
  e.threads = t.threads;
  cfg.eval_split = f.choice<Split>("eval_split", {{"valid", Split::valid}, {"test", Split::test}}, Split::test);
  cfg.format = f.choice<TripleFormat>("format", {{"labels", TripleFormat::labels}, {"numeric", TripleFormat::numeric}},
                                      TripleFormat::labels);
  cfg.export_table = f.choice<std::string>("export_table", {{"entities", "entities"}, {"relations", "relations"}},
                                           "entities");
  cfg.gradcheck_instances = f.number<std::size_t>("gradcheck_instances", 100, 1);
  cfg.gradcheck_dim = f.number<std::size_t>("gradcheck_dim", 8, 2);

  for (const char* key : {"candidates", "train", "valid", "test", "data_dir", "tokens", "checkpoint", "log", "out"}) {
    if (!cfg.values[key].empty()) cfg.paths[key] = cfg.values[key];
  }

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& err : errors) msg += "\n  " + err;
    throw ConfigError(msg);
  }
  return cfg;
}

}  // namespace kge
