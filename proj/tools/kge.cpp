// Command-line front end: ingest, tokenize, train, eval, gradcheck, export.
//
// Configuration comes from key defaults, then --preset, --config FILE,
// KGE_<KEY> environment variables and finally --<key> / --set key=value flags.
// JSON lines go to stdout; human-readable summaries go to stderr.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "kge/kge.hpp"

namespace {

using namespace kge;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitVerify = 3;

void emit(const json& j) { std::cout << j.dump() << '\n' << std::flush; }

void warn_all(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

// Required inputs must exist, required outputs must be named. All problems are
// reported together before anything runs.
void require(const RunConfig& cfg, std::initializer_list<const char*> inputs, std::initializer_list<const char*> outputs) {
  std::vector<std::string> errors;
  for (const char* key : inputs) {
    const auto p = cfg.path(key);
    if (!p) {
      errors.push_back(std::string(key) + ": required");
    } else if (!fs::exists(*p)) {
      errors.push_back(std::string(key) + ": " + p->string() + " does not exist");
    }
  }
  for (const char* key : outputs) {
    if (!cfg.path(key)) errors.push_back(std::string(key) + ": required");
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

int cmd_ingest(const RunConfig& cfg) {
  require(cfg, {"train"}, {"data_dir"});
  std::vector<std::string> missing;
  for (const char* key : {"valid", "test"}) {
    if (const auto p = cfg.path(key); p && !fs::exists(*p)) missing.push_back(std::string(key) + ": " + p->string());
  }
  if (!missing.empty()) throw ConfigError("missing input: " + missing.front());
  LoadOptions opts;
  opts.format = cfg.format;
  const auto store = load_triple_files(*cfg.path("train"), cfg.path("valid").value_or(fs::path()),
                                       cfg.path("test").value_or(fs::path()), opts);
  warn_all(store.warnings);
  save_store(store, *cfg.path("data_dir"));
  std::cerr << store.stats_line() << '\n';
  emit({{"command", "ingest"},
        {"entities", store.num_entities()},
        {"relations", store.num_relations()},
        {"train", store.train.size()},
        {"valid", store.valid.size()},
        {"test", store.test.size()}});
  return kExitOk;
}

int cmd_tokenize(const RunConfig& cfg) {
  require(cfg, {"data_dir"}, {"tokens"});
  const auto store = load_store(*cfg.path("data_dir"));
  const auto anchors = select_global_anchors(store, cfg.anchors, cfg.anchor_strategy, cfg.train.seed);
  const auto cache = tokenize_all(store, anchors, cfg.tokenizer, cfg.train.seed);
  {
    std::ofstream out(*cfg.path("tokens"), std::ios::binary);
    if (!out) throw Error("cannot write " + cfg.path("tokens")->string());
    cache.save(out);
  }
  const auto cov = anchor_coverage(store, anchors, cache);
  std::cerr << "anchors=" << anchors.size() << " one-hop coverage=" << cov.one_hop_fraction()
            << " center-only=" << cov.center_only << "\nfilled anchor slots:\n";
  for (std::size_t i = 0; i < cov.anchors_filled.size(); ++i) {
    if (cov.anchors_filled[i]) std::cerr << "  " << std::setw(4) << i << "  " << cov.anchors_filled[i] << '\n';
  }
  emit({{"command", "tokenize"},
        {"entities", cov.entities},
        {"anchors", anchors.size()},
        {"with_one_hop_anchor", cov.with_one_hop_anchor},
        {"one_hop_fraction", cov.one_hop_fraction()},
        {"center_only", cov.center_only},
        {"anchors_filled", cov.anchors_filled}});
  return kExitOk;
}

std::shared_ptr<const TokenCache> load_tokens(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open token cache " + path.string());
  return std::make_shared<const TokenCache>(TokenCache::load(in));
}

template <typename T>
void write_checkpoint(const fs::path& path, const Model<T>& model, const AdamState<T>& adam, std::uint64_t step,
                      const std::string& rng_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  save_checkpoint(out, model, &adam, step, rng_state);
}

template <typename T>
int run_train(const RunConfig& cfg) {
  const bool tokens = cfg.model.representation == EntityRepresentation::tokens;
  if (tokens) {
    require(cfg, {"data_dir", "tokens"}, {"checkpoint"});
  } else {
    require(cfg, {"data_dir"}, {"checkpoint"});
  }
  const auto store = load_store(*cfg.path("data_dir"));
  ModelConfig mc = cfg.model;
  mc.num_entities = store.num_entities();
  mc.num_relations = store.num_relations();
  Model<T> model(mc, tokens ? load_tokens(*cfg.path("tokens")) : nullptr);
  model.init(cfg.train.seed);
  AdamState<T> adam(model.params());
  const fs::path ckpt = *cfg.path("checkpoint");

  std::optional<std::ofstream> log;
  if (const auto p = cfg.path("log")) {
    log.emplace(*p);
    if (!*log) throw Error("cannot write " + p->string());
  }
  TrainSinks<T> sinks;
  sinks.metrics = [&](const MetricsRecord& rec) {
    const auto line = to_json_line(rec);
    std::cout << line << '\n' << std::flush;
    if (log) *log << line << '\n' << std::flush;
    std::cerr << "step " << rec.step << " loss " << rec.loss;
    if (rec.valid) std::cerr << " valid mrr " << rec.valid->mrr;
    std::cerr << '\n';
  };
  sinks.on_best = [&](const Model<T>& m, const AdamState<T>& a, std::uint64_t step, const std::string& rng) {
    write_checkpoint(fs::path(ckpt.string() + ".best"), m, a, step, rng);
  };

  const auto outcome = train_loop(store, model, adam, cfg.train, sinks);
  warn_all(outcome.warnings);
  const auto rng = outcome.steps ? outcome.rng_state : rng_state_string(std::mt19937_64(cfg.train.seed));
  write_checkpoint(ckpt, model, adam, outcome.steps, rng);
  json done{{"command", "train"}, {"steps", outcome.steps}, {"checkpoint", ckpt.string()}};
  if (outcome.best_valid_mrr) {
    done["best_valid_mrr"] = *outcome.best_valid_mrr;
    done["best_step"] = outcome.best_step;
  }
  emit(done);
  return kExitOk;
}

// Model shaped after the checkpoint header, parameters loaded.
template <typename T>
std::unique_ptr<Model<T>> model_from_checkpoint(const RunConfig& cfg, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  const auto header = read_checkpoint_header(in);
  std::shared_ptr<const TokenCache> tokens;
  if (header.model.representation == EntityRepresentation::tokens) {
    require(cfg, {"tokens"}, {});
    tokens = load_tokens(*cfg.path("tokens"));
  }
  auto model = std::make_unique<Model<T>>(header.model, tokens);
  in.clear();
  in.seekg(0);
  load_checkpoint(in, *model, static_cast<AdamState<T>*>(nullptr),
                  [](const std::string& w) { std::cerr << "warning: " << w << '\n'; });
  return model;
}

template <typename T>
int run_eval(const RunConfig& cfg) {
  require(cfg, {"data_dir", "checkpoint"}, {});
  auto options = cfg.train.valid_eval;
  std::optional<CandidateSets> candidates;
  if (options.protocol == Protocol::candidate_set) {
    require(cfg, {"candidates"}, {});
    std::ifstream in(*cfg.path("candidates"), std::ios::binary);
    candidates = load_candidate_sets(in);
    options.candidates = &*candidates;
  }
  const auto store = load_store(*cfg.path("data_dir"));
  const auto model = model_from_checkpoint<T>(cfg, *cfg.path("checkpoint"));
  if (model->config().num_entities != store.num_entities() || model->config().num_relations != store.num_relations()) {
    throw DimensionError("checkpoint vocabulary does not match the store");
  }
  const auto& split = store.split(cfg.eval_split);
  if (candidates) warn_all(candidates->check_against(split));
  EntitySnapshot<T> snapshot(*model);
  const auto report = evaluate_split(snapshot, store, split, options);
  auto j = report_json(report);
  j["split"] = std::string(to_string(cfg.eval_split));
  emit(j);
  std::cerr << to_string(cfg.eval_split) << ": mrr " << report.mrr << " hits@1 " << report.hits_at.at(1)
            << " hits@3 " << report.hits_at.at(3) << " hits@10 " << report.hits_at.at(10) << " (" << report.count
            << " queries)\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg) {
  auto rows = gradcheck_kernels(cfg.gradcheck_instances, cfg.gradcheck_dim);
  rows.push_back(gradcheck_transformer(cfg.gradcheck_instances, 8, 2));
  rows.push_back(gradcheck_transformer(cfg.gradcheck_instances, 16, 4, 17));
  rows.push_back(gradcheck_encoder(20, 8, 2, Combiner::transformer));
  rows.push_back(gradcheck_encoder(20, 8, 2, Combiner::mean_pool));
  bool ok = true;
  std::cerr << std::left << std::setw(24) << "check" << std::right << std::setw(10) << "instances" << std::setw(9)
            << "skipped" << std::setw(14) << "max_rel_err" << std::setw(10) << "tol" << "  result\n";
  for (const auto& r : rows) {
    ok &= r.pass();
    std::cerr << std::left << std::setw(24) << r.name << std::right << std::setw(10) << r.instances << std::setw(9)
              << r.skipped << std::setw(14) << std::scientific << std::setprecision(3) << r.max_rel_err
              << std::setw(10) << r.tolerance << std::defaultfloat << "  " << (r.pass() ? "ok" : "FAIL") << '\n';
    emit({{"check", r.name},
          {"instances", r.instances},
          {"skipped", r.skipped},
          {"max_rel_err", r.max_rel_err},
          {"tolerance", r.tolerance},
          {"pass", r.pass()}});
  }
  return ok ? kExitOk : kExitVerify;
}

// Header: "KGEX", u32 version, u32 table (0 entities, 1 relations), u64 rows,
// u64 cols; then rows*cols little-endian f32.
template <typename T>
int run_export(const RunConfig& cfg) {
  require(cfg, {"checkpoint"}, {"out"});
  const auto model = model_from_checkpoint<T>(cfg, *cfg.path("checkpoint"));
  const bool entities = cfg.export_table == "entities";
  std::vector<float> data;
  std::uint64_t rows = 0, cols = 0;
  if (entities) {
    EntitySnapshot<T> snapshot(*model);
    rows = model->config().num_entities;
    cols = model->dim() * (model->has_aux() ? 2 : 1);
    data.reserve(rows * cols);
    for (EntityId e = 0; e < rows; ++e) {
      const auto b = snapshot.base(e);
      data.insert(data.end(), b.begin(), b.end());
      const auto a = snapshot.aux(e);
      data.insert(data.end(), a.begin(), a.end());
    }
  } else {
    rows = model->config().num_relations;
    for (RelationId r = 0; r < rows; ++r) {
      const auto v = model->relation(r);
      const auto before = data.size();
      for (auto part : {v.r, v.r_h, v.r_t}) data.insert(data.end(), part.begin(), part.end());
      cols = data.size() - before;
    }
  }
  std::ofstream out(*cfg.path("out"), std::ios::binary);
  if (!out) throw Error("cannot write " + cfg.path("out")->string());
  io::write_magic(out, "KGEX");
  io::write_pod<std::uint32_t>(out, 1);
  io::write_pod<std::uint32_t>(out, entities ? 0 : 1);
  io::write_pod<std::uint64_t>(out, rows);
  io::write_pod<std::uint64_t>(out, cols);
  io::write_array<float>(out, data);
  if (!out) throw Error("failed writing " + cfg.path("out")->string());
  emit({{"command", "export"}, {"table", cfg.export_table}, {"rows", rows}, {"cols", cols}});
  return kExitOk;
}

template <template <typename> class F>
int by_precision(const RunConfig& cfg) {
  return cfg.double_precision ? F<double>::run(cfg) : F<float>::run(cfg);
}

template <typename T>
struct Train {
  static int run(const RunConfig& c) { return run_train<T>(c); }
};
template <typename T>
struct Eval {
  static int run(const RunConfig& c) { return run_eval<T>(c); }
};
template <typename T>
struct Export {
  static int run(const RunConfig& c) { return run_export<T>(c); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge graph embedding engine"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.footer("Every key can also be set as KGE_<KEY> in the environment (e.g. KGE_BATCH_SIZE=256).\n"
             "Precedence: defaults < --preset < --config < environment < flags.");

  std::string preset, config_file;
  std::vector<std::string> assignments;
  bool deterministic = false;
  app.add_option("--preset", preset, "named preset: interht-paper | interht-plus-paper");
  app.add_option("--config", config_file, "file of key=value lines");
  app.add_option("--set", assignments, "key=value override (repeatable)");
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_options;
  for (const auto& key : config_keys()) {
    const std::string name(key.name);
    if (name == "deterministic") {
      app.add_flag("--deterministic", deterministic, std::string(key.help));
      continue;
    }
    std::string help(key.help);
    if (!key.fallback.empty()) help += " [default: " + std::string(key.fallback) + "]";
    flag_options[name] = app.add_option("--" + name, flag_values[name], help);
  }

  std::string command;
  for (const auto& [name, desc] : std::vector<std::pair<std::string, std::string>>{
           {"ingest", "load triple files (train/valid/test) and write the store to data_dir"},
           {"tokenize", "select anchors and write the token cache"},
           {"train", "train a model and write checkpoint (and checkpoint.best)"},
           {"eval", "rank eval_split with a checkpoint and print the report as JSON"},
           {"gradcheck", "compare analytic gradients against finite differences"},
           {"export", "write entity or relation vectors as a header plus f32 rows"},
       }) {
    app.add_subcommand(name, desc)->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    ConfigBuilder builder;
    if (!preset.empty()) builder.preset(preset);
    if (!config_file.empty()) builder.load_file(config_file);
    builder.load_env();
    for (const auto& [name, opt] : flag_options) {
      if (opt->count()) builder.set(name, flag_values[name]);
    }
    if (deterministic) builder.set("deterministic", "true");
    for (const auto& a : assignments) {
      if (!builder.set_assignment(a)) throw ConfigError("--set expects key=value, got '" + a + "'");
    }
    const RunConfig cfg = builder.build();

    if (command == "ingest") return cmd_ingest(cfg);
    if (command == "tokenize") return cmd_tokenize(cfg);
    if (command == "train") return by_precision<Train>(cfg);
    if (command == "eval") return by_precision<Eval>(cfg);
    if (command == "gradcheck") return cmd_gradcheck(cfg);
    if (command == "export") return by_precision<Export>(cfg);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInternal;
  }
}
