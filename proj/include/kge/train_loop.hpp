#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "kge/evaluation.hpp"
#include "kge/kg_core.hpp"
#include "kge/model.hpp"
#include "kge/training.hpp"

namespace kge {

struct TrainConfig {
  LossConfig loss;
  AdamConfig adam;
  std::size_t batch_size = 512;
  std::size_t neg_size = 128;
  std::uint64_t steps_max = 500000;
  std::uint64_t valid_every = 20000;  // 0 disables validation
  NegativeMode neg_mode = NegativeMode::alternate;
  bool filter_negatives = false;
  std::uint64_t seed = 0;
  std::uint64_t log_every = 100;
  EvalOptions valid_eval;
  std::size_t threads = 1;
  bool log_wall_clock = true;
};

struct MetricsRecord {
  std::uint64_t step = 0;
  double loss = 0.0;  // mean over the steps since the previous record
  double lr = 0.0;
  std::optional<EvalReport> valid;
  std::optional<double> wall_seconds;
};

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mrr"] = r.mrr;
  for (const auto& [k, v] : r.hits_at) j["hits@" + std::to_string(k)] = v;
  j["count"] = r.count;
  j["protocol"] = std::string(to_string(r.protocol));
  j["tie_policy"] = std::string(to_string(r.tie_policy));
  return j;
}

inline std::string to_json_line(const MetricsRecord& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["lr"] = m.lr;
  if (m.valid) {
    j["valid_mrr"] = m.valid->mrr;
    for (const auto& [k, v] : m.valid->hits_at) j["valid_hits@" + std::to_string(k)] = v;
    j["valid_protocol"] = std::string(to_string(m.valid->protocol));
  }
  if (m.wall_seconds) j["wall_clock"] = *m.wall_seconds;
  return j.dump();
}

template <typename T>
struct TrainSinks {
  std::function<void(const MetricsRecord&)> metrics;
  // Called whenever validation MRR improves.
  std::function<void(const Model<T>&, const AdamState<T>&, std::uint64_t step, const std::string& rng_state)> on_best;
};

struct TrainOutcome {
  std::uint64_t steps = 0;
  std::vector<double> losses;  // per step
  std::optional<double> best_valid_mrr;
  std::uint64_t best_step = 0;
  std::string rng_state;
  std::vector<std::string> warnings;
};

inline std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

// sample -> score -> loss -> Adam step, repeated steps_max times. Batches walk
// a per-epoch shuffle of the train split. Single-threaded runs are bit-for-bit
// reproducible from the seed.
template <typename T>
TrainOutcome train_loop(const TripleStore& store, Model<T>& model, AdamState<T>& adam, const TrainConfig& config,
                        const TrainSinks<T>& sinks = {}) {
  if (config.batch_size == 0 || config.neg_size == 0) throw ConfigError("batch_size and neg_size must be positive");
  if (store.train.empty()) throw Error("train split is empty");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(store.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  const std::size_t workers = std::max<std::size_t>(1, config.threads);
  std::vector<GradSet<T>> grads;
  std::vector<EntityBatch<T>> entity_scratch(workers);
  for (std::size_t w = 0; w < workers; ++w) grads.emplace_back(model.params());

  TrainOutcome outcome;
  if (store.num_entities() == 1) outcome.warnings.push_back("only one entity: every negative equals the positive");
  std::vector<Triple> batch;
  double loss_since_log = 0.0;
  std::uint64_t steps_since_log = 0;

  for (std::uint64_t step = 0; step < config.steps_max; ++step) {
    batch.clear();
    while (batch.size() < config.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(store.train[order[cursor++]]);
      if (batch.size() == store.train.size()) break;
    }
    const auto side = corrupted_side(config.neg_mode, step);
    const auto negatives =
        sample_negatives(store, std::span<const Triple>(batch), config.neg_size, side, rng, config.filter_negatives);

    for (auto& g : grads) g.clear();
    double loss = 0.0;
    if (workers == 1) {
      loss = loss_and_grads(model, std::span<const Triple>(batch), negatives, config.loss, grads[0],
                            entity_scratch[0])
                 .loss;
    } else {
      const std::size_t chunk = (batch.size() + workers - 1) / workers;
      std::vector<double> partial(workers, 0.0);
      {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
          const std::size_t b = w * chunk, e = std::min(batch.size(), b + chunk);
          if (b >= e) continue;
          pool.emplace_back([&, w, b, e] {
            NegativeBatch part;
            part.side = negatives.side;
            part.k = negatives.k;
            part.ids.assign(negatives.ids.begin() + std::ptrdiff_t(b * negatives.k),
                            negatives.ids.begin() + std::ptrdiff_t(e * negatives.k));
            partial[w] = loss_and_grads(model, std::span<const Triple>(batch).subspan(b, e - b), part, config.loss,
                                        grads[w], entity_scratch[w], batch.size())
                             .loss;
          });
        }
      }
      for (std::size_t w = 1; w < workers; ++w) grads[0].merge(grads[w]);
      for (double p : partial) loss += p;
    }
    adam_step(model.params(), grads[0], adam, config.adam);
    outcome.losses.push_back(loss);
    loss_since_log += loss;
    ++steps_since_log;
    outcome.steps = step + 1;

    const bool do_valid = config.valid_every && (step + 1) % config.valid_every == 0 && !store.valid.empty();
    const bool do_log = (config.log_every && (step + 1) % config.log_every == 0) || do_valid ||
                        step + 1 == config.steps_max;
    if (do_log) {
      MetricsRecord rec;
      rec.step = step + 1;
      rec.loss = loss_since_log / double(steps_since_log);
      rec.lr = config.adam.lr;
      if (do_valid) {
        EntitySnapshot<T> snap(model);
        auto opts = config.valid_eval;
        opts.threads = std::max(opts.threads, config.threads);
        rec.valid = evaluate_split(snap, store, store.valid, opts);
        rec.valid->ranks.clear();
        if (!outcome.best_valid_mrr || rec.valid->mrr > *outcome.best_valid_mrr) {
          outcome.best_valid_mrr = rec.valid->mrr;
          outcome.best_step = step + 1;
          if (sinks.on_best) sinks.on_best(model, adam, step + 1, rng_state_string(rng));
        }
      }
      if (config.log_wall_clock) {
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
      if (sinks.metrics) sinks.metrics(rec);
      loss_since_log = 0.0;
      steps_since_log = 0;
    }
  }
  outcome.rng_state = rng_state_string(rng);
  return outcome;
}

}  // namespace kge
