#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kge/error.hpp"
#include "kge/kg_core.hpp"
#include "kge/model.hpp"
#include "kge/params.hpp"
#include "kge/scoring.hpp"

namespace kge {

enum class NegativeMode : std::uint32_t { corrupt_head = 0, corrupt_tail = 1, alternate = 2 };

// Side actually corrupted in a given step.
inline QueryDirection corrupted_side(NegativeMode mode, std::uint64_t step) {
  switch (mode) {
    case NegativeMode::corrupt_head: return QueryDirection::head;
    case NegativeMode::corrupt_tail: return QueryDirection::tail;
    case NegativeMode::alternate: return step % 2 == 0 ? QueryDirection::tail : QueryDirection::head;
  }
  return QueryDirection::tail;
}

struct NegativeBatch {
  QueryDirection side = QueryDirection::tail;
  std::size_t k = 0;
  std::vector<EntityId> ids;  // batch x k, row-major
  std::size_t degenerate_draws = 0;

  std::span<const EntityId> row(std::size_t i) const { return {ids.data() + i * k, k}; }
};

// Uniform entity draws. A draw equal to the gold entity is redrawn once and then
// kept. With filter_train, draws forming a train triple are redrawn (up to
// max_filter_tries times) instead.
template <typename Rng>
NegativeBatch sample_negatives(const TripleStore& store, std::span<const Triple> batch, std::size_t k,
                               QueryDirection side, Rng& rng, bool filter_train = false,
                               std::size_t max_filter_tries = 1000) {
  if (k == 0) throw ConfigError("negative sample size must be positive");
  NegativeBatch out;
  out.side = side;
  out.k = k;
  out.ids.resize(batch.size() * k);
  const std::uint32_t n = store.num_entities();
  std::uniform_int_distribution<std::uint32_t> draw(0, n - 1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Triple& pos = batch[i];
    const EntityId gold = side == QueryDirection::tail ? pos.tail : pos.head;
    auto corrupt = [&](EntityId e) {
      Triple t = pos;
      (side == QueryDirection::tail ? t.tail : t.head) = e;
      return t;
    };
    for (std::size_t j = 0; j < k; ++j) {
      EntityId e = draw(rng);
      if (filter_train) {
        for (std::size_t tries = 0; tries < max_filter_tries && store.train_contains(corrupt(e)); ++tries) e = draw(rng);
      } else if (e == gold) {
        e = draw(rng);
      }
      out.degenerate_draws += e == gold;
      out.ids[i * k + j] = e;
    }
  }
  return out;
}

// alpha = 0: uniform 1/k. alpha > 0: softmax over alpha * (gamma - d_i).
// Weights are constants for backpropagation.
template <typename T>
std::vector<T> self_adversarial_weights(std::span<const T> neg_d, T alpha, T gamma) {
  const std::size_t k = neg_d.size();
  if (k == 0) throw ConfigError("self-adversarial weights need at least one negative");
  std::vector<T> w(k, T(1) / T(k));
  if (alpha == T(0)) return w;
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = alpha * (gamma - neg_d[i]);
    mx = std::max(mx, w[i]);
  }
  T sum = 0;
  for (auto& x : w) sum += (x = std::exp(x - mx));
  for (auto& x : w) x /= sum;
  return w;
}

// log(sigmoid(x)), stable for large |x|.
template <typename T>
T log_sigmoid(T x) {
  return x >= T(0) ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

struct LossConfig {
  double gamma = 10.0;
  double adv_alpha = 1.0;
};

// Loss of one positive with distance d_pos and negatives neg_d.
template <typename T>
T triple_loss(T d_pos, std::span<const T> neg_d, T gamma, T alpha) {
  const auto w = self_adversarial_weights(neg_d, alpha, gamma);
  T loss = -log_sigmoid(gamma - d_pos);
  for (std::size_t i = 0; i < neg_d.size(); ++i) loss -= w[i] * log_sigmoid(neg_d[i] - gamma);
  return loss;
}

struct LossResult {
  double loss = 0.0;  // batch mean
  double mean_pos_distance = 0.0;
  double mean_neg_distance = 0.0;
};

// Mean loss over the batch; gradients are accumulated into grads (which the
// caller clears). entities is caller-owned scratch reused across steps.
// normalizer overrides the divisor (the full batch size when the batch is split
// across workers).
template <typename T>
LossResult loss_and_grads(const Model<T>& model, std::span<const Triple> batch, const NegativeBatch& negatives,
                          const LossConfig& config, GradSet<T>& grads, EntityBatch<T>& entities,
                          std::size_t normalizer = 0) {
  if (negatives.ids.size() != batch.size() * negatives.k) throw DimensionError("negative matrix shape mismatch");
  std::vector<EntityId> touched;
  touched.reserve(batch.size() * (2 + negatives.k));
  for (const auto& t : batch) {
    touched.push_back(t.head);
    touched.push_back(t.tail);
  }
  touched.insert(touched.end(), negatives.ids.begin(), negatives.ids.end());
  entities.reset(model, touched, grads);

  const T gamma = T(config.gamma);
  const T alpha = T(config.adv_alpha);
  const T inv_batch = T(1) / T(normalizer ? normalizer : batch.size());
  const std::size_t k = negatives.k;
  const bool tail_side = negatives.side == QueryDirection::tail;
  std::vector<T> neg_d(k);
  LossResult result;

  auto score = [&](std::size_t hs, RelationId r, std::size_t ts, T scale, bool grad) {
    const auto rel = model.relation(r);
    const auto in = model.inputs(entities.base(hs), entities.aux(hs), rel, entities.base(ts), entities.aux(ts));
    if (!grad) return score_for_loss(model.kind(), in);
    const auto rg = model.relation_grad(grads, r);
    GradSinks<T> sinks{entities.d_base(hs), entities.d_base(ts), entities.d_aux(hs), entities.d_aux(ts),
                       rg.r, rg.r_h, rg.r_t};
    return score_for_loss(model.kind(), in, scale, &sinks);
  };

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Triple& pos = batch[i];
    const std::size_t hs = entities.slot(pos.head);
    const std::size_t ts = entities.slot(pos.tail);
    const T d_pos = score(hs, pos.relation, ts, T(0), false);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t ns = entities.slot(negatives.ids[i * k + j]);
      neg_d[j] = tail_side ? score(hs, pos.relation, ns, T(0), false) : score(ns, pos.relation, ts, T(0), false);
    }
    const auto w = self_adversarial_weights<T>(neg_d, alpha, gamma);
    T loss = -log_sigmoid(gamma - d_pos);
    for (std::size_t j = 0; j < k; ++j) loss -= w[j] * log_sigmoid(neg_d[j] - gamma);
    if (!std::isfinite(static_cast<double>(loss))) {
      throw Error("non-finite loss at triple (" + std::to_string(pos.head) + ", " + std::to_string(pos.relation) +
                  ", " + std::to_string(pos.tail) + ")");
    }
    result.loss += double(loss) * double(inv_batch);
    result.mean_pos_distance += double(d_pos) * double(inv_batch);

    // dL/dd_pos = 1 - sigmoid(gamma - d_pos); dL/dd_j = -w_j * (1 - sigmoid(d_j - gamma)).
    score(hs, pos.relation, ts, inv_batch * (T(1) - sigmoid(gamma - d_pos)), true);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t ns = entities.slot(negatives.ids[i * k + j]);
      const T coeff = -inv_batch * w[j] * (T(1) - sigmoid(neg_d[j] - gamma));
      if (tail_side) {
        score(hs, pos.relation, ns, coeff, true);
      } else {
        score(ns, pos.relation, ts, coeff, true);
      }
      result.mean_neg_distance += double(neg_d[j]) * double(inv_batch) / double(k);
    }
  }
  entities.backward();
  return result;
}

// First/second moments congruent with the parameters, plus a per-row step
// count so that sparse rows get their own bias correction.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::vector<std::vector<std::uint64_t>> steps;

  AdamState() = default;
  explicit AdamState(const ParamSet<T>& params) {
    for (const auto& p : params) {
      m.emplace_back(p.value.size(), T(0));
      v.emplace_back(p.value.size(), T(0));
      steps.emplace_back(p.rows, 0);
    }
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Rows that received no (or an all-zero) gradient are skipped; frozen rows are never updated.
template <typename T>
void adam_step(ParamSet<T>& params, const GradSet<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || grads.size() != params.size()) {
    throw DimensionError("optimizer state does not match parameters");
  }
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2), eps = T(cfg.eps), lr = T(cfg.lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    const auto& g = grads[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t row : g.touched_rows) {
      if (p.frozen_row && *p.frozen_row == row) continue;
      const std::size_t off = row * p.cols;
      const bool any = std::any_of(g.value.begin() + std::ptrdiff_t(off),
                                   g.value.begin() + std::ptrdiff_t(off + p.cols), [](T x) { return x != T(0); });
      if (!any) continue;
      const auto step = ++state.steps[k][row];
      const T c1 = T(1) - T(std::pow(double(cfg.beta1), double(step)));
      const T c2 = T(1) - T(std::pow(double(cfg.beta2), double(step)));
      for (std::size_t j = off; j < off + p.cols; ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g.value[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g.value[j] * g.value[j];
        p.value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
      }
    }
  }
}

}  // namespace kge
