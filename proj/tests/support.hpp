#pragma once

// Shared fixtures and brute-force oracles. Nothing here calls the library
// routine it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "kge/kge.hpp"

namespace testkit {

using namespace kge;

inline TripleStore store_from(std::vector<Triple> train, std::uint32_t ne, std::uint32_t nr,
                              std::vector<Triple> valid = {}, std::vector<Triple> test = {}) {
  std::ostringstream tr, va, te;
  for (const auto& t : train) tr << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
  for (const auto& t : valid) va << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
  for (const auto& t : test) te << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
  std::istringstream a(tr.str()), b(va.str()), c(te.str());
  LoadOptions opts;
  opts.format = TripleFormat::numeric;
  opts.num_entities = ne;
  opts.num_relations = nr;
  return load_triples(a, &b, &c, opts);
}

// Distinct random triples, split 80/10/10.
inline TripleStore random_store(std::uint32_t ne, std::uint32_t nr, std::size_t nt, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::set<Triple> seen;
  std::vector<Triple> all;
  while (all.size() < nt) {
    Triple t{static_cast<EntityId>(rng() % ne), static_cast<RelationId>(rng() % nr), static_cast<EntityId>(rng() % ne)};
    if (seen.insert(t).second) all.push_back(t);
  }
  const std::size_t a = nt * 8 / 10, b = nt * 9 / 10;
  return store_from({all.begin(), all.begin() + a}, ne, nr, {all.begin() + a, all.begin() + b},
                    {all.begin() + b, all.end()});
}

// Entities on a 15 x 20 grid; each relation is a fixed displacement, so some
// relations compose from others ((2,1) = (1,0) + (1,1), ...).
struct GridKg {
  std::vector<Triple> train, held_out;
  std::uint32_t entities = 300;
  std::uint32_t relations = 0;
};

inline GridKg grid_kg(std::uint64_t seed, double held_out_fraction = 0.1) {
  const int w = 15, h = 20;
  const std::vector<std::pair<int, int>> moves = {{1, 0}, {0, 1}, {1, 1}, {2, 0}, {0, 2}, {2, 1},
                                                  {1, 2}, {1, -1}, {3, 0}, {0, 3}, {2, 2}, {3, 1}};
  GridKg kg;
  kg.relations = static_cast<std::uint32_t>(moves.size());
  std::vector<Triple> all;
  for (std::uint32_t r = 0; r < moves.size(); ++r) {
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) {
        const int tx = x + moves[r].first, ty = y + moves[r].second;
        if (tx < 0 || tx >= w || ty < 0 || ty >= h) continue;
        all.push_back({static_cast<EntityId>(x * h + y), r, static_cast<EntityId>(tx * h + ty)});
      }
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  const auto cut = static_cast<std::size_t>(double(all.size()) * held_out_fraction);
  kg.held_out.assign(all.begin(), all.begin() + std::ptrdiff_t(cut));
  kg.train.assign(all.begin() + std::ptrdiff_t(cut), all.end());
  return kg;
}

// Ranking by full sort: distances of every admissible candidate plus the gold,
// sorted; ties located by scanning the sorted run that contains the gold value.
struct OracleRank {
  double optimistic, pessimistic, mean;
};

template <typename T>
OracleRank oracle_rank(const EntitySnapshot<T>& snap, const TripleStore& store, const Triple& q, bool predict_tail,
                       bool filtered, const std::vector<EntityId>* candidate_list = nullptr) {
  const EntityId gold = predict_tail ? q.tail : q.head;
  auto dist = [&](EntityId e) {
    return predict_tail ? snap.distance(q.head, q.relation, e) : snap.distance(e, q.relation, q.tail);
  };
  auto is_true = [&](EntityId e) {
    const Triple c = predict_tail ? Triple{q.head, q.relation, e} : Triple{e, q.relation, q.tail};
    for (Split s : {Split::train, Split::valid, Split::test}) {
      for (const auto& t : store.split(s)) {
        if (t == c) return true;
      }
    }
    return false;
  };
  std::vector<EntityId> pool;
  if (candidate_list) {
    std::set<EntityId> uniq(candidate_list->begin(), candidate_list->end());
    pool.assign(uniq.begin(), uniq.end());
  } else {
    for (EntityId e = 0; e < store.num_entities(); ++e) {
      if (!filtered || !is_true(e)) pool.push_back(e);
    }
  }
  std::vector<std::pair<T, int>> scored;  // (distance, is_gold)
  scored.push_back({dist(gold), 1});
  for (EntityId e : pool) {
    if (e != gold) scored.push_back({dist(e), 0});
  }
  std::sort(scored.begin(), scored.end());
  const T g = dist(gold);
  std::size_t first = scored.size(), last = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].first == g) {
      first = std::min(first, i);
      last = std::max(last, i);
    }
  }
  OracleRank r;
  r.optimistic = double(first + 1);
  r.pessimistic = double(last + 1);
  r.mean = (r.optimistic + r.pessimistic) / 2.0;
  return r;
}

inline double oracle_mrr(const std::vector<double>& ranks) {
  double s = 0;
  for (double r : ranks) s += 1.0 / r;
  return s / double(ranks.size());
}

// Central differences of f w.r.t. every entry of x.
inline std::vector<double> finite_diff(const std::function<double()>& f, std::span<double> x, double step = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double fp = f();
    x[i] = saved - step;
    const double fm = f();
    x[i] = saved;
    g[i] = (fp - fm) / (2 * step);
  }
  return g;
}

inline double rel_err(std::span<const double> a, std::span<const double> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double s = std::sqrt(std::max(na, nb));
  return s < 1e-12 ? 0.0 : std::sqrt(d) / s;
}

// Mean loss over a batch with the negative weights held at `frozen`, computed
// from distances only.
template <typename T>
double frozen_weight_loss(const Model<T>& model, std::span<const Triple> batch, const NegativeBatch& negs,
                          double gamma, const std::vector<std::vector<double>>& frozen) {
  EntitySnapshot<T> snap(model);
  auto ls = [](double x) { return -std::log1p(std::exp(-x)); };
  double total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& p = batch[i];
    double l = -ls(gamma - double(snap.distance(p.head, p.relation, p.tail)));
    for (std::size_t j = 0; j < negs.k; ++j) {
      const EntityId n = negs.ids[i * negs.k + j];
      const double d = negs.side == QueryDirection::tail ? double(snap.distance(p.head, p.relation, n))
                                                         : double(snap.distance(n, p.relation, p.tail));
      l -= frozen[i][j] * ls(d - gamma);
    }
    total += l;
  }
  return total / double(batch.size());
}

// Weights softmax(alpha * (gamma - d)) written out directly.
template <typename T>
std::vector<std::vector<double>> oracle_weights(const Model<T>& model, std::span<const Triple> batch,
                                                const NegativeBatch& negs, double gamma, double alpha) {
  EntitySnapshot<T> snap(model);
  std::vector<std::vector<double>> w(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& p = batch[i];
    double z = 0;
    for (std::size_t j = 0; j < negs.k; ++j) {
      const EntityId n = negs.ids[i * negs.k + j];
      const double d = negs.side == QueryDirection::tail ? double(snap.distance(p.head, p.relation, n))
                                                         : double(snap.distance(n, p.relation, p.tail));
      w[i].push_back(std::exp(alpha * (gamma - d)));
      z += w[i].back();
    }
    for (auto& x : w[i]) x /= z;
  }
  return w;
}

template <typename T>
std::string checkpoint_bytes(const Model<T>& m, const AdamState<T>* a, std::uint64_t step, const std::string& rng) {
  std::ostringstream os(std::ios::binary);
  save_checkpoint(os, m, a, step, rng);
  return os.str();
}

}  // namespace testkit
