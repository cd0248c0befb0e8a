#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "kge/binary_io.hpp"
#include "kge/error.hpp"
#include "kge/kg_core.hpp"
#include "kge/model.hpp"

namespace kge {

enum class Protocol : std::uint32_t {
  filtered_full = 0,  // all entities minus other known completions
  candidate_set = 1,  // fixed per-query candidate lists
  raw_full = 2,       // all entities, no filtering
};

enum class TiePolicy : std::uint32_t { optimistic = 0, pessimistic = 1, mean = 2 };

inline std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::filtered_full: return "filtered-full";
    case Protocol::candidate_set: return "candidate-set";
    case Protocol::raw_full: return "raw-full";
  }
  return "?";
}

inline std::string_view to_string(TiePolicy t) {
  switch (t) {
    case TiePolicy::optimistic: return "optimistic";
    case TiePolicy::pessimistic: return "pessimistic";
    case TiePolicy::mean: return "mean";
  }
  return "?";
}

inline Protocol parse_protocol(std::string_view s) {
  for (auto p : {Protocol::filtered_full, Protocol::candidate_set, Protocol::raw_full}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown protocol '" + std::string(s) + "'");
}

inline TiePolicy parse_tie_policy(std::string_view s) {
  for (auto p : {TiePolicy::optimistic, TiePolicy::pessimistic, TiePolicy::mean}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown tie policy '" + std::string(s) + "'");
}

// Rank from counts of candidates strictly better than / tied with the gold.
inline double rank_from_counts(std::size_t better, std::size_t tied, TiePolicy policy) {
  switch (policy) {
    case TiePolicy::optimistic: return 1.0 + double(better);
    case TiePolicy::pessimistic: return 1.0 + double(better) + double(tied);
    case TiePolicy::mean: return 1.0 + double(better) + 0.5 * double(tied);
  }
  return 1.0 + double(better);
}

struct RankResult {
  FilterQuery query;
  double rank = 1.0;
  std::size_t num_candidates = 0;  // including the gold entity
};

// Fixed candidate lists per evaluation triple and direction, uniform length.
struct CandidateSets {
  std::size_t num_triples = 0;
  std::size_t width = 0;
  std::vector<EntityId> head;  // num_triples x width
  std::vector<EntityId> tail;

  std::span<const EntityId> of(std::size_t triple_index, QueryDirection dir) const {
    const auto& v = dir == QueryDirection::head ? head : tail;
    return {v.data() + triple_index * width, width};
  }

  // Throws on a length mismatch with the split; returns warnings for lists
  // that contain the gold entity (which ranking skips).
  std::vector<std::string> check_against(std::span<const Triple> split) const {
    if (split.size() != num_triples) {
      throw Error("candidate file has " + std::to_string(num_triples) + " queries but split has " +
                  std::to_string(split.size()));
    }
    std::vector<std::string> warnings;
    std::size_t with_gold = 0;
    for (std::size_t i = 0; i < num_triples; ++i) {
      for (auto dir : {QueryDirection::head, QueryDirection::tail}) {
        const auto list = of(i, dir);
        const EntityId gold = dir == QueryDirection::head ? split[i].head : split[i].tail;
        with_gold += std::find(list.begin(), list.end(), gold) != list.end();
      }
    }
    if (with_gold) {
      warnings.push_back(std::to_string(with_gold) + " candidate list(s) contain the gold entity; deduplicated");
    }
    return warnings;
  }

  // TSV: one line per query, "<triple-index>\t<head|tail>\t<id>\t<id>...".
  void save_tsv(std::ostream& out) const {
    for (std::size_t i = 0; i < num_triples; ++i) {
      for (auto dir : {QueryDirection::head, QueryDirection::tail}) {
        out << i << '\t' << (dir == QueryDirection::head ? "head" : "tail");
        for (auto e : of(i, dir)) out << '\t' << e;
        out << '\n';
      }
    }
  }

  // Binary: "KGCS", version, num_triples (u64), width (u32), head block, tail block.
  void save_binary(std::ostream& out) const {
    io::write_magic(out, "KGCS");
    io::write_pod<std::uint32_t>(out, 1);
    io::write_pod<std::uint64_t>(out, num_triples);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(width));
    io::write_array<EntityId>(out, head);
    io::write_array<EntityId>(out, tail);
  }

  friend bool operator==(const CandidateSets&, const CandidateSets&) = default;
};

inline CandidateSets load_candidate_sets_tsv(std::istream& in) {
  CandidateSets sets;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<EntityId>> heads, tails;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = detail::split_tabs(line);
    if (fields.size() < 3) throw ParseError("expected '<index>\\t<head|tail>\\t<ids...>'", lineno);
    const auto index = detail::parse_id(fields[0], lineno);
    if (fields[1] != "head" && fields[1] != "tail") throw ParseError("direction must be head or tail", lineno);
    auto& target = fields[1] == "head" ? heads : tails;
    if (index >= target.size()) target.resize(index + 1);
    if (!target[index].empty()) throw ParseError("duplicate query line", lineno);
    for (std::size_t f = 2; f < fields.size(); ++f) target[index].push_back(detail::parse_id(fields[f], lineno));
    if (sets.width == 0) sets.width = target[index].size();
    if (target[index].size() != sets.width) throw ParseError("candidate list length is not uniform", lineno);
  }
  if (heads.size() != tails.size()) throw ParseError("head and tail query counts differ", 0);
  sets.num_triples = heads.size();
  for (std::size_t i = 0; i < sets.num_triples; ++i) {
    if (heads[i].empty() || tails[i].empty()) throw ParseError("missing query " + std::to_string(i), 0);
    sets.head.insert(sets.head.end(), heads[i].begin(), heads[i].end());
    sets.tail.insert(sets.tail.end(), tails[i].begin(), tails[i].end());
  }
  return sets;
}

inline CandidateSets load_candidate_sets_binary(std::istream& in) {
  io::expect_magic(in, "KGCS");
  if (const auto v = io::read_pod<std::uint32_t>(in, "version"); v != 1) {
    throw FormatError("unsupported candidate file version " + std::to_string(v));
  }
  CandidateSets sets;
  sets.num_triples = io::read_pod<std::uint64_t>(in, "query count");
  sets.width = io::read_pod<std::uint32_t>(in, "width");
  sets.head.resize(sets.num_triples * sets.width);
  sets.tail.resize(sets.num_triples * sets.width);
  io::read_array<EntityId>(in, sets.head, "head candidates");
  io::read_array<EntityId>(in, sets.tail, "tail candidates");
  return sets;
}

// Sniffs the binary magic, else parses TSV.
inline CandidateSets load_candidate_sets(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  const bool binary = in.gcount() == 4 && std::string_view(magic, 4) == "KGCS";
  in.clear();
  in.seekg(0);
  return binary ? load_candidate_sets_binary(in) : load_candidate_sets_tsv(in);
}

// Ranks the gold entity of one query. `candidates` is used only by the
// candidate-set protocol; the gold entity inside it is skipped.
template <typename T>
RankResult rank_query(const EntitySnapshot<T>& snapshot, const TripleStore& store, const FilterQuery& query,
                      Protocol protocol, TiePolicy tie_policy, std::span<const EntityId> candidates = {}) {
  const Triple& q = query.triple;
  const bool predict_tail = query.direction == QueryDirection::tail;
  const EntityId gold = query.gold();
  auto dist = [&](EntityId e) {
    return predict_tail ? snapshot.distance(q.head, q.relation, e) : snapshot.distance(e, q.relation, q.tail);
  };
  const T gold_d = dist(gold);
  std::size_t better = 0, tied = 0, considered = 0;
  auto visit = [&](EntityId e) {
    ++considered;
    const T d = dist(e);
    if (std::isnan(gold_d)) {
      ++better;
    } else if (d < gold_d) {
      ++better;
    } else if (d == gold_d) {
      ++tied;
    }
  };

  if (protocol == Protocol::candidate_set) {
    if (candidates.empty()) throw Error("empty candidate list");
    std::vector<EntityId> uniq(candidates.begin(), candidates.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (EntityId e : uniq) {
      if (e != gold) visit(e);
    }
  } else {
    std::vector<EntityId> filtered;
    if (protocol == Protocol::filtered_full) filtered = filtered_candidates(store, query);
    auto skip = filtered.begin();
    for (EntityId e = 0; e < store.num_entities(); ++e) {
      if (e == gold) continue;
      while (skip != filtered.end() && *skip < e) ++skip;
      if (skip != filtered.end() && *skip == e) continue;
      visit(e);
    }
  }
  RankResult r;
  r.query = query;
  r.num_candidates = considered + 1;
  r.rank = rank_from_counts(better, tied, tie_policy);
  return r;
}

struct EvalReport {
  double mrr = 0.0;
  std::map<int, double> hits_at{{1, 0.0}, {3, 0.0}, {10, 0.0}};
  std::size_t count = 0;
  Protocol protocol = Protocol::filtered_full;
  TiePolicy tie_policy = TiePolicy::mean;
  std::vector<double> ranks;  // per query, in query order
};

// MRR and Hits@{1,3,10} from ranks; reciprocal ranks accumulate in double.
inline EvalReport summarize_ranks(std::span<const double> ranks, Protocol protocol, TiePolicy tie_policy) {
  EvalReport report;
  report.protocol = protocol;
  report.tie_policy = tie_policy;
  report.count = ranks.size();
  report.ranks.assign(ranks.begin(), ranks.end());
  if (ranks.empty()) return report;
  double rr = 0.0;
  for (double r : ranks) {
    rr += 1.0 / r;
    for (auto& [k, v] : report.hits_at) v += r <= double(k) ? 1.0 : 0.0;
  }
  report.mrr = rr / double(ranks.size());
  for (auto& [k, v] : report.hits_at) v /= double(ranks.size());
  return report;
}

struct EvalOptions {
  Protocol protocol = Protocol::filtered_full;
  TiePolicy tie_policy = TiePolicy::mean;
  bool both_directions = true;
  const CandidateSets* candidates = nullptr;  // required for candidate-set protocol
  std::size_t threads = 1;
  std::size_t max_triples = 0;  // 0 = whole split
};

// Query order: for each triple, tail prediction then (optionally) head prediction.
template <typename T>
EvalReport evaluate_split(const EntitySnapshot<T>& snapshot, const TripleStore& store, std::span<const Triple> split,
                          const EvalOptions& options) {
  if (split.empty()) throw Error("cannot evaluate an empty split");
  if (options.protocol == Protocol::candidate_set) {
    if (!options.candidates) throw ConfigError("candidate-set protocol requires candidate lists");
    options.candidates->check_against(split);
  }
  const std::size_t n = options.max_triples ? std::min(options.max_triples, split.size()) : split.size();
  const std::size_t per = options.both_directions ? 2 : 1;
  std::vector<double> ranks(n * per);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t dir = 0; dir < per; ++dir) {
        FilterQuery q{split[i], dir == 0 ? QueryDirection::tail : QueryDirection::head};
        std::span<const EntityId> cands;
        if (options.protocol == Protocol::candidate_set) cands = options.candidates->of(i, q.direction);
        ranks[i * per + dir] = rank_query(snapshot, store, q, options.protocol, options.tie_policy, cands).rank;
      }
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, n));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  return summarize_ranks(ranks, options.protocol, options.tie_policy);
}

}  // namespace kge
