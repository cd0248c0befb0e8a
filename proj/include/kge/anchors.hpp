#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kge/binary_io.hpp"
#include "kge/error.hpp"
#include "kge/kg_core.hpp"

namespace kge {

inline constexpr std::uint32_t kPadToken = std::numeric_limits<std::uint32_t>::max();

enum class AnchorStrategy : std::uint32_t { degree = 0, random = 1 };

struct AnchorSet {
  std::vector<EntityId> ids;             // anchor vocabulary order
  std::vector<std::uint32_t> index_of;   // entity -> anchor index, kPadToken if not an anchor
  AnchorStrategy strategy = AnchorStrategy::degree;

  std::size_t size() const { return ids.size(); }
  bool contains(EntityId e) const { return e < index_of.size() && index_of[e] != kPadToken; }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::vector<EntityId> distinct_nodes(std::span<const Neighbor> neighbors) {
  std::vector<EntityId> out;
  out.reserve(neighbors.size());
  for (const auto& n : neighbors) out.push_back(n.node);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Union of in- and out-direction neighbors of v, ascending, without v itself.
inline std::vector<EntityId> one_hop(const TripleStore& store, EntityId v) {
  std::vector<EntityId> out;
  for (const auto& n : store.in_neighbors(v)) out.push_back(n.node);
  for (const auto& n : store.out_neighbors(v)) out.push_back(n.node);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  std::erase(out, v);
  return out;
}

}  // namespace detail

inline AnchorSet make_anchor_set(std::vector<EntityId> ids, std::uint32_t num_entities, AnchorStrategy strategy) {
  AnchorSet set;
  set.strategy = strategy;
  set.index_of.assign(num_entities, kPadToken);
  for (std::uint32_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= num_entities) throw Error("anchor id out of range");
    if (set.index_of[ids[i]] != kPadToken) throw Error("duplicate anchor " + std::to_string(ids[i]));
    set.index_of[ids[i]] = i;
  }
  set.ids = std::move(ids);
  return set;
}

// Degree strategy: top-`count` by train in+out degree, ties by ascending id.
inline AnchorSet select_global_anchors(const TripleStore& store, std::size_t count, AnchorStrategy strategy,
                                       std::uint64_t seed = 0) {
  if (count == 0) throw Error("anchor count must be positive");
  const std::uint32_t n = store.num_entities();
  count = std::min<std::size_t>(count, n);
  std::vector<EntityId> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (strategy == AnchorStrategy::degree) {
    std::vector<std::size_t> degree(n);
    for (EntityId v = 0; v < n; ++v) degree[v] = store.degree(v);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                      [&](EntityId a, EntityId b) { return degree[a] != degree[b] ? degree[a] > degree[b] : a < b; });
  } else {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  order.resize(count);
  return make_anchor_set(std::move(order), n, strategy);
}

// Anchors describing `node`, as entity ids padded with kPadToken to k_anc:
// one-hop anchors by ascending id first, then two-hop anchors ranked by how many
// non-anchor one-hop nodes of `node` they are adjacent to (descending, ties by id).
inline std::vector<EntityId> assign_node_anchors(const TripleStore& store, const AnchorSet& anchors, EntityId node,
                                                 std::size_t k_anc) {
  std::vector<EntityId> out;
  out.reserve(k_anc);
  const auto hop1 = detail::one_hop(store, node);
  for (EntityId x : hop1) {
    if (out.size() == k_anc) break;
    if (anchors.contains(x)) out.push_back(x);
  }

  if (out.size() < k_anc) {
    // count[y]: distinct non-anchor one-hop nodes adjacent to two-hop anchor y.
    std::vector<std::pair<EntityId, std::size_t>> counts;
    auto bump = [&](EntityId y, std::size_t by) {
      auto it = std::lower_bound(counts.begin(), counts.end(), y,
                                 [](const auto& p, EntityId key) { return p.first < key; });
      if (it != counts.end() && it->first == y) {
        it->second += by;
      } else {
        counts.insert(it, {y, by});
      }
    };
    for (EntityId x : hop1) {
      const bool via_non_anchor = !anchors.contains(x);
      for (EntityId y : detail::one_hop(store, x)) {
        if (y == node || !anchors.contains(y) || std::binary_search(hop1.begin(), hop1.end(), y)) continue;
        bump(y, via_non_anchor ? 1 : 0);
      }
    }
    std::stable_sort(counts.begin(), counts.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [y, c] : counts) {
      if (out.size() == k_anc) break;
      out.push_back(y);
    }
  }
  out.resize(k_anc, kPadToken);
  return out;
}

struct DirectionSamples {
  std::vector<EntityId> in;   // heads of edges into the node
  std::vector<EntityId> out;  // tails of edges out of the node
};

namespace detail {

inline std::vector<EntityId> sample_padded(std::vector<EntityId> pool, std::size_t k, std::mt19937_64& rng) {
  std::vector<EntityId> out;
  if (pool.size() <= k) {
    out = std::move(pool);
  } else {
    out.reserve(k);
    std::sample(pool.begin(), pool.end(), std::back_inserter(out), static_cast<std::ptrdiff_t>(k), rng);
  }
  out.resize(k, kPadToken);
  return out;
}

inline std::mt19937_64 node_rng(std::uint64_t seed, EntityId node) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(node)));
}

}  // namespace detail

// Uniform sampling without replacement over distinct in/out neighbor nodes.
// Sampled lists keep ascending id order; short lists are taken whole and padded.
inline DirectionSamples sample_direction_neighbors(const TripleStore& store, EntityId node, std::size_t k_in,
                                                   std::size_t k_out, std::uint64_t seed) {
  auto rng = detail::node_rng(seed, node);
  DirectionSamples s;
  s.in = detail::sample_padded(detail::distinct_nodes(store.in_neighbors(node)), k_in, rng);
  s.out = detail::sample_padded(detail::distinct_nodes(store.out_neighbors(node)), k_out, rng);
  return s;
}

struct TokenizerConfig {
  std::uint32_t k_anc = 20;
  std::uint32_t k_in = 5;
  std::uint32_t k_out = 5;

  std::uint32_t width() const { return k_anc + k_in + k_out + 1; }
};

enum class Segment : std::uint8_t { anchor = 0, in = 1, out = 2, center = 3 };

// Slot order: anchors, in-neighbors, out-neighbors, center. Anchor slots hold
// anchor-vocabulary indices; the rest hold entity ids. kPadToken marks padding.
struct SubgraphTokens {
  EntityId center = 0;
  std::vector<std::uint32_t> anchors;
  std::vector<std::uint32_t> in_neighbors;
  std::vector<std::uint32_t> out_neighbors;

  std::size_t size() const { return anchors.size() + in_neighbors.size() + out_neighbors.size() + 1; }

  // Flattened (token, segment) slots in canonical order.
  std::vector<std::uint32_t> flat_tokens() const {
    std::vector<std::uint32_t> out;
    out.reserve(size());
    out.insert(out.end(), anchors.begin(), anchors.end());
    out.insert(out.end(), in_neighbors.begin(), in_neighbors.end());
    out.insert(out.end(), out_neighbors.begin(), out_neighbors.end());
    out.push_back(center);
    return out;
  }

  std::vector<Segment> segments() const {
    std::vector<Segment> out;
    out.reserve(size());
    out.insert(out.end(), anchors.size(), Segment::anchor);
    out.insert(out.end(), in_neighbors.size(), Segment::in);
    out.insert(out.end(), out_neighbors.size(), Segment::out);
    out.push_back(Segment::center);
    return out;
  }

  std::vector<bool> mask() const {
    std::vector<bool> out;
    out.reserve(size());
    for (auto t : flat_tokens()) out.push_back(t != kPadToken);
    return out;
  }

  friend bool operator==(const SubgraphTokens&, const SubgraphTokens&) = default;
};

inline SubgraphTokens build_subgraph_tokens(const TripleStore& store, const AnchorSet& anchors, EntityId node,
                                            const TokenizerConfig& config, std::uint64_t seed) {
  SubgraphTokens tokens;
  tokens.center = node;
  for (EntityId a : assign_node_anchors(store, anchors, node, config.k_anc)) {
    tokens.anchors.push_back(a == kPadToken ? kPadToken : anchors.index_of[a]);
  }
  auto samples = sample_direction_neighbors(store, node, config.k_in, config.k_out, seed);
  tokens.in_neighbors = std::move(samples.in);
  tokens.out_neighbors = std::move(samples.out);
  return tokens;
}

// Precomputed tokenization of every entity, plus the anchor vocabulary.
class TokenCache {
 public:
  TokenCache() = default;
  TokenCache(TokenizerConfig config, std::uint64_t seed, std::vector<EntityId> anchor_ids,
             std::uint32_t num_entities)
      : config_(config), seed_(seed), anchor_ids_(std::move(anchor_ids)), num_entities_(num_entities) {
    slots_.assign(static_cast<std::size_t>(num_entities_) * config_.width(), kPadToken);
  }

  const TokenizerConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::uint32_t num_entities() const { return num_entities_; }
  std::uint32_t num_anchors() const { return static_cast<std::uint32_t>(anchor_ids_.size()); }
  const std::vector<EntityId>& anchor_ids() const { return anchor_ids_; }

  void set(EntityId e, const SubgraphTokens& tokens) {
    const auto flat = tokens.flat_tokens();
    if (flat.size() != config_.width()) throw DimensionError("token record width mismatch");
    std::copy(flat.begin(), flat.end(), slots_.begin() + static_cast<std::ptrdiff_t>(offset(e)));
  }

  SubgraphTokens at(EntityId e) const {
    if (e >= num_entities_) throw Error("entity out of range for token cache");
    auto it = slots_.begin() + static_cast<std::ptrdiff_t>(offset(e));
    SubgraphTokens t;
    t.anchors.assign(it, it + config_.k_anc);
    it += config_.k_anc;
    t.in_neighbors.assign(it, it + config_.k_in);
    it += config_.k_in;
    t.out_neighbors.assign(it, it + config_.k_out);
    it += config_.k_out;
    t.center = *it;
    return t;
  }

  // Header: "DGPT", version, k_anc, k_in, k_out, seed, num_entities, num_anchors,
  // anchor ids; then per entity `width` u32 token ids followed by ceil(width/8) mask bytes.
  void save(std::ostream& out) const {
    io::write_magic(out, "DGPT");
    io::write_pod<std::uint32_t>(out, kVersion);
    io::write_pod(out, config_.k_anc);
    io::write_pod(out, config_.k_in);
    io::write_pod(out, config_.k_out);
    io::write_pod(out, seed_);
    io::write_pod(out, num_entities_);
    io::write_pod(out, num_anchors());
    io::write_array<EntityId>(out, anchor_ids_);
    const std::size_t w = config_.width();
    std::vector<std::uint8_t> mask((w + 7) / 8);
    for (EntityId e = 0; e < num_entities_; ++e) {
      std::span<const std::uint32_t> rec(slots_.data() + offset(e), w);
      io::write_array(out, rec);
      std::fill(mask.begin(), mask.end(), 0);
      for (std::size_t i = 0; i < w; ++i) {
        if (rec[i] != kPadToken) mask[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      }
      io::write_array<std::uint8_t>(out, mask);
    }
    if (!out) throw Error("failed writing token cache");
  }

  static TokenCache load(std::istream& in) {
    io::expect_magic(in, "DGPT");
    if (const auto v = io::read_pod<std::uint32_t>(in, "version"); v != kVersion) {
      throw FormatError("unsupported token cache version " + std::to_string(v));
    }
    TokenizerConfig cfg;
    cfg.k_anc = io::read_pod<std::uint32_t>(in, "k_anc");
    cfg.k_in = io::read_pod<std::uint32_t>(in, "k_in");
    cfg.k_out = io::read_pod<std::uint32_t>(in, "k_out");
    const auto seed = io::read_pod<std::uint64_t>(in, "seed");
    const auto ne = io::read_pod<std::uint32_t>(in, "num_entities");
    const auto na = io::read_pod<std::uint32_t>(in, "num_anchors");
    std::vector<EntityId> anchor_ids(na);
    io::read_array<EntityId>(in, anchor_ids, "anchor ids");
    TokenCache cache(cfg, seed, std::move(anchor_ids), ne);
    const std::size_t w = cfg.width();
    std::vector<std::uint8_t> mask((w + 7) / 8);
    for (EntityId e = 0; e < ne; ++e) {
      std::span<std::uint32_t> rec(cache.slots_.data() + cache.offset(e), w);
      io::read_array(in, rec, "token record");
      io::read_array<std::uint8_t>(in, mask, "mask bits");
      for (std::size_t i = 0; i < w; ++i) {
        const bool bit = (mask[i / 8] >> (i % 8)) & 1u;
        if (bit != (rec[i] != kPadToken)) throw FormatError("mask bit disagrees with token id");
        if (i < cfg.k_anc && bit && rec[i] >= na) throw FormatError("anchor token out of range");
        if (i >= cfg.k_anc && bit && rec[i] >= ne) throw FormatError("entity token out of range");
      }
    }
    return cache;
  }

  friend bool operator==(const TokenCache&, const TokenCache&) = default;

 private:
  static constexpr std::uint32_t kVersion = 1;

  std::size_t offset(EntityId e) const { return static_cast<std::size_t>(e) * config_.width(); }

  TokenizerConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<EntityId> anchor_ids_;
  std::uint32_t num_entities_ = 0;
  std::vector<std::uint32_t> slots_;
};

inline bool operator==(const TokenizerConfig& a, const TokenizerConfig& b) {
  return a.k_anc == b.k_anc && a.k_in == b.k_in && a.k_out == b.k_out;
}

inline TokenCache tokenize_all(const TripleStore& store, const AnchorSet& anchors, const TokenizerConfig& config,
                               std::uint64_t seed) {
  TokenCache cache(config, seed, anchors.ids, store.num_entities());
  for (EntityId e = 0; e < store.num_entities(); ++e) {
    cache.set(e, build_subgraph_tokens(store, anchors, e, config, seed));
  }
  return cache;
}

struct CoverageReport {
  std::size_t entities = 0;
  std::size_t with_one_hop_anchor = 0;  // >=1 anchor among direct neighbors
  std::size_t center_only = 0;          // no anchor and no neighbor tokens
  std::vector<std::size_t> anchors_filled;  // histogram over number of filled anchor slots

  double one_hop_fraction() const { return entities ? double(with_one_hop_anchor) / double(entities) : 0.0; }
};

inline CoverageReport anchor_coverage(const TripleStore& store, const AnchorSet& anchors, const TokenCache& cache) {
  CoverageReport report;
  report.entities = cache.num_entities();
  report.anchors_filled.assign(cache.config().k_anc + 1, 0);
  for (EntityId e = 0; e < cache.num_entities(); ++e) {
    const auto hop1 = detail::one_hop(store, e);
    if (std::any_of(hop1.begin(), hop1.end(), [&](EntityId x) { return anchors.contains(x); })) {
      ++report.with_one_hop_anchor;
    }
    const auto t = cache.at(e);
    const auto flat = t.flat_tokens();
    const auto real = std::count_if(flat.begin(), flat.end() - 1, [](auto x) { return x != kPadToken; });
    if (real == 0) ++report.center_only;
    const auto filled = std::count_if(t.anchors.begin(), t.anchors.end(), [](auto x) { return x != kPadToken; });
    ++report.anchors_filled[static_cast<std::size_t>(filled)];
  }
  return report;
}

}  // namespace kge
