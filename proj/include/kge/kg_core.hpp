#pragma once

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "kge/binary_io.hpp"
#include "kge/error.hpp"

namespace kge {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

enum class Split { train, valid, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

// Dense label <-> id map. Ids are assigned in insertion order.
class Vocabulary {
 public:
  std::uint32_t size() const { return static_cast<std::uint32_t>(labels_.size()); }
  bool empty() const { return labels_.empty(); }

  std::uint32_t intern(std::string_view label) {
    auto [it, inserted] = ids_.try_emplace(std::string(label), size());
    if (inserted) labels_.emplace_back(label);
    return it->second;
  }

  std::optional<std::uint32_t> find(std::string_view label) const {
    auto it = ids_.find(std::string(label));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& label(std::uint32_t id) const { return labels_.at(id); }
  const std::vector<std::string>& labels() const { return labels_; }

  // Identity vocabulary "0".."n-1", used by the numeric triple format.
  static Vocabulary numeric(std::uint32_t n) {
    Vocabulary v;
    v.labels_.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) v.intern(std::to_string(i));
    return v;
  }

  void save_tsv(std::ostream& out) const {
    for (std::uint32_t i = 0; i < size(); ++i) out << labels_[i] << '\t' << i << '\n';
  }

  static Vocabulary load_tsv(std::istream& in) {
    std::vector<std::optional<std::string>> slots;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto tab = line.rfind('\t');
      if (tab == std::string::npos || tab == 0) throw ParseError("expected 'label<TAB>id'", lineno);
      std::uint32_t id = 0;
      const char* first = line.data() + tab + 1;
      const char* last = line.data() + line.size();
      auto [ptr, ec] = std::from_chars(first, last, id);
      if (ec != std::errc() || ptr != last || first == last) throw ParseError("bad id", lineno);
      if (id >= slots.size()) slots.resize(id + 1);
      if (slots[id]) throw ParseError("duplicate id " + std::to_string(id), lineno);
      slots[id] = line.substr(0, tab);
    }
    Vocabulary v;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (!slots[i]) throw ParseError("ids are not dense: missing " + std::to_string(i), 0);
      if (v.intern(*slots[i]) != i) throw ParseError("duplicate label '" + *slots[i] + "'", 0);
    }
    return v;
  }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

struct Neighbor {
  EntityId node = 0;
  RelationId relation = 0;

  friend auto operator<=>(const Neighbor&, const Neighbor&) = default;
};

// CSR adjacency: the neighbors of v are entries[offsets[v] .. offsets[v+1]).
class Adjacency {
 public:
  Adjacency() = default;

  // edges: (owner, neighbor) pairs; sorted per owner by (neighbor, relation).
  static Adjacency build(std::size_t num_nodes, std::span<const Triple> triples, bool keyed_by_tail) {
    Adjacency adj;
    adj.offsets_.assign(num_nodes + 1, 0);
    for (const auto& t : triples) ++adj.offsets_[(keyed_by_tail ? t.tail : t.head) + 1];
    for (std::size_t v = 0; v < num_nodes; ++v) adj.offsets_[v + 1] += adj.offsets_[v];
    adj.entries_.resize(triples.size());
    std::vector<std::uint64_t> cursor(adj.offsets_.begin(), adj.offsets_.end() - 1);
    for (const auto& t : triples) {
      const EntityId owner = keyed_by_tail ? t.tail : t.head;
      const EntityId other = keyed_by_tail ? t.head : t.tail;
      adj.entries_[cursor[owner]++] = Neighbor{other, t.relation};
    }
    for (std::size_t v = 0; v < num_nodes; ++v) {
      std::sort(adj.entries_.begin() + static_cast<std::ptrdiff_t>(adj.offsets_[v]),
                adj.entries_.begin() + static_cast<std::ptrdiff_t>(adj.offsets_[v + 1]));
    }
    return adj;
  }

  std::span<const Neighbor> of(EntityId v) const {
    if (v + 1 >= offsets_.size()) return {};
    return {entries_.data() + offsets_[v], static_cast<std::size_t>(offsets_[v + 1] - offsets_[v])};
  }

  std::size_t degree(EntityId v) const { return of(v).size(); }
  std::size_t num_entries() const { return entries_.size(); }
  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }

 private:
  std::vector<std::uint64_t> offsets_;
  std::vector<Neighbor> entries_;
};

enum class QueryDirection { head, tail };  // which side of the triple is predicted

class TripleStore {
 public:
  Vocabulary entities;
  Vocabulary relations;
  std::vector<Triple> train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  std::vector<std::string> warnings;

  std::uint32_t num_entities() const { return entities.size(); }
  std::uint32_t num_relations() const { return relations.size(); }

  const std::vector<Triple>& split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::valid: return valid;
      case Split::test: return test;
    }
    return train;
  }

  bool indexed() const { return indexed_; }

  // Heads u with (u, r, v) in train, as (u, r), sorted.
  std::span<const Neighbor> in_neighbors(EntityId v) const { return in_adj_.of(v); }
  // Tails u with (v, r, u) in train, as (u, r), sorted.
  std::span<const Neighbor> out_neighbors(EntityId v) const { return out_adj_.of(v); }
  const Adjacency& in_adjacency() const { return in_adj_; }
  const Adjacency& out_adjacency() const { return out_adj_; }

  std::size_t degree(EntityId v) const { return in_adj_.degree(v) + out_adj_.degree(v); }

  // Membership over the union of all three splits.
  bool contains(const Triple& t) const {
    return std::binary_search(by_hrt_.begin(), by_hrt_.end(), t);
  }

  bool train_contains(const Triple& t) const {
    return std::binary_search(train_sorted_.begin(), train_sorted_.end(), t);
  }

  // All tails t with (h, r, t) known, ascending.
  std::vector<EntityId> known_tails(EntityId h, RelationId r) const {
    auto lo = std::lower_bound(by_hrt_.begin(), by_hrt_.end(), Triple{h, r, 0});
    std::vector<EntityId> out;
    for (; lo != by_hrt_.end() && lo->head == h && lo->relation == r; ++lo) out.push_back(lo->tail);
    return out;
  }

  // All heads h with (h, r, t) known, ascending.
  std::vector<EntityId> known_heads(RelationId r, EntityId t) const {
    auto key = [](const Triple& x) { return std::tuple(x.relation, x.tail, x.head); };
    auto lo = std::lower_bound(by_rth_.begin(), by_rth_.end(), Triple{0, r, t},
                               [&](const Triple& a, const Triple& b) { return key(a) < key(b); });
    std::vector<EntityId> out;
    for (; lo != by_rth_.end() && lo->relation == r && lo->tail == t; ++lo) out.push_back(lo->head);
    return out;
  }

  std::string stats_line() const {
    // Empty valid/test splits are left out.
    std::string s = "entities=" + std::to_string(num_entities()) + " relations=" + std::to_string(num_relations()) +
                    " train=" + std::to_string(train.size());
    if (!valid.empty()) s += " valid=" + std::to_string(valid.size());
    if (!test.empty()) s += " test=" + std::to_string(test.size());
    return s;
  }

  void validate_ids() const {
    for (Split s : {Split::train, Split::valid, Split::test}) {
      for (const auto& t : split(s)) {
        if (t.head >= num_entities() || t.tail >= num_entities() || t.relation >= num_relations()) {
          throw Error("triple out of vocabulary range in " + std::string(to_string(s)));
        }
      }
    }
  }

  friend void build_adjacency(TripleStore& store);

 private:
  Adjacency in_adj_;
  Adjacency out_adj_;
  std::vector<Triple> by_hrt_;
  std::vector<Triple> by_rth_;
  std::vector<Triple> train_sorted_;
  bool indexed_ = false;
};

// Populates in/out adjacency (train only) and the all-splits membership index.
inline void build_adjacency(TripleStore& store) {
  if (store.train.empty()) throw Error("train split is empty");
  store.validate_ids();
  store.in_adj_ = Adjacency::build(store.num_entities(), store.train, /*keyed_by_tail=*/true);
  store.out_adj_ = Adjacency::build(store.num_entities(), store.train, /*keyed_by_tail=*/false);

  store.train_sorted_ = store.train;
  std::sort(store.train_sorted_.begin(), store.train_sorted_.end());
  store.train_sorted_.erase(std::unique(store.train_sorted_.begin(), store.train_sorted_.end()),
                            store.train_sorted_.end());

  std::vector<Triple> all;
  all.reserve(store.train.size() + store.valid.size() + store.test.size());
  for (Split s : {Split::train, Split::valid, Split::test}) {
    all.insert(all.end(), store.split(s).begin(), store.split(s).end());
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  store.by_rth_ = all;
  std::sort(store.by_rth_.begin(), store.by_rth_.end(), [](const Triple& a, const Triple& b) {
    return std::tuple(a.relation, a.tail, a.head) < std::tuple(b.relation, b.tail, b.head);
  });
  store.by_hrt_ = std::move(all);
  store.indexed_ = true;
}

struct FilterQuery {
  Triple triple;
  QueryDirection direction = QueryDirection::tail;

  EntityId gold() const { return direction == QueryDirection::tail ? triple.tail : triple.head; }
};

// Entities that complete the query to a known triple, excluding the gold answer.
inline std::vector<EntityId> filtered_candidates(const TripleStore& store, const FilterQuery& q) {
  auto known = q.direction == QueryDirection::tail ? store.known_tails(q.triple.head, q.triple.relation)
                                                   : store.known_heads(q.triple.relation, q.triple.tail);
  std::erase(known, q.gold());
  return known;
}

enum class TripleFormat { labels, numeric };

struct LoadOptions {
  TripleFormat format = TripleFormat::labels;
  // Numeric format only: declared vocabulary sizes. When absent, max id + 1 is used.
  std::optional<std::uint32_t> num_entities;
  std::optional<std::uint32_t> num_relations;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

inline std::uint32_t parse_id(std::string_view field, std::size_t lineno) {
  std::uint32_t id = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), id);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError("not a non-negative integer id: '" + std::string(field) + "'", lineno);
  }
  return id;
}

struct RawTriple {
  std::string_view h, r, t;
};

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError("blank line", lineno);
    if (line.front() == '#') throw ParseError("comment lines are not allowed", lineno);
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw ParseError("expected 3 tab-separated fields, got " + std::to_string(fields.size()), lineno);
    }
    for (auto f : fields) {
      if (f.empty()) throw ParseError("empty field", lineno);
    }
    fn(RawTriple{fields[0], fields[1], fields[2]}, lineno);
  }
}

inline std::size_t count_duplicates(std::vector<Triple> triples) {
  std::sort(triples.begin(), triples.end());
  std::size_t dups = 0;
  for (std::size_t i = 1; i < triples.size(); ++i) dups += triples[i] == triples[i - 1];
  return dups;
}

}  // namespace detail

// Reads three tab-separated triple sources (valid/test may be null) and builds
// all indices. Label ids are assigned in first-seen order: train, valid, test.
inline TripleStore load_triples(std::istream& train, std::istream* valid, std::istream* test,
                                const LoadOptions& options = {}) {
  TripleStore store;
  std::uint32_t max_entity = 0, max_relation = 0;
  bool any = false;

  auto read_split = [&](std::istream* in, std::vector<Triple>& out, Split which) {
    if (!in) return;
    try {
      detail::for_each_line(*in, [&](const detail::RawTriple& raw, std::size_t lineno) {
        Triple t;
        if (options.format == TripleFormat::labels) {
          t.head = store.entities.intern(raw.h);
          t.relation = store.relations.intern(raw.r);
          t.tail = store.entities.intern(raw.t);
        } else {
          t.head = detail::parse_id(raw.h, lineno);
          t.relation = detail::parse_id(raw.r, lineno);
          t.tail = detail::parse_id(raw.t, lineno);
          if (options.num_entities && (t.head >= *options.num_entities || t.tail >= *options.num_entities)) {
            throw ParseError("entity id out of range (num_entities=" + std::to_string(*options.num_entities) + ")",
                             lineno);
          }
          if (options.num_relations && t.relation >= *options.num_relations) {
            throw ParseError(
                "relation id out of range (num_relations=" + std::to_string(*options.num_relations) + ")", lineno);
          }
          max_entity = std::max({max_entity, t.head, t.tail});
          max_relation = std::max(max_relation, t.relation);
          any = true;
        }
        out.push_back(t);
      });
    } catch (const ParseError& e) {
      throw ParseError(std::string(to_string(which)) + " " + e.what(), e.line());
    }
  };

  read_split(&train, store.train, Split::train);
  read_split(valid, store.valid, Split::valid);
  read_split(test, store.test, Split::test);
  if (store.train.empty()) throw Error("train split is empty");

  if (options.format == TripleFormat::numeric) {
    const std::uint32_t ne = options.num_entities.value_or(any ? max_entity + 1 : 0);
    const std::uint32_t nr = options.num_relations.value_or(any ? max_relation + 1 : 0);
    store.entities = Vocabulary::numeric(ne);
    store.relations = Vocabulary::numeric(nr);
  }

  for (Split s : {Split::train, Split::valid, Split::test}) {
    const auto dups = detail::count_duplicates(store.split(s));
    if (dups) {
      store.warnings.push_back(std::string(to_string(s)) + " split contains " + std::to_string(dups) +
                               " duplicate triple(s); kept");
    }
  }
  build_adjacency(store);
  return store;
}

inline TripleStore load_triple_files(const std::filesystem::path& train, const std::filesystem::path& valid,
                                     const std::filesystem::path& test, const LoadOptions& options = {}) {
  auto open = [](const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw Error("cannot open " + p.string());
    return f;
  };
  auto train_in = open(train);
  std::optional<std::ifstream> valid_in, test_in;
  if (!valid.empty()) valid_in = open(valid);
  if (!test.empty()) test_in = open(test);
  return load_triples(train_in, valid_in ? &*valid_in : nullptr, test_in ? &*test_in : nullptr, options);
}

// Persisted form: entities.tsv, relations.tsv and store.bin in one directory.
inline void save_store(const TripleStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "entities.tsv");
    store.entities.save_tsv(f);
  }
  {
    std::ofstream f(dir / "relations.tsv");
    store.relations.save_tsv(f);
  }
  std::ofstream out(dir / "store.bin", std::ios::binary);
  io::write_magic(out, "KGTS");
  io::write_pod<std::uint32_t>(out, 1);
  io::write_pod<std::uint32_t>(out, store.num_entities());
  io::write_pod<std::uint32_t>(out, store.num_relations());
  for (Split s : {Split::train, Split::valid, Split::test}) {
    const auto& triples = store.split(s);
    io::write_pod<std::uint64_t>(out, triples.size());
    for (const auto& t : triples) {
      io::write_pod(out, t.head);
      io::write_pod(out, t.relation);
      io::write_pod(out, t.tail);
    }
  }
  if (!out) throw Error("failed writing " + (dir / "store.bin").string());
}

inline TripleStore load_store(const std::filesystem::path& dir) {
  TripleStore store;
  {
    std::ifstream f(dir / "entities.tsv");
    if (!f) throw Error("cannot open " + (dir / "entities.tsv").string());
    store.entities = Vocabulary::load_tsv(f);
  }
  {
    std::ifstream f(dir / "relations.tsv");
    if (!f) throw Error("cannot open " + (dir / "relations.tsv").string());
    store.relations = Vocabulary::load_tsv(f);
  }
  std::ifstream in(dir / "store.bin", std::ios::binary);
  if (!in) throw Error("cannot open " + (dir / "store.bin").string());
  io::expect_magic(in, "KGTS");
  if (const auto version = io::read_pod<std::uint32_t>(in, "version"); version != 1) {
    throw FormatError("unsupported store version " + std::to_string(version));
  }
  const auto ne = io::read_pod<std::uint32_t>(in, "entity count");
  const auto nr = io::read_pod<std::uint32_t>(in, "relation count");
  if (ne != store.num_entities() || nr != store.num_relations()) {
    throw FormatError("store.bin counts disagree with vocabulary files");
  }
  for (auto* split : {&store.train, &store.valid, &store.test}) {
    const auto n = io::read_pod<std::uint64_t>(in, "split size");
    split->resize(n);
    for (auto& t : *split) {
      t.head = io::read_pod<EntityId>(in, "triple");
      t.relation = io::read_pod<RelationId>(in, "triple");
      t.tail = io::read_pod<EntityId>(in, "triple");
    }
  }
  build_adjacency(store);
  return store;
}

}  // namespace kge
