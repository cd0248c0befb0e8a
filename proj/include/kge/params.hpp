#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kge/error.hpp"

namespace kge {

// A named row-major parameter matrix. Sparse tables are embedding tables whose
// rows are updated only when touched; dense tables are treated as one block.
template <typename T>
struct ParamTable {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool sparse = false;
  std::optional<std::size_t> frozen_row;  // never updated (padding row)
  std::vector<T> value;

  std::span<T> row(std::size_t i) { return {value.data() + i * cols, cols}; }
  std::span<const T> row(std::size_t i) const { return {value.data() + i * cols, cols}; }
};

template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, bool sparse) {
    if (find(name)) throw Error("duplicate parameter table '" + name + "'");
    ParamTable<T> t;
    t.name = std::move(name);
    t.rows = rows;
    t.cols = cols;
    t.sparse = sparse;
    t.value.assign(rows * cols, T(0));
    tables_.push_back(std::move(t));
    return tables_.size() - 1;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < tables_.size(); ++i) {
      if (tables_[i].name == name) return i;
    }
    return std::nullopt;
  }

  ParamTable<T>& operator[](std::size_t i) { return tables_[i]; }
  const ParamTable<T>& operator[](std::size_t i) const { return tables_[i]; }
  std::size_t size() const { return tables_.size(); }
  auto begin() { return tables_.begin(); }
  auto end() { return tables_.end(); }
  auto begin() const { return tables_.begin(); }
  auto end() const { return tables_.end(); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& t : tables_) n += t.value.size();
    return n;
  }

 private:
  std::vector<ParamTable<T>> tables_;
};

template <typename T, typename Rng>
void init_uniform(ParamTable<T>& t, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-double(bound), double(bound));
  for (auto& x : t.value) x = static_cast<T>(dist(rng));
  if (t.frozen_row) std::fill_n(t.value.begin() + *t.frozen_row * t.cols, t.cols, T(0));
}

// Gradient congruent with one ParamTable; remembers which rows were written.
template <typename T>
struct GradTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<std::uint8_t> touched;
  std::vector<std::size_t> touched_rows;

  std::span<T> row(std::size_t i) {
    if (!touched[i]) {
      touched[i] = 1;
      touched_rows.push_back(i);
    }
    return {value.data() + i * cols, cols};
  }

  // Whole-table view for dense parameters; marks every row.
  std::span<T> all() {
    for (std::size_t i = 0; i < rows; ++i) row(i);
    return value;
  }

  void clear() {
    for (auto i : touched_rows) {
      std::fill_n(value.begin() + i * cols, cols, T(0));
      touched[i] = 0;
    }
    touched_rows.clear();
  }
};

template <typename T>
class GradSet {
 public:
  GradSet() = default;
  explicit GradSet(const ParamSet<T>& params) {
    for (const auto& p : params) {
      GradTable<T> g;
      g.rows = p.rows;
      g.cols = p.cols;
      g.value.assign(p.value.size(), T(0));
      g.touched.assign(p.rows, 0);
      tables_.push_back(std::move(g));
    }
  }

  GradTable<T>& operator[](std::size_t i) { return tables_[i]; }
  const GradTable<T>& operator[](std::size_t i) const { return tables_[i]; }
  std::size_t size() const { return tables_.size(); }

  void clear() {
    for (auto& t : tables_) t.clear();
  }

  // Adds other into this, visiting other's touched rows in their recorded order.
  void merge(const GradSet& other) {
    for (std::size_t k = 0; k < tables_.size(); ++k) {
      auto& dst = tables_[k];
      const auto& src = other.tables_[k];
      for (auto i : src.touched_rows) {
        auto out = dst.row(i);
        for (std::size_t j = 0; j < dst.cols; ++j) out[j] += src.value[i * src.cols + j];
      }
    }
  }

 private:
  std::vector<GradTable<T>> tables_;
};

}  // namespace kge
