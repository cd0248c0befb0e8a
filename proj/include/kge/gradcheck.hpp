#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kge/encoder.hpp"
#include "kge/params.hpp"
#include "kge/scoring.hpp"

namespace kge {

// Central finite differences against the hand-written gradients.
struct GradCheckRow {
  std::string name;
  std::size_t instances = 0;
  std::size_t skipped = 0;  // instances whose perturbation crossed a kink
  double max_rel_err = 0.0;
  double tolerance = 0.0;

  bool pass() const { return instances > 0 && max_rel_err <= tolerance; }
};

namespace detail {

// ||a - n|| / max(||a||, ||n||); 0 when both vanish.
inline double vector_rel_err(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale < 1e-10 ? 0.0 : std::sqrt(diff) / scale;
}

// Numeric gradient of f w.r.t. x. Returns false if one-sided differences
// disagree, i.e. the +-step straddles a non-differentiable point.
inline bool numeric_gradient(const std::function<double()>& f, std::span<double> x, std::span<double> out,
                             double step) {
  const double f0 = f();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double fp = f();
    x[i] = saved - step;
    const double fm = f();
    x[i] = saved;
    if (std::abs((fp - f0) - (f0 - fm)) > 1e-7) return false;
    out[i] = (fp - fm) / (2 * step);
  }
  return true;
}

}  // namespace detail

// Every scoring kernel, random double-precision inputs in [-1, 1], alternating
// L1 / L2 norms. Instances are drawn until `instances` non-kink cases pass through.
inline std::vector<GradCheckRow> gradcheck_kernels(std::size_t instances = 100, std::size_t dim = 8,
                                                   std::uint64_t seed = 7, double tolerance = 1e-4,
                                                   double step = 1e-5) {
  std::vector<GradCheckRow> rows;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (auto kind : kAllModelKinds) {
    GradCheckRow row;
    row.name = std::string(to_string(kind));
    row.tolerance = tolerance;
    const std::size_t d = traits(kind).complex_valued ? dim + dim % 2 : dim;
    const std::size_t rd = traits(kind).r_dim(d, kind);
    std::size_t attempts = 0;
    while (row.instances < instances && attempts < instances * 20) {
      ++attempts;
      std::vector<double> h(d), t(d), ha(d), ta(d), r(rd), rh(d), rt(d);
      for (auto* v : {&h, &t, &ha, &ta, &r, &rh, &rt}) {
        for (auto& x : *v) x = uni(rng);
      }
      ScoreInputs<double> in{h, t, ha, ta, r, rh, rt, std::abs(uni(rng)),
                             attempts % 2 ? NormOrder::l1 : NormOrder::l2};
      const auto analytic = evaluate(kind, in);
      auto value = [&] { return evaluate(kind, in).value; };

      const std::vector<std::pair<std::vector<double>*, const std::vector<double>*>> pairs = {
          {&h, &analytic.h},    {&t, &analytic.t},     {&ha, &analytic.h_a}, {&ta, &analytic.t_a},
          {&r, &analytic.r},    {&rh, &analytic.r_h},  {&rt, &analytic.r_t},
      };
      double worst = 0.0;
      bool kink = false;
      for (const auto& [vec, grad] : pairs) {
        std::vector<double> numeric(vec->size());
        if (!detail::numeric_gradient(value, *vec, numeric, step)) {
          kink = true;
          break;
        }
        worst = std::max(worst, detail::vector_rel_err(*grad, numeric));
      }
      if (kink) {
        ++row.skipped;
        continue;
      }
      ++row.instances;
      row.max_rel_err = std::max(row.max_rel_err, worst);
    }
    rows.push_back(row);
  }
  return rows;
}

namespace detail {

template <typename Rng>
void randomize(ParamSet<double>& params, Rng& rng, double scale) {
  std::uniform_real_distribution<double> uni(-scale, scale);
  for (auto& p : params) {
    for (auto& x : p.value) x = uni(rng);
    if (p.frozen_row) std::fill_n(p.value.begin() + *p.frozen_row * p.cols, p.cols, 0.0);
  }
}

}  // namespace detail

// Transformer block: loss = sum(Y o R) for random R; checks the input gradient
// and every block weight. Some slots are padding in each instance.
inline GradCheckRow gradcheck_transformer(std::size_t instances = 100, std::uint32_t d_tok = 8,
                                          std::uint32_t heads = 2, std::uint64_t seed = 11, double tolerance = 1e-3,
                                          double step = 1e-5) {
  GradCheckRow row;
  row.name = "transformer(d_tok=" + std::to_string(d_tok) + ")";
  row.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  EncoderConfig cfg;
  cfg.d_tok = d_tok;
  cfg.heads = heads;
  cfg.out_dim = 4;
  cfg.num_anchors = 2;
  cfg.num_entities = 2;
  std::size_t attempts = 0;
  while (row.instances < instances && attempts < instances * 20) {
    ++attempts;
    ParamSet<double> params;
    Encoder<double> enc(cfg, params);
    detail::randomize(params, rng, 0.5);
    const std::size_t n = 2 + rng() % 5;
    Mat<double> x(static_cast<Eigen::Index>(n), d_tok);
    Mat<double> r(static_cast<Eigen::Index>(n), d_tok);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x.data()[i] = uni(rng);
      r.data()[i] = uni(rng);
    }
    std::vector<bool> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng() % 4 != 0;
    mask[rng() % n] = true;

    BlockCache<double> cache;
    const Mat<double> y = enc.transformer_block(params, x, mask, cache);
    GradSet<double> grads(params);
    const Mat<double> dx = enc.transformer_block_backward(params, cache, r, grads);
    auto loss = [&] {
      BlockCache<double> c;
      return enc.transformer_block(params, x, mask, c).cwiseProduct(r).sum();
    };

    double worst = 0.0;
    bool kink = false;
    {
      std::vector<double> numeric(static_cast<std::size_t>(x.size()));
      std::span<double> xs(x.data(), static_cast<std::size_t>(x.size()));
      kink |= !detail::numeric_gradient(loss, xs, numeric, step);
      worst = std::max(worst, detail::vector_rel_err({dx.data(), static_cast<std::size_t>(dx.size())}, numeric));
    }
    for (std::size_t k = 0; k < params.size() && !kink; ++k) {
      const auto& name = params[k].name;
      if (name == "encoder.token" || name == "encoder.type" || name.rfind("encoder.out", 0) == 0) continue;
      std::vector<double> numeric(params[k].value.size());
      kink |= !detail::numeric_gradient(loss, params[k].value, numeric, step);
      worst = std::max(worst, detail::vector_rel_err(grads[k].value, numeric));
    }
    if (kink) {
      ++row.skipped;
      continue;
    }
    ++row.instances;
    row.max_rel_err = std::max(row.max_rel_err, worst);
  }
  return row;
}

// Whole entity encoder (embedding, block, pooling, projection) with
// loss = base . Rb + aux . Ra, over every parameter table.
inline GradCheckRow gradcheck_encoder(std::size_t instances = 20, std::uint32_t d_tok = 8, std::uint32_t heads = 2,
                                      Combiner combiner = Combiner::transformer, std::uint64_t seed = 13,
                                      double tolerance = 1e-3, double step = 1e-5) {
  GradCheckRow row;
  row.name = std::string("encoder(") + (combiner == Combiner::transformer ? "transformer" : "mean-pool") + ")";
  row.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  EncoderConfig cfg;
  cfg.d_tok = d_tok;
  cfg.heads = heads;
  cfg.out_dim = 4;
  cfg.num_anchors = 3;
  cfg.num_entities = 5;
  cfg.combiner = combiner;
  std::size_t attempts = 0;
  while (row.instances < instances && attempts < instances * 20) {
    ++attempts;
    ParamSet<double> params;
    Encoder<double> enc(cfg, params);
    detail::randomize(params, rng, 0.5);
    SubgraphTokens tokens;
    tokens.center = static_cast<EntityId>(rng() % cfg.num_entities);
    auto pick = [&](std::uint32_t n) { return rng() % 3 == 0 ? kPadToken : static_cast<std::uint32_t>(rng() % n); };
    tokens.anchors = {pick(cfg.num_anchors), pick(cfg.num_anchors)};
    tokens.in_neighbors = {pick(cfg.num_entities)};
    tokens.out_neighbors = {pick(cfg.num_entities), pick(cfg.num_entities)};
    std::vector<double> rb(cfg.out_dim), ra(cfg.out_dim);
    for (auto& v : rb) v = uni(rng);
    for (auto& v : ra) v = uni(rng);

    const auto e = enc.encode(params, tokens);
    GradSet<double> grads(params);
    enc.backward(params, e, rb, ra, grads);
    auto loss = [&] {
      const auto f = enc.encode(params, tokens);
      double s = 0;
      for (std::size_t i = 0; i < rb.size(); ++i) s += f.base[i] * rb[i] + f.aux[i] * ra[i];
      return s;
    };
    double worst = 0.0;
    bool kink = false;
    for (std::size_t k = 0; k < params.size() && !kink; ++k) {
      std::vector<double> numeric(params[k].value.size());
      kink |= !detail::numeric_gradient(loss, params[k].value, numeric, step);
      worst = std::max(worst, detail::vector_rel_err(grads[k].value, numeric));
    }
    if (kink) {
      ++row.skipped;
      continue;
    }
    ++row.instances;
    row.max_rel_err = std::max(row.max_rel_err, worst);
  }
  return row;
}

}  // namespace kge
