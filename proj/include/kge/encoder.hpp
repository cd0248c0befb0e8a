#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kge/anchors.hpp"
#include "kge/error.hpp"
#include "kge/params.hpp"

namespace kge {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

enum class Combiner : std::uint32_t { transformer = 0, mean_pool = 1 };

struct EncoderConfig {
  std::uint32_t d_tok = 200;
  std::uint32_t heads = 4;
  std::uint32_t ffn_mult = 2;
  std::uint32_t out_dim = 200;  // d; the projection emits 2d (base ‖ aux)
  Combiner combiner = Combiner::transformer;
  bool center_token = true;
  std::uint32_t num_anchors = 0;
  std::uint32_t num_entities = 0;
  double ln_eps = 1e-5;
};

// Forward activations of one transformer block over the real (unmasked) rows.
template <typename T>
struct BlockCache {
  std::vector<std::size_t> real;  // positions of real rows in the full matrix
  std::size_t total_rows = 0;
  Mat<T> x, a1, q, k, v, o, y1, a2, hidden, act;
  RowVec<T> mu1, rstd1, mu2, rstd2;
  std::vector<Mat<T>> probs;  // per head, m x m
};

template <typename T>
struct EncodedEntity {
  std::vector<T> base;
  std::vector<T> aux;
  // Retained for backward.
  std::vector<std::uint32_t> rows;  // token-table row per real slot
  std::vector<Segment> segments;    // segment per real slot
  Mat<T> pooled_in;                 // real rows fed to pooling (m x d_tok)
  RowVec<T> pooled;
  BlockCache<T> block;
};

namespace detail {

template <typename T>
T gelu(T x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  constexpr T c = T(0.7978845608028654);
  const T th = std::tanh(c * (x + T(0.044715) * x * x * x));
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * T(0.044715) * x * x);
}

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const ParamTable<T>& gamma, const ParamTable<T>& beta, double eps,
                  RowVec<T>& mu, RowVec<T>& rstd) {
  const auto m = x.rows();
  const auto n = x.cols();
  Eigen::Map<const RowVec<T>> g(gamma.value.data(), n), b(beta.value.data(), n);
  mu.resize(m);
  rstd.resize(m);
  Mat<T> y(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    mu(i) = x.row(i).mean();
    const T var = (x.row(i).array() - mu(i)).square().mean();
    rstd(i) = T(1) / std::sqrt(var + T(eps));
    y.row(i) = ((x.row(i).array() - mu(i)) * rstd(i)).matrix().cwiseProduct(g) + b;
  }
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& x, const Mat<T>& dy, const RowVec<T>& mu, const RowVec<T>& rstd,
                           const ParamTable<T>& gamma, GradTable<T>& d_gamma, GradTable<T>& d_beta) {
  const auto m = x.rows();
  const auto n = x.cols();
  Eigen::Map<const RowVec<T>> g(gamma.value.data(), n);
  Eigen::Map<RowVec<T>> dg(d_gamma.all().data(), n), db(d_beta.all().data(), n);
  Mat<T> dx(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const RowVec<T> xhat = (x.row(i).array() - mu(i)).matrix() * rstd(i);
    dg += dy.row(i).cwiseProduct(xhat);
    db += dy.row(i);
    const RowVec<T> dxhat = dy.row(i).cwiseProduct(g);
    const T mean_d = dxhat.mean();
    const T mean_dx = dxhat.cwiseProduct(xhat).mean();
    dx.row(i) = rstd(i) * (dxhat.array() - mean_d - xhat.array() * mean_dx).matrix();
  }
  return dx;
}

template <typename T>
Eigen::Map<const Mat<T>> view(const ParamTable<T>& p) {
  return Eigen::Map<const Mat<T>>(p.value.data(), static_cast<Eigen::Index>(p.rows),
                                  static_cast<Eigen::Index>(p.cols));
}

template <typename T>
Eigen::Map<Mat<T>> grad_view(GradTable<T>& g) {
  return Eigen::Map<Mat<T>>(g.all().data(), static_cast<Eigen::Index>(g.rows), static_cast<Eigen::Index>(g.cols));
}

}  // namespace detail

// Token embedding + segment embedding, one pre-norm transformer block with
// multi-head attention over the real tokens, mean-pooling, and a projection to
// (base ‖ aux) entity vectors. All backward passes are hand-written.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, ParamSet<T>& params) : config_(config) {
    const std::size_t D = config.d_tok;
    if (D == 0 || config.heads == 0 || D % config.heads != 0) {
      throw ConfigError("d_tok must be a positive multiple of the head count");
    }
    const std::size_t vocab = std::size_t(config.num_anchors) + config.num_entities + 1;
    token_ = params.add("encoder.token", vocab, D, /*sparse=*/true);
    params[token_].frozen_row = pad_row();
    type_ = params.add("encoder.type", 4, D, false);
    if (config.combiner == Combiner::transformer) {
      const std::size_t F = std::size_t(config.ffn_mult) * D;
      wq_ = params.add("encoder.attn.wq", D, D, false);
      wk_ = params.add("encoder.attn.wk", D, D, false);
      wv_ = params.add("encoder.attn.wv", D, D, false);
      wo_ = params.add("encoder.attn.wo", D, D, false);
      ln1_g_ = params.add("encoder.ln1.gamma", 1, D, false);
      ln1_b_ = params.add("encoder.ln1.beta", 1, D, false);
      ln2_g_ = params.add("encoder.ln2.gamma", 1, D, false);
      ln2_b_ = params.add("encoder.ln2.beta", 1, D, false);
      w1_ = params.add("encoder.ffn.w1", D, F, false);
      b1_ = params.add("encoder.ffn.b1", 1, F, false);
      w2_ = params.add("encoder.ffn.w2", F, D, false);
      b2_ = params.add("encoder.ffn.b2", 1, D, false);
    }
    out_w_ = params.add("encoder.out.w", D, 2 * std::size_t(config.out_dim), false);
    out_b_ = params.add("encoder.out.b", 1, 2 * std::size_t(config.out_dim), false);
  }

  const EncoderConfig& config() const { return config_; }

  template <typename Rng>
  void init(ParamSet<T>& params, Rng& rng) const {
    const T D = T(config_.d_tok);
    init_uniform(params[token_], T(0.5) / std::sqrt(D), rng);
    init_uniform(params[type_], T(0.5) / std::sqrt(D), rng);
    auto fan_in = [&](std::size_t idx) {
      init_uniform(params[idx], T(1) / std::sqrt(T(params[idx].rows)), rng);
    };
    if (config_.combiner == Combiner::transformer) {
      for (auto idx : {wq_, wk_, wv_, wo_, w1_, w2_}) fan_in(idx);
      std::fill(params[ln1_g_].value.begin(), params[ln1_g_].value.end(), T(1));
      std::fill(params[ln2_g_].value.begin(), params[ln2_g_].value.end(), T(1));
    }
    fan_in(out_w_);
  }

  std::size_t pad_row() const { return std::size_t(config_.num_anchors) + config_.num_entities; }
  std::size_t token_table() const { return token_; }

  // Token-table row of a slot, or pad_row() for padding.
  std::size_t token_row(Segment seg, std::uint32_t token) const {
    if (token == kPadToken) return pad_row();
    if (seg == Segment::anchor) {
      if (token >= config_.num_anchors) throw Error("anchor token id out of range");
      return token;
    }
    if (token >= config_.num_entities) throw Error("entity token id out of range");
    return std::size_t(config_.num_anchors) + token;
  }

  // Full (slots x d_tok) matrix: token row + segment row for real slots, zero for pads.
  // With center_token disabled the center slot is masked out unless it is the only token.
  Mat<T> embed_tokens(const ParamSet<T>& params, const SubgraphTokens& tokens, std::vector<bool>* mask_out = nullptr,
                      std::vector<std::size_t>* rows_out = nullptr) const {
    const auto flat = tokens.flat_tokens();
    const auto segs = tokens.segments();
    std::vector<bool> mask(flat.size());
    std::size_t real = 0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      mask[i] = flat[i] != kPadToken;
      if (segs[i] == Segment::center && !config_.center_token) mask[i] = false;
      real += mask[i];
    }
    if (real == 0 && !config_.center_token && flat.back() != kPadToken) mask.back() = true;
    const auto D = static_cast<Eigen::Index>(config_.d_tok);
    Mat<T> x = Mat<T>::Zero(static_cast<Eigen::Index>(flat.size()), D);
    const auto tok = detail::view(params[token_]);
    const auto typ = detail::view(params[type_]);
    std::vector<std::size_t> rows(flat.size(), pad_row());
    for (std::size_t i = 0; i < flat.size(); ++i) {
      if (!mask[i]) continue;
      rows[i] = token_row(segs[i], flat[i]);
      x.row(static_cast<Eigen::Index>(i)) =
          tok.row(static_cast<Eigen::Index>(rows[i])) + typ.row(static_cast<Eigen::Index>(segs[i]));
    }
    if (mask_out) *mask_out = std::move(mask);
    if (rows_out) *rows_out = std::move(rows);
    return x;
  }

  // Pre-norm block: y = x' + FFN(LN2(x')), x' = x + MHA(LN1(x)). Padded rows do
  // not participate and come out as zero.
  Mat<T> transformer_block(const ParamSet<T>& params, const Mat<T>& x, const std::vector<bool>& mask,
                           BlockCache<T>& c) const {
    const Mat<T> y = block_forward_compact(params, x, mask, c);
    Mat<T> out = Mat<T>::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) out.row(static_cast<Eigen::Index>(c.real[i])) = y.row(i);
    return out;
  }

  // Gradient w.r.t. the block input (full shape; pad rows are zero). Weight
  // gradients are accumulated into grads.
  Mat<T> transformer_block_backward(const ParamSet<T>& params, const BlockCache<T>& c, const Mat<T>& dy_full,
                                    GradSet<T>& grads) const {
    require_transformer();
    if (static_cast<std::size_t>(dy_full.rows()) != c.total_rows || dy_full.cols() != c.x.cols()) {
      throw DimensionError("upstream gradient shape does not match the cached forward");
    }
    const auto m = static_cast<Eigen::Index>(c.real.size());
    Mat<T> dy(m, dy_full.cols());
    for (Eigen::Index i = 0; i < m; ++i) dy.row(i) = dy_full.row(static_cast<Eigen::Index>(c.real[i]));
    const Mat<T> dx = block_backward(params, c, dy, grads);
    Mat<T> out = Mat<T>::Zero(dy_full.rows(), dy_full.cols());
    for (Eigen::Index i = 0; i < m; ++i) out.row(static_cast<Eigen::Index>(c.real[i])) = dx.row(i);
    return out;
  }

  EncodedEntity<T> encode(const ParamSet<T>& params, const SubgraphTokens& tokens) const {
    EncodedEntity<T> e;
    std::vector<bool> mask;
    std::vector<std::size_t> rows;
    const Mat<T> x = embed_tokens(params, tokens, &mask, &rows);
    const auto segs = tokens.segments();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      e.rows.push_back(static_cast<std::uint32_t>(rows[i]));
      e.segments.push_back(segs[i]);
    }
    if (e.rows.empty()) throw Error("cannot encode an entity with no real tokens");
    const auto m = static_cast<Eigen::Index>(e.rows.size());
    if (config_.combiner == Combiner::transformer) {
      e.pooled_in = block_forward_compact(params, x, mask, e.block);
    } else {
      e.pooled_in.resize(m, x.cols());
      Eigen::Index k = 0;
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) e.pooled_in.row(k++) = x.row(static_cast<Eigen::Index>(i));
      }
    }
    e.pooled = e.pooled_in.colwise().mean();
    const auto w = detail::view(params[out_w_]);
    const auto b = detail::view(params[out_b_]);
    const RowVec<T> out = e.pooled * w + b.row(0);
    const auto d = static_cast<Eigen::Index>(config_.out_dim);
    e.base.assign(out.data(), out.data() + d);
    e.aux.assign(out.data() + d, out.data() + 2 * d);
    return e;
  }

  void backward(const ParamSet<T>& params, const EncodedEntity<T>& e, std::span<const T> d_base,
                std::span<const T> d_aux, GradSet<T>& grads) const {
    const auto d = static_cast<Eigen::Index>(config_.out_dim);
    if (d_base.size() != std::size_t(d) || (!d_aux.empty() && d_aux.size() != std::size_t(d))) {
      throw DimensionError("entity gradient dimension mismatch");
    }
    RowVec<T> d_out = RowVec<T>::Zero(2 * d);
    for (Eigen::Index i = 0; i < d; ++i) d_out(i) = d_base[static_cast<std::size_t>(i)];
    for (std::size_t i = 0; i < d_aux.size(); ++i) d_out(d + static_cast<Eigen::Index>(i)) = d_aux[i];
    detail::grad_view(grads[out_w_]).noalias() += e.pooled.transpose() * d_out;
    detail::grad_view(grads[out_b_]).row(0) += d_out;
    const RowVec<T> d_pooled = d_out * detail::view(params[out_w_]).transpose();

    const auto m = static_cast<Eigen::Index>(e.rows.size());
    Mat<T> d_in = d_pooled.replicate(m, 1) / T(m);
    if (config_.combiner == Combiner::transformer) d_in = block_backward(params, e.block, d_in, grads);

    auto& tok = grads[token_];
    auto& typ = grads[type_];
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto row = e.rows[static_cast<std::size_t>(i)];
      if (row == pad_row()) continue;
      auto gt = tok.row(row);
      auto gs = typ.row(static_cast<std::size_t>(e.segments[static_cast<std::size_t>(i)]));
      for (Eigen::Index j = 0; j < d_in.cols(); ++j) {
        gt[static_cast<std::size_t>(j)] += d_in(i, j);
        gs[static_cast<std::size_t>(j)] += d_in(i, j);
      }
    }
  }

 private:
  void require_transformer() const {
    if (config_.combiner != Combiner::transformer) throw ConfigError("encoder has no transformer block");
  }

  // Gathers the real rows into c.x and returns the block output for those rows only.
  Mat<T> block_forward_compact(const ParamSet<T>& params, const Mat<T>& x, const std::vector<bool>& mask,
                               BlockCache<T>& c) const {
    require_transformer();
    if (static_cast<std::size_t>(x.rows()) != mask.size() || x.cols() != Eigen::Index(config_.d_tok)) {
      throw DimensionError("transformer input shape does not match mask / d_tok");
    }
    c.real.clear();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) c.real.push_back(i);
    }
    if (c.real.empty()) throw Error("transformer block needs at least one real token");
    c.total_rows = mask.size();
    const auto m = static_cast<Eigen::Index>(c.real.size());
    c.x.resize(m, x.cols());
    for (Eigen::Index i = 0; i < m; ++i) c.x.row(i) = x.row(static_cast<Eigen::Index>(c.real[i]));
    return block_forward(params, c);
  }

  // Runs on c.x (m real rows); fills the cache and returns the block output.
  Mat<T> block_forward(const ParamSet<T>& params, BlockCache<T>& c) const {
    using Eigen::Index;
    const Index m = c.x.rows();
    const Index D = c.x.cols();
    const Index H = config_.heads;
    const Index dh = D / H;
    const T scale = T(1) / std::sqrt(T(dh));

    c.a1 = detail::layer_norm(c.x, params[ln1_g_], params[ln1_b_], config_.ln_eps, c.mu1, c.rstd1);
    c.q = c.a1 * detail::view(params[wq_]);
    c.k = c.a1 * detail::view(params[wk_]);
    c.v = c.a1 * detail::view(params[wv_]);
    c.o.resize(m, D);
    c.probs.assign(static_cast<std::size_t>(H), Mat<T>());
    for (Index h = 0; h < H; ++h) {
      Mat<T> s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
      for (Index i = 0; i < m; ++i) {
        const T mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp().matrix();
        s.row(i) /= s.row(i).sum();
      }
      c.o.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
      c.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    c.y1 = c.x + c.o * detail::view(params[wo_]);
    c.a2 = detail::layer_norm(c.y1, params[ln2_g_], params[ln2_b_], config_.ln_eps, c.mu2, c.rstd2);
    c.hidden = c.a2 * detail::view(params[w1_]);
    c.hidden.rowwise() += detail::view(params[b1_]).row(0);
    c.act = c.hidden.unaryExpr([](T v) { return detail::gelu(v); });
    Mat<T> y = c.y1 + c.act * detail::view(params[w2_]);
    y.rowwise() += detail::view(params[b2_]).row(0);
    return y;
  }

  Mat<T> block_backward(const ParamSet<T>& params, const BlockCache<T>& c, const Mat<T>& dy,
                        GradSet<T>& grads) const {
    using Eigen::Index;
    const Index m = c.x.rows();
    const Index D = c.x.cols();
    const Index H = config_.heads;
    const Index dh = D / H;
    const T scale = T(1) / std::sqrt(T(dh));

    // FFN branch.
    detail::grad_view(grads[w2_]).noalias() += c.act.transpose() * dy;
    detail::grad_view(grads[b2_]).row(0) += dy.colwise().sum();
    Mat<T> d_act = dy * detail::view(params[w2_]).transpose();
    Mat<T> d_hidden = d_act.cwiseProduct(c.hidden.unaryExpr([](T v) { return detail::gelu_grad(v); }));
    detail::grad_view(grads[w1_]).noalias() += c.a2.transpose() * d_hidden;
    detail::grad_view(grads[b1_]).row(0) += d_hidden.colwise().sum();
    const Mat<T> d_a2 = d_hidden * detail::view(params[w1_]).transpose();
    Mat<T> d_y1 = dy + detail::layer_norm_backward(c.y1, d_a2, c.mu2, c.rstd2, params[ln2_g_], grads[ln2_g_],
                                                   grads[ln2_b_]);

    // Attention branch.
    detail::grad_view(grads[wo_]).noalias() += c.o.transpose() * d_y1;
    const Mat<T> d_o = d_y1 * detail::view(params[wo_]).transpose();
    Mat<T> d_q(m, D), d_k(m, D), d_v(m, D);
    for (Index h = 0; h < H; ++h) {
      const auto& p = c.probs[static_cast<std::size_t>(h)];
      const auto d_oh = d_o.middleCols(h * dh, dh);
      const Mat<T> d_p = d_oh * c.v.middleCols(h * dh, dh).transpose();
      d_v.middleCols(h * dh, dh) = p.transpose() * d_oh;
      Mat<T> d_s(m, m);
      for (Index i = 0; i < m; ++i) {
        const T dot = d_p.row(i).dot(p.row(i));
        d_s.row(i) = p.row(i).cwiseProduct((d_p.row(i).array() - dot).matrix());
      }
      d_s *= scale;
      d_q.middleCols(h * dh, dh) = d_s * c.k.middleCols(h * dh, dh);
      d_k.middleCols(h * dh, dh) = d_s.transpose() * c.q.middleCols(h * dh, dh);
    }
    detail::grad_view(grads[wq_]).noalias() += c.a1.transpose() * d_q;
    detail::grad_view(grads[wk_]).noalias() += c.a1.transpose() * d_k;
    detail::grad_view(grads[wv_]).noalias() += c.a1.transpose() * d_v;
    const Mat<T> d_a1 = d_q * detail::view(params[wq_]).transpose() + d_k * detail::view(params[wk_]).transpose() +
                        d_v * detail::view(params[wv_]).transpose();
    return d_y1 + detail::layer_norm_backward(c.x, d_a1, c.mu1, c.rstd1, params[ln1_g_], grads[ln1_g_],
                                              grads[ln1_b_]);
  }

  EncoderConfig config_;
  std::size_t token_ = 0, type_ = 0;
  std::size_t wq_ = 0, wk_ = 0, wv_ = 0, wo_ = 0;
  std::size_t ln1_g_ = 0, ln1_b_ = 0, ln2_g_ = 0, ln2_b_ = 0;
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
  std::size_t out_w_ = 0, out_b_ = 0;
};

}  // namespace kge
