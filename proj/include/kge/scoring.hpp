#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kge/error.hpp"

namespace kge {

enum class ModelKind : std::uint32_t {
  transe = 0,
  rotate = 1,
  pairre = 2,
  triplere_v1 = 3,
  triplere_v2 = 4,
  distmult = 5,
  complex = 6,
  interht = 7,
  interht_plus = 8,
};

inline constexpr std::array kAllModelKinds = {
    ModelKind::transe,   ModelKind::rotate,  ModelKind::pairre,  ModelKind::triplere_v1, ModelKind::triplere_v2,
    ModelKind::distmult, ModelKind::complex, ModelKind::interht, ModelKind::interht_plus,
};

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::transe: return "transe";
    case ModelKind::rotate: return "rotate";
    case ModelKind::pairre: return "pairre";
    case ModelKind::triplere_v1: return "triplere-v1";
    case ModelKind::triplere_v2: return "triplere-v2";
    case ModelKind::distmult: return "distmult";
    case ModelKind::complex: return "complex";
    case ModelKind::interht: return "interht";
    case ModelKind::interht_plus: return "interht-plus";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view name) {
  for (auto k : kAllModelKinds) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

enum class NormOrder : std::uint32_t { l1 = 1, l2 = 2 };

// Which parameter vectors a model reads, and their widths for entity dim d.
struct ModelTraits {
  bool entity_aux = false;
  bool relation_r = true;
  bool relation_rh = false;
  bool relation_rt = false;
  bool complex_valued = false;  // d split into real/imaginary halves
  bool bilinear = false;        // higher raw score = more plausible

  std::size_t r_dim(std::size_t d, ModelKind k) const { return k == ModelKind::rotate ? d / 2 : d; }
};

inline ModelTraits traits(ModelKind k) {
  ModelTraits t;
  switch (k) {
    case ModelKind::transe: break;
    case ModelKind::rotate: t.complex_valued = true; break;
    case ModelKind::pairre:
      t.relation_r = false;
      t.relation_rh = t.relation_rt = true;
      break;
    case ModelKind::triplere_v1:
    case ModelKind::triplere_v2:
    case ModelKind::interht_plus: t.relation_rh = t.relation_rt = true; break;
    case ModelKind::distmult: t.bilinear = true; break;
    case ModelKind::complex: t.bilinear = t.complex_valued = true; break;
    case ModelKind::interht: t.entity_aux = true; break;
  }
  return t;
}

// Vectors are read through spans so callers can score table rows in place.
// Unused inputs may be left empty. r holds phases (d/2 entries) for RotatE;
// RotatE/ComplEx store real parts in the first half, imaginary in the second.
template <typename T>
struct ScoreInputs {
  std::span<const T> h, t, h_a, t_a, r, r_h, r_t;
  T u = T(0);
  NormOrder norm = NormOrder::l1;
};

// Gradient accumulators; empty spans are skipped.
template <typename T>
struct GradSinks {
  std::span<T> h, t, h_a, t_a, r, r_h, r_t;
};

namespace detail {

template <typename T>
void check_len(std::span<const T> v, std::size_t want, const char* name) {
  if (v.size() != want) {
    throw DimensionError(std::string("input '") + name + "' has dimension " + std::to_string(v.size()) +
                         ", expected " + std::to_string(want));
  }
}

template <typename T>
void check_sink(std::span<T> v, std::size_t want, const char* name) {
  if (!v.empty() && v.size() != want) {
    throw DimensionError(std::string("gradient sink '") + name + "' has wrong dimension");
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

// Norm of residual; writes d||res||/d res into res in place.
template <typename T>
T norm_and_grad(std::span<T> res, NormOrder p, bool want_grad) {
  T value = 0;
  if (p == NormOrder::l1) {
    for (T x : res) value += std::abs(x);
    if (want_grad) {
      for (T& x : res) x = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
    }
  } else {
    for (T x : res) value += x * x;
    value = std::sqrt(value);
    if (want_grad) {
      const T inv = value > T(0) ? T(1) / value : T(0);
      for (T& x : res) x *= inv;
    }
  }
  return value;
}

template <typename T>
void axpy(std::span<T> sink, T a, std::span<const T> x) {
  if (sink.empty()) return;
  for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += a * x[i];
}

}  // namespace detail

template <typename T>
void check_dims(ModelKind kind, const ScoreInputs<T>& in) {
  const std::size_t d = in.h.size();
  const auto tr = traits(kind);
  if (d == 0) throw DimensionError("empty entity vector");
  if (tr.complex_valued && d % 2 != 0) throw DimensionError("complex-valued model needs even dimension");
  detail::check_len(in.t, d, "t");
  if (tr.entity_aux) {
    detail::check_len(in.h_a, d, "h_a");
    detail::check_len(in.t_a, d, "t_a");
  }
  if (tr.relation_r) detail::check_len(in.r, tr.r_dim(d, kind), "r");
  if (tr.relation_rh) detail::check_len(in.r_h, d, "r_h");
  if (tr.relation_rt) detail::check_len(in.r_t, d, "r_t");
}

// Unified lower-is-better d_r: distances as-is, bilinear scores negated.
// When `sinks` is given, accumulates scale * d(d_r)/d(input) into it.
template <typename T>
T score_for_loss(ModelKind kind, const ScoreInputs<T>& in, T scale = T(0), const GradSinks<T>* sinks = nullptr) {
  const std::size_t d = in.h.size();
  const bool grad = sinks != nullptr;
  if (grad) {
    detail::check_sink(sinks->h, d, "h");
    detail::check_sink(sinks->t, d, "t");
  }
  auto& res_buf = detail::scratch<T>();
  res_buf.resize(d);
  std::span<T> res(res_buf);
  const auto& h = in.h;
  const auto& t = in.t;

  switch (kind) {
    case ModelKind::transe: {
      for (std::size_t i = 0; i < d; ++i) res[i] = h[i] + in.r[i] - t[i];
      const T value = detail::norm_and_grad(res, in.norm, grad);
      if (grad) {
        std::span<const T> g(res);
        detail::axpy(sinks->h, scale, g);
        detail::axpy(sinks->r, scale, g);
        detail::axpy(sinks->t, -scale, g);
      }
      return value;
    }
    case ModelKind::pairre: {
      for (std::size_t i = 0; i < d; ++i) res[i] = h[i] * in.r_h[i] - t[i] * in.r_t[i];
      const T value = detail::norm_and_grad(res, in.norm, grad);
      if (grad) {
        for (std::size_t i = 0; i < d; ++i) {
          const T g = scale * res[i];
          if (!sinks->h.empty()) sinks->h[i] += g * in.r_h[i];
          if (!sinks->r_h.empty()) sinks->r_h[i] += g * h[i];
          if (!sinks->t.empty()) sinks->t[i] -= g * in.r_t[i];
          if (!sinks->r_t.empty()) sinks->r_t[i] -= g * t[i];
        }
      }
      return value;
    }
    case ModelKind::triplere_v1:
    case ModelKind::triplere_v2: {
      const T c = kind == ModelKind::triplere_v2 ? in.u : T(0);
      for (std::size_t i = 0; i < d; ++i) res[i] = h[i] * (in.r_h[i] + c) - t[i] * (in.r_t[i] + c) + in.r[i];
      const T value = detail::norm_and_grad(res, in.norm, grad);
      if (grad) {
        for (std::size_t i = 0; i < d; ++i) {
          const T g = scale * res[i];
          if (!sinks->h.empty()) sinks->h[i] += g * (in.r_h[i] + c);
          if (!sinks->r_h.empty()) sinks->r_h[i] += g * h[i];
          if (!sinks->t.empty()) sinks->t[i] -= g * (in.r_t[i] + c);
          if (!sinks->r_t.empty()) sinks->r_t[i] -= g * t[i];
          if (!sinks->r.empty()) sinks->r[i] += g;
        }
      }
      return value;
    }
    case ModelKind::interht: {
      for (std::size_t i = 0; i < d; ++i) res[i] = h[i] * (in.t_a[i] + T(1)) - t[i] * (in.h_a[i] + T(1)) + in.r[i];
      const T value = detail::norm_and_grad(res, in.norm, grad);
      if (grad) {
        for (std::size_t i = 0; i < d; ++i) {
          const T g = scale * res[i];
          if (!sinks->h.empty()) sinks->h[i] += g * (in.t_a[i] + T(1));
          if (!sinks->t_a.empty()) sinks->t_a[i] += g * h[i];
          if (!sinks->t.empty()) sinks->t[i] -= g * (in.h_a[i] + T(1));
          if (!sinks->h_a.empty()) sinks->h_a[i] -= g * t[i];
          if (!sinks->r.empty()) sinks->r[i] += g;
        }
      }
      return value;
    }
    case ModelKind::interht_plus: {
      const T u = in.u;
      for (std::size_t i = 0; i < d; ++i) {
        res[i] = u * h[i] * t[i] + h[i] * (u * in.r_h[i] + T(1)) - t[i] * (u * in.r_t[i] + T(1)) + in.r[i];
      }
      const T value = detail::norm_and_grad(res, in.norm, grad);
      if (grad) {
        for (std::size_t i = 0; i < d; ++i) {
          const T g = scale * res[i];
          if (!sinks->h.empty()) sinks->h[i] += g * (u * t[i] + u * in.r_h[i] + T(1));
          if (!sinks->t.empty()) sinks->t[i] += g * (u * h[i] - u * in.r_t[i] - T(1));
          if (!sinks->r_h.empty()) sinks->r_h[i] += g * u * h[i];
          if (!sinks->r_t.empty()) sinks->r_t[i] -= g * u * t[i];
          if (!sinks->r.empty()) sinks->r[i] += g;
        }
      }
      return value;
    }
    case ModelKind::rotate: {
      const std::size_t m = d / 2;
      // res[0..m) real, res[m..d) imaginary part of h∘e^{iθ} − t.
      for (std::size_t i = 0; i < m; ++i) {
        const T c = std::cos(in.r[i]), s = std::sin(in.r[i]);
        res[i] = h[i] * c - h[m + i] * s - t[i];
        res[m + i] = h[i] * s + h[m + i] * c - t[m + i];
      }
      T value = 0;
      if (in.norm == NormOrder::l1) {
        for (std::size_t i = 0; i < m; ++i) value += std::hypot(res[i], res[m + i]);
      } else {
        for (T x : res) value += x * x;
        value = std::sqrt(value);
      }
      if (grad) {
        for (std::size_t i = 0; i < m; ++i) {
          T inv;
          if (in.norm == NormOrder::l1) {
            const T mag = std::hypot(res[i], res[m + i]);
            inv = mag > T(0) ? T(1) / mag : T(0);
          } else {
            inv = value > T(0) ? T(1) / value : T(0);
          }
          const T gr = scale * res[i] * inv, gi = scale * res[m + i] * inv;
          const T c = std::cos(in.r[i]), s = std::sin(in.r[i]);
          const T hr = h[i], hi = h[m + i];
          if (!sinks->h.empty()) {
            sinks->h[i] += gr * c + gi * s;
            sinks->h[m + i] += -gr * s + gi * c;
          }
          if (!sinks->t.empty()) {
            sinks->t[i] -= gr;
            sinks->t[m + i] -= gi;
          }
          if (!sinks->r.empty()) sinks->r[i] += gr * (-hr * s - hi * c) + gi * (hr * c - hi * s);
        }
      }
      return value;
    }
    case ModelKind::distmult: {
      T s = 0;
      for (std::size_t i = 0; i < d; ++i) s += h[i] * in.r[i] * t[i];
      if (grad) {
        for (std::size_t i = 0; i < d; ++i) {
          if (!sinks->h.empty()) sinks->h[i] -= scale * in.r[i] * t[i];
          if (!sinks->r.empty()) sinks->r[i] -= scale * h[i] * t[i];
          if (!sinks->t.empty()) sinks->t[i] -= scale * h[i] * in.r[i];
        }
      }
      return -s;
    }
    case ModelKind::complex: {
      const std::size_t m = d / 2;
      const auto& r = in.r;
      T s = 0;
      for (std::size_t i = 0; i < m; ++i) {
        const T hr = h[i], hi = h[m + i], rr = r[i], ri = r[m + i], tr = t[i], ti = t[m + i];
        s += (hr * rr - hi * ri) * tr + (hr * ri + hi * rr) * ti;
        if (grad) {
          if (!sinks->h.empty()) {
            sinks->h[i] -= scale * (rr * tr + ri * ti);
            sinks->h[m + i] -= scale * (rr * ti - ri * tr);
          }
          if (!sinks->r.empty()) {
            sinks->r[i] -= scale * (hr * tr + hi * ti);
            sinks->r[m + i] -= scale * (hr * ti - hi * tr);
          }
          if (!sinks->t.empty()) {
            sinks->t[i] -= scale * (hr * rr - hi * ri);
            sinks->t[m + i] -= scale * (hr * ri + hi * rr);
          }
        }
      }
      return -s;
    }
  }
  throw ConfigError("unknown model kind");
}

// Owned result: the model's raw value (distance, or score for bilinear models)
// and gradients of that value. Unused inputs get all-zero gradients.
template <typename T>
struct ScoreGrad {
  T value = T(0);
  std::vector<T> h, t, h_a, t_a, r, r_h, r_t;
};

template <typename T>
ScoreGrad<T> evaluate(ModelKind kind, const ScoreInputs<T>& in) {
  check_dims(kind, in);
  ScoreGrad<T> out;
  out.h.assign(in.h.size(), T(0));
  out.t.assign(in.t.size(), T(0));
  out.h_a.assign(in.h_a.size(), T(0));
  out.t_a.assign(in.t_a.size(), T(0));
  out.r.assign(in.r.size(), T(0));
  out.r_h.assign(in.r_h.size(), T(0));
  out.r_t.assign(in.r_t.size(), T(0));
  GradSinks<T> sinks{out.h, out.t, out.h_a, out.t_a, out.r, out.r_h, out.r_t};
  const T sign = traits(kind).bilinear ? T(-1) : T(1);
  out.value = sign * score_for_loss(kind, in, sign, &sinks);
  return out;
}

template <typename T>
ScoreGrad<T> interht_distance(const ScoreInputs<T>& in) {
  return evaluate(ModelKind::interht, in);
}

template <typename T>
ScoreGrad<T> interht_plus_distance(const ScoreInputs<T>& in) {
  return evaluate(ModelKind::interht_plus, in);
}

template <typename T>
ScoreGrad<T> transe_distance(std::span<const T> h, std::span<const T> r, std::span<const T> t,
                             NormOrder p = NormOrder::l1) {
  return evaluate(ModelKind::transe, ScoreInputs<T>{.h = h, .t = t, .r = r, .norm = p});
}

template <typename T>
ScoreGrad<T> rotate_distance(std::span<const T> h, std::span<const T> phase, std::span<const T> t,
                             NormOrder p = NormOrder::l1) {
  return evaluate(ModelKind::rotate, ScoreInputs<T>{.h = h, .t = t, .r = phase, .norm = p});
}

template <typename T>
ScoreGrad<T> pairre_distance(std::span<const T> h, std::span<const T> r_h, std::span<const T> r_t,
                             std::span<const T> t, NormOrder p = NormOrder::l1) {
  return evaluate(ModelKind::pairre, ScoreInputs<T>{.h = h, .t = t, .r_h = r_h, .r_t = r_t, .norm = p});
}

template <typename T>
ScoreGrad<T> triplere_distance(std::span<const T> h, std::span<const T> r_h, std::span<const T> r_m,
                               std::span<const T> r_t, std::span<const T> t, T u, int version,
                               NormOrder p = NormOrder::l1) {
  if (version != 1 && version != 2) throw ConfigError("TripleRE version must be 1 or 2");
  return evaluate(version == 1 ? ModelKind::triplere_v1 : ModelKind::triplere_v2,
                  ScoreInputs<T>{.h = h, .t = t, .r = r_m, .r_h = r_h, .r_t = r_t, .u = u, .norm = p});
}

template <typename T>
ScoreGrad<T> distmult_score(std::span<const T> h, std::span<const T> r, std::span<const T> t) {
  return evaluate(ModelKind::distmult, ScoreInputs<T>{.h = h, .t = t, .r = r});
}

template <typename T>
ScoreGrad<T> complex_score(std::span<const T> h, std::span<const T> r, std::span<const T> t) {
  return evaluate(ModelKind::complex, ScoreInputs<T>{.h = h, .t = t, .r = r});
}

}  // namespace kge
