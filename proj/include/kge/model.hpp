#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kge/anchors.hpp"
#include "kge/encoder.hpp"
#include "kge/error.hpp"
#include "kge/params.hpp"
#include "kge/scoring.hpp"

namespace kge {

enum class EntityRepresentation : std::uint32_t { lookup = 0, tokens = 1 };

struct ModelConfig {
  ModelKind kind = ModelKind::interht;
  std::uint32_t dim = 200;
  double u = 0.05;  // InterHT+ and TripleRE v2 constant
  NormOrder norm = NormOrder::l1;
  EntityRepresentation representation = EntityRepresentation::lookup;
  EncoderConfig encoder;  // tokens representation only; out_dim and vocab sizes are filled in
  std::uint32_t num_entities = 0;
  std::uint32_t num_relations = 0;

  // Canonical text used for the checkpoint config hash.
  std::string fingerprint() const {
    std::ostringstream os;
    os << "kind=" << to_string(kind) << ";dim=" << dim << ";u=" << u << ";norm=" << static_cast<int>(norm)
       << ";repr=" << static_cast<int>(representation) << ";E=" << num_entities << ";R=" << num_relations;
    if (representation == EntityRepresentation::tokens) {
      os << ";d_tok=" << encoder.d_tok << ";heads=" << encoder.heads << ";ffn=" << encoder.ffn_mult
         << ";combiner=" << static_cast<int>(encoder.combiner) << ";center=" << encoder.center_token
         << ";anchors=" << encoder.num_anchors;
    }
    return os.str();
  }
};

template <typename T>
class Model {
 public:
  Model(ModelConfig config, std::shared_ptr<const TokenCache> tokens = nullptr)
      : config_(std::move(config)), tokens_(std::move(tokens)) {
    const auto tr = traits(config_.kind);
    const std::size_t d = config_.dim;
    if (d == 0) throw ConfigError("dim must be positive");
    if (tr.complex_valued && d % 2) throw ConfigError(std::string(to_string(config_.kind)) + " needs an even dim");
    if (config_.num_entities == 0 || config_.num_relations == 0) throw ConfigError("empty vocabulary");

    if (config_.representation == EntityRepresentation::lookup) {
      entity_base_ = params_.add("entity.base", config_.num_entities, d, true);
      if (tr.entity_aux) entity_aux_ = params_.add("entity.aux", config_.num_entities, d, true);
    } else {
      if (!tokens_) throw ConfigError("token representation requires a token cache");
      if (tokens_->num_entities() != config_.num_entities) {
        throw ConfigError("token cache entity count does not match the store");
      }
      config_.encoder.out_dim = config_.dim;
      config_.encoder.num_entities = config_.num_entities;
      config_.encoder.num_anchors = tokens_->num_anchors();
      encoder_ = Encoder<T>(config_.encoder, params_);
    }
    if (tr.relation_r) rel_r_ = params_.add("relation.r", config_.num_relations, tr.r_dim(d, config_.kind), true);
    if (tr.relation_rh) rel_rh_ = params_.add("relation.r_h", config_.num_relations, d, true);
    if (tr.relation_rt) rel_rt_ = params_.add("relation.r_t", config_.num_relations, d, true);
  }

  // Embeddings uniform in [-0.5/sqrt(d), 0.5/sqrt(d)]; RotatE phases uniform in [-pi, pi].
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const T bound = T(0.5) / std::sqrt(T(config_.dim));
    if (entity_base_) init_uniform(params_[*entity_base_], bound, rng);
    if (entity_aux_) init_uniform(params_[*entity_aux_], bound, rng);
    if (encoder_) encoder_->init(params_, rng);
    if (rel_r_) {
      init_uniform(params_[*rel_r_], config_.kind == ModelKind::rotate ? T(std::numbers::pi) : bound, rng);
    }
    if (rel_rh_) init_uniform(params_[*rel_rh_], bound, rng);
    if (rel_rt_) init_uniform(params_[*rel_rt_], bound, rng);
  }

  const ModelConfig& config() const { return config_; }
  ModelKind kind() const { return config_.kind; }
  std::size_t dim() const { return config_.dim; }
  bool has_aux() const { return traits(config_.kind).entity_aux; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const std::optional<Encoder<T>>& encoder() const { return encoder_; }
  const TokenCache* tokens() const { return tokens_.get(); }
  std::optional<std::size_t> entity_base_table() const { return entity_base_; }
  std::optional<std::size_t> entity_aux_table() const { return entity_aux_; }

  struct RelationView {
    std::span<const T> r, r_h, r_t;
  };
  struct RelationGrad {
    std::span<T> r, r_h, r_t;
  };

  RelationView relation(RelationId rel) const {
    RelationView v;
    if (rel_r_) v.r = params_[*rel_r_].row(rel);
    if (rel_rh_) v.r_h = params_[*rel_rh_].row(rel);
    if (rel_rt_) v.r_t = params_[*rel_rt_].row(rel);
    return v;
  }

  RelationGrad relation_grad(GradSet<T>& grads, RelationId rel) const {
    RelationGrad g;
    if (rel_r_) g.r = grads[*rel_r_].row(rel);
    if (rel_rh_) g.r_h = grads[*rel_rh_].row(rel);
    if (rel_rt_) g.r_t = grads[*rel_rt_].row(rel);
    return g;
  }

  ScoreInputs<T> inputs(std::span<const T> h, std::span<const T> h_aux, const RelationView& rel,
                        std::span<const T> t, std::span<const T> t_aux) const {
    ScoreInputs<T> in;
    in.h = h;
    in.t = t;
    if (has_aux()) {
      in.h_a = h_aux;
      in.t_a = t_aux;
    }
    in.r = rel.r;
    in.r_h = rel.r_h;
    in.r_t = rel.r_t;
    in.u = T(config_.u);
    in.norm = config_.norm;
    return in;
  }

 private:
  ModelConfig config_;
  std::shared_ptr<const TokenCache> tokens_;
  ParamSet<T> params_;
  std::optional<Encoder<T>> encoder_;
  std::optional<std::size_t> entity_base_, entity_aux_, rel_r_, rel_rh_, rel_rt_;
};

// Entity vectors for one training batch. Lookup models read table rows and
// write gradients straight into the gradient tables; token models encode each
// distinct entity once and backpropagate through the encoder in backward().
template <typename T>
class EntityBatch {
 public:
  void reset(const Model<T>& model, std::span<const EntityId> entities, GradSet<T>& grads) {
    model_ = &model;
    grads_ = &grads;
    slot_of_.clear();
    ids_.clear();
    encoded_.clear();
    for (EntityId e : entities) {
      if (e >= model.config().num_entities) throw Error("entity id out of range");
      if (slot_of_.try_emplace(e, ids_.size()).second) ids_.push_back(e);
    }
    const std::size_t d = model.dim();
    if (model.encoder()) {
      encoded_.reserve(ids_.size());
      for (EntityId e : ids_) encoded_.push_back(model.encoder()->encode(model.params(), model.tokens()->at(e)));
      d_base_.assign(ids_.size() * d, T(0));
      d_aux_.assign(model.has_aux() ? ids_.size() * d : 0, T(0));
    }
  }

  std::size_t slot(EntityId e) const { return slot_of_.at(e); }
  std::size_t size() const { return ids_.size(); }

  std::span<const T> base(std::size_t s) const {
    if (model_->encoder()) return encoded_[s].base;
    return model_->params()[*model_->entity_base_table()].row(ids_[s]);
  }

  std::span<const T> aux(std::size_t s) const {
    if (!model_->has_aux()) return {};
    if (model_->encoder()) return encoded_[s].aux;
    return model_->params()[*model_->entity_aux_table()].row(ids_[s]);
  }

  std::span<T> d_base(std::size_t s) {
    const std::size_t d = model_->dim();
    if (model_->encoder()) return {d_base_.data() + s * d, d};
    return (*grads_)[*model_->entity_base_table()].row(ids_[s]);
  }

  std::span<T> d_aux(std::size_t s) {
    if (!model_->has_aux()) return {};
    const std::size_t d = model_->dim();
    if (model_->encoder()) return {d_aux_.data() + s * d, d};
    return (*grads_)[*model_->entity_aux_table()].row(ids_[s]);
  }

  // Pushes the accumulated entity-vector gradients into encoder weights.
  void backward() {
    if (!model_->encoder()) return;
    const std::size_t d = model_->dim();
    for (std::size_t s = 0; s < ids_.size(); ++s) {
      std::span<const T> db(d_base_.data() + s * d, d);
      std::span<const T> da;
      if (model_->has_aux()) da = {d_aux_.data() + s * d, d};
      model_->encoder()->backward(model_->params(), encoded_[s], db, da, *grads_);
    }
  }

 private:
  const Model<T>* model_ = nullptr;
  GradSet<T>* grads_ = nullptr;
  std::unordered_map<EntityId, std::size_t> slot_of_;
  std::vector<EntityId> ids_;
  std::vector<EncodedEntity<T>> encoded_;
  std::vector<T> d_base_, d_aux_;
};

// Read-only entity vectors for every entity, used by evaluation.
template <typename T>
class EntitySnapshot {
 public:
  explicit EntitySnapshot(const Model<T>& model) : model_(&model), dim_(model.dim()) {
    if (model.encoder()) {
      const std::uint32_t n = model.config().num_entities;
      owned_base_.resize(std::size_t(n) * dim_);
      if (model.has_aux()) owned_aux_.resize(std::size_t(n) * dim_);
      for (EntityId e = 0; e < n; ++e) {
        const auto enc = model.encoder()->encode(model.params(), model.tokens()->at(e));
        std::copy(enc.base.begin(), enc.base.end(), owned_base_.begin() + std::ptrdiff_t(e * dim_));
        if (model.has_aux()) std::copy(enc.aux.begin(), enc.aux.end(), owned_aux_.begin() + std::ptrdiff_t(e * dim_));
      }
    }
  }

  std::span<const T> base(EntityId e) const {
    if (model_->encoder()) return {owned_base_.data() + std::size_t(e) * dim_, dim_};
    return model_->params()[*model_->entity_base_table()].row(e);
  }

  std::span<const T> aux(EntityId e) const {
    if (!model_->has_aux()) return {};
    if (model_->encoder()) return {owned_aux_.data() + std::size_t(e) * dim_, dim_};
    return model_->params()[*model_->entity_aux_table()].row(e);
  }

  // d_r of (h, r, t): lower is more plausible for every model kind.
  T distance(EntityId h, RelationId r, EntityId t) const {
    return score_for_loss(model_->kind(), model_->inputs(base(h), aux(h), model_->relation(r), base(t), aux(t)));
  }

  const Model<T>& model() const { return *model_; }

 private:
  const Model<T>* model_;
  std::size_t dim_;
  std::vector<T> owned_base_, owned_aux_;
};

// Plain-lookup entity vectors (no tokenization).
template <typename T>
struct DirectEntity {
  std::span<const T> base;
  std::span<const T> aux;
};

template <typename T>
DirectEntity<T> encode_entity_direct(const Model<T>& model, EntityId e) {
  if (!model.entity_base_table()) throw ConfigError("model does not use direct entity tables");
  DirectEntity<T> out;
  out.base = model.params()[*model.entity_base_table()].row(e);
  if (model.entity_aux_table()) out.aux = model.params()[*model.entity_aux_table()].row(e);
  return out;
}

}  // namespace kge
