#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace kge;

namespace {

ModelConfig lookup_config(ModelKind kind, const TripleStore& s, std::uint32_t dim = 6) {
  ModelConfig c;
  c.kind = kind;
  c.dim = dim;
  c.u = 0.3;
  c.norm = NormOrder::l2;
  c.num_entities = s.num_entities();
  c.num_relations = s.num_relations();
  return c;
}

std::shared_ptr<const TokenCache> small_tokens(const TripleStore& s) {
  const auto anchors = select_global_anchors(s, 4, AnchorStrategy::degree);
  return std::make_shared<const TokenCache>(tokenize_all(s, anchors, TokenizerConfig{2, 2, 2}, 3));
}

// Full-model gradient of the mean batch loss against central differences over
// every parameter, with negative weights frozen at their unperturbed values.
template <typename T>
void check_total_loss_gradient(Model<T>& model, const TripleStore& s, double alpha, double tol,
                               const std::string& label) {
  std::mt19937_64 rng(11);
  std::vector<Triple> batch(s.train.begin(), s.train.begin() + 5);
  for (auto side : {QueryDirection::tail, QueryDirection::head}) {
    const auto negs = sample_negatives(s, std::span<const Triple>(batch), 3, side, rng);
    const LossConfig lc{2.0, alpha};
    GradSet<T> grads(model.params());
    EntityBatch<T> scratch;
    const auto res = loss_and_grads(model, std::span<const Triple>(batch), negs, lc, grads, scratch);
    const auto frozen = testkit::oracle_weights(model, std::span<const Triple>(batch), negs, lc.gamma, alpha);
    EXPECT_NEAR(res.loss, testkit::frozen_weight_loss(model, std::span<const Triple>(batch), negs, lc.gamma, frozen),
                1e-10)
        << label;
    auto f = [&] { return testkit::frozen_weight_loss(model, std::span<const Triple>(batch), negs, lc.gamma, frozen); };
    for (std::size_t k = 0; k < model.params().size(); ++k) {
      auto& p = model.params()[k];
      const auto num = testkit::finite_diff(f, p.value, 1e-6);
      // Translation-invariant kinds give exactly zero gradients to shared biases;
      // there the difference quotient is rounding noise, so an absolute floor applies.
      double abs_err = 0;
      for (std::size_t i = 0; i < num.size(); ++i) abs_err = std::max(abs_err, std::abs(num[i] - grads[k].value[i]));
      EXPECT_TRUE(testkit::rel_err(grads[k].value, num) <= tol || abs_err <= 1e-8) << label << " " << p.name;
    }
  }
}

}  // namespace

TEST(Loss, TwoLnTwo) {
  const std::vector<double> neg{1.0};
  EXPECT_NEAR(triple_loss(1.0, std::span<const double>(neg), 1.0, 0.0), 2 * std::log(2.0), 1e-9);
}

TEST(Loss, WeightsSumToOne) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> uni(-50, 50), a(0, 5);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> d(1 + rng() % 64);
    for (auto& x : d) x = uni(rng);
    const auto w = self_adversarial_weights<double>(d, a(rng), 10.0);
    double s = 0;
    for (double x : w) s += x;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Loss, AlphaZeroIsUniform) {
  const std::vector<double> d{0.1, 5.0, 30.0, -2.0};
  for (double w : self_adversarial_weights<double>(d, 0.0, 10.0)) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(Loss, HarderNegativesWeighMore) {
  const std::vector<double> d{1.0, 5.0};
  const auto w = self_adversarial_weights<double>(d, 1.0, 10.0);
  EXPECT_GT(w[0], w[1]);
  EXPECT_NEAR(w[0] / w[1], std::exp(4.0), 1e-9);
}

TEST(Loss, StableAtExtremes) {
  EXPECT_TRUE(std::isfinite(log_sigmoid(-1000.0)));
  EXPECT_NEAR(log_sigmoid(-1000.0), -1000.0, 1e-9);
  EXPECT_NEAR(log_sigmoid(1000.0), 0.0, 1e-12);
}

TEST(Negatives, SeedDeterminismAndShape) {
  const auto s = testkit::random_store(30, 2, 100, 1);
  std::mt19937_64 a(5), b(5);
  const auto batch = std::span<const Triple>(s.train).subspan(0, 10);
  const auto x = sample_negatives(s, batch, 7, QueryDirection::tail, a);
  const auto y = sample_negatives(s, batch, 7, QueryDirection::tail, b);
  EXPECT_EQ(x.ids, y.ids);
  EXPECT_EQ(x.ids.size(), 70u);
  for (auto e : x.ids) EXPECT_LT(e, 30u);
}

TEST(Negatives, SingleEntityIsDegenerate) {
  const auto s = testkit::store_from({{0, 0, 0}}, 1, 1);
  std::mt19937_64 rng(1);
  const auto n = sample_negatives(s, std::span<const Triple>(s.train), 4, QueryDirection::head, rng);
  for (auto e : n.ids) EXPECT_EQ(e, 0u);
  EXPECT_EQ(n.degenerate_draws, 4u);
}

TEST(Negatives, TrainFilteringVerifiedByScan) {
  // 20 entities, 1 relation, 100 distinct train triples: a quarter of all pairs.
  const auto s = testkit::random_store(20, 1, 125, 4);
  ASSERT_EQ(s.train.size(), 100u);
  std::mt19937_64 rng(2);
  for (auto side : {QueryDirection::tail, QueryDirection::head}) {
    const auto n = sample_negatives(s, std::span<const Triple>(s.train), 8, side, rng, true);
    for (std::size_t i = 0; i < s.train.size(); ++i) {
      for (EntityId e : n.row(i)) {
        Triple c = s.train[i];
        (side == QueryDirection::tail ? c.tail : c.head) = e;
        const bool in_train = std::find(s.train.begin(), s.train.end(), c) != s.train.end();
        EXPECT_FALSE(in_train);
      }
    }
  }
}

TEST(Negatives, AlternatingSides) {
  EXPECT_EQ(corrupted_side(NegativeMode::alternate, 0), QueryDirection::tail);
  EXPECT_EQ(corrupted_side(NegativeMode::alternate, 1), QueryDirection::head);
  EXPECT_EQ(corrupted_side(NegativeMode::corrupt_head, 0), QueryDirection::head);
}

TEST(LossGradients, EveryLookupModelKind) {
  const auto s = testkit::random_store(12, 3, 60, 2);
  for (auto kind : kAllModelKinds) {
    for (double alpha : {0.0, 1.0}) {
      Model<double> m(lookup_config(kind, s), nullptr);
      m.init(3);
      check_total_loss_gradient(m, s, alpha, 1e-5, std::string(to_string(kind)));
    }
  }
}

TEST(LossGradients, TokenModels) {
  const auto s = testkit::random_store(12, 3, 60, 2);
  const auto tokens = small_tokens(s);
  for (auto kind : {ModelKind::interht, ModelKind::interht_plus, ModelKind::transe}) {
    for (auto combiner : {Combiner::transformer, Combiner::mean_pool}) {
      auto c = lookup_config(kind, s, 4);
      c.representation = EntityRepresentation::tokens;
      c.encoder.d_tok = 8;
      c.encoder.heads = 2;
      c.encoder.combiner = combiner;
      Model<double> m(c, tokens);
      m.init(4);
      check_total_loss_gradient(m, s, 1.0, 1e-4, std::string(to_string(kind)) + "/tokens");
    }
  }
}

TEST(LossGradients, SplitBatchesSumToWhole) {
  const auto s = testkit::random_store(20, 2, 80, 3);
  Model<double> m(lookup_config(ModelKind::interht, s), nullptr);
  m.init(1);
  std::mt19937_64 rng(1);
  const std::span<const Triple> batch(s.train.data(), 8);
  const auto negs = sample_negatives(s, batch, 4, QueryDirection::tail, rng);
  GradSet<double> whole(m.params()), a(m.params()), b(m.params());
  EntityBatch<double> e1, e2, e3;
  const double lw = loss_and_grads(m, batch, negs, LossConfig{}, whole, e1).loss;
  NegativeBatch na = negs, nb = negs;
  na.ids.assign(negs.ids.begin(), negs.ids.begin() + 12);
  nb.ids.assign(negs.ids.begin() + 12, negs.ids.end());
  const double la = loss_and_grads(m, batch.subspan(0, 3), na, LossConfig{}, a, e2, 8).loss;
  const double lb = loss_and_grads(m, batch.subspan(3), nb, LossConfig{}, b, e3, 8).loss;
  a.merge(b);
  EXPECT_NEAR(la + lb, lw, 1e-12);
  for (std::size_t k = 0; k < m.params().size(); ++k) {
    for (std::size_t i = 0; i < whole[k].value.size(); ++i) EXPECT_NEAR(a[k].value[i], whole[k].value[i], 1e-12);
  }
}

TEST(Adam, MinimizesSquare) {
  ParamSet<double> ps;
  ps.add("x", 1, 1, false);
  ps[0].value[0] = 1.0;
  AdamState<double> st(ps);
  AdamConfig cfg;
  cfg.lr = 0.1;
  for (int i = 0; i < 200; ++i) {
    GradSet<double> g(ps);
    g[0].row(0)[0] = 2 * ps[0].value[0];
    adam_step(ps, g, st, cfg);
  }
  EXPECT_LT(std::abs(ps[0].value[0]), 0.05);
}

TEST(Adam, FirstStepMovesByLr) {
  ParamSet<double> ps;
  ps.add("x", 1, 2, false);
  ps[0].value = {1.0, -3.0};
  AdamState<double> st(ps);
  GradSet<double> g(ps);
  g[0].row(0)[0] = 0.5;
  g[0].row(0)[1] = -7.0;
  AdamConfig cfg;
  cfg.lr = 0.01;
  adam_step(ps, g, st, cfg);
  EXPECT_NEAR(ps[0].value[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(ps[0].value[1], -3.0 + 0.01, 1e-9);
}

TEST(Adam, UntouchedRowsStayPut) {
  ParamSet<double> ps;
  ps.add("emb", 5, 3, true);
  std::mt19937_64 rng(1);
  init_uniform(ps[0], 1.0, rng);
  const auto before = ps[0].value;
  AdamState<double> st(ps);
  GradSet<double> g(ps);
  for (auto& v : g[0].row(2)) v = 1.0;
  adam_step(ps, g, st, AdamConfig{});
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t j = 0; j < 3; ++j) {
      const std::size_t i = r * 3 + j;
      if (r == 2) {
        EXPECT_NE(ps[0].value[i], before[i]);
      } else {
        EXPECT_EQ(ps[0].value[i], before[i]);
        EXPECT_EQ(st.m[0][i], 0.0);
        EXPECT_EQ(st.v[0][i], 0.0);
      }
    }
    EXPECT_EQ(st.steps[0][r], r == 2 ? 1u : 0u);
  }
}

TEST(Adam, PadRowNeverMoves) {
  const auto s = testkit::random_store(15, 2, 60, 6);
  const auto tokens = small_tokens(s);
  auto c = lookup_config(ModelKind::interht, s, 4);
  c.representation = EntityRepresentation::tokens;
  c.encoder.d_tok = 8;
  c.encoder.heads = 2;
  Model<float> m(c, tokens);
  m.init(1);
  AdamState<float> adam(m.params());
  TrainConfig tc;
  tc.batch_size = 8;
  tc.neg_size = 4;
  tc.steps_max = 20;
  tc.valid_every = 0;
  tc.adam.lr = 0.05;
  train_loop(s, m, adam, tc);
  const auto& tok = m.params()[m.encoder()->token_table()];
  for (std::size_t j = 0; j < tok.cols; ++j) EXPECT_EQ(tok.value[m.encoder()->pad_row() * tok.cols + j], 0.0f);
}

TEST(TrainLoop, LossDecreasesOnToy) {
  const auto s = testkit::random_store(40, 3, 150, 7);
  Model<float> m(lookup_config(ModelKind::interht, s, 16), nullptr);
  m.init(2);
  AdamState<float> adam(m.params());
  TrainConfig tc;
  tc.batch_size = 32;
  tc.neg_size = 8;
  tc.steps_max = 300;
  tc.valid_every = 0;
  tc.adam.lr = 0.01;
  tc.loss.gamma = 4;
  const auto out = train_loop(s, m, adam, tc);
  ASSERT_EQ(out.losses.size(), 300u);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += out.losses[i];
    last += out.losses[out.losses.size() - 1 - i];
  }
  EXPECT_LT(last, 0.5 * first);
}

TEST(TrainLoop, ThreadedRunIsDeterministic) {
  const auto s = testkit::random_store(40, 3, 150, 7);
  auto run = [&](std::size_t threads) {
    Model<double> m(lookup_config(ModelKind::interht, s, 8), nullptr);
    m.init(2);
    AdamState<double> adam(m.params());
    TrainConfig tc;
    tc.batch_size = 32;
    tc.neg_size = 8;
    tc.steps_max = 50;
    tc.valid_every = 0;
    tc.threads = threads;
    train_loop(s, m, adam, tc);
    return m.params()[0].value;
  };
  const auto a = run(3), b = run(3), c = run(1);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], c[i], 1e-7);
}
