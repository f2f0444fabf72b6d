#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "hlvae/error.hpp"
#include "hlvae/train.hpp"
#include "kl_fixture.hpp"

using namespace hlvae;
using ad::Tensor;

namespace {

std::vector<std::vector<double>> snapshot(const Model& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

Model synthetic_model(std::size_t P, std::size_t visits, std::uint64_t seed, std::size_t inducing = 8) {
  GenConfig g;
  g.instances = P;
  g.visits = visits;
  auto data = generate(g, seed);
  ModelConfig c;
  c.kernel = "se(time) + ca(id)*se(time) + ca(group)*se(time)";
  c.latent_dim = 2;
  c.hidden_width = 10;
  c.slot_width = 3;
  c.inducing = inducing;
  return Model::create(inject_mcar(data.table, 0.2, seed).table, c, seed);
}

}  // namespace

TEST_CASE("zero epochs leave the model untouched") {
  auto m = synthetic_model(4, 4, 1);
  auto before = snapshot(m);
  TrainConfig cfg;
  cfg.epochs = 0;
  auto h = train(m, cfg);
  CHECK(h.epochs.empty());
  CHECK(snapshot(m) == before);
}

TEST_CASE("training increases the smoothed ELBO") {
  auto m = synthetic_model(20, 5, 2);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.learning_rate = 1e-2;
  cfg.kl_mode = KlMode::bound;
  cfg.batch_instances = 5;
  cfg.warmup_epochs = 0;
  cfg.seed = 3;
  auto h = train(m, cfg);
  REQUIRE(h.epochs.size() == 300);
  auto avg = [&](std::size_t end) {
    double s = 0;
    for (std::size_t e = end - 5; e < end; ++e) s += h.epochs[e].elbo;
    return s / 5;
  };
  for (std::size_t e = 6; e <= 14; ++e) CHECK(avg(e) > avg(e - 1));
  CHECK(avg(300) > avg(5));
  for (const auto& r : h.epochs) {
    CHECK(std::isfinite(r.elbo));
    CHECK(r.elbo == doctest::Approx(r.recon - r.kl).epsilon(1e-12));
  }
}

TEST_CASE("training is deterministic for a seed") {
  for (KlMode mode : {KlMode::exact, KlMode::bound}) {
    auto a = synthetic_model(6, 4, 5), b = synthetic_model(6, 4, 5);
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.learning_rate = 5e-3;
    cfg.kl_mode = mode;
    cfg.batch_instances = 2;
    cfg.seed = 9;
    auto ha = train(a, cfg), hb = train(b, cfg);
    REQUIRE(ha.epochs.size() == hb.epochs.size());
    for (std::size_t e = 0; e < ha.epochs.size(); ++e) {
      CHECK(ha.epochs[e].elbo == hb.epochs[e].elbo);
      CHECK(ha.epochs[e].kl == hb.epochs[e].kl);
    }
    CHECK(snapshot(a) == snapshot(b));

    auto c = synthetic_model(6, 4, 5);
    cfg.seed = 10;
    train(c, cfg);
    CHECK(snapshot(c) != snapshot(a));
  }
}

TEST_CASE("adam first step and masks") {
  Tensor x = Tensor::parameter(1, 3, {0.0, 1.0, -2.0});
  Tensor y = Tensor::parameter(1, 2, {0.5, 0.5});
  Adam opt({x, y}, 0.1);
  opt.set_mask(y, {1.0, 0.0});
  // objective: 3 x0 - 0.5 x1 + 0*x2 + y0 + y1
  Tensor obj = ad::sum(x * Tensor::constant(1, 3, {3.0, -0.5, 0.0})) + ad::sum(y);
  opt.ascend(ad::backward(obj));
  CHECK(x.values()[0] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(x.values()[1] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(x.values()[2] == -2.0);
  CHECK(y.values()[0] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(y.values()[1] == 0.5);

  CHECK_THROWS_AS(opt.set_mask(x, {1.0}), ShapeMismatch);
  CHECK_THROWS(Adam({x + 1.0}, 0.1));

  // parameters absent from the graph stay put
  Tensor z = Tensor::parameter(1, 1, {4.0});
  Adam solo({x, z}, 0.1);
  solo.ascend(ad::backward(ad::sum(x)));
  CHECK(z.values()[0] == 4.0);
}

TEST_CASE("inducing points move only along trainable columns") {
  auto m = synthetic_model(5, 4, 6);
  REQUIRE(m.inducing.has_value());
  std::vector<double> before(m.inducing->points.values().begin(), m.inducing->points.values().end());
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 0.05;
  cfg.kl_mode = KlMode::bound;
  train(m, cfg);
  const std::size_t Q = m.inducing->points.cols();
  bool moved = false;
  for (std::size_t k = 0; k < before.size(); ++k) {
    if (!m.inducing->trainable_column[k % Q])
      CHECK(m.inducing->points.values()[k] == before[k]);
    else
      moved = moved || m.inducing->points.values()[k] != before[k];
  }
  CHECK(moved);
}

TEST_CASE("non-finite loss restores the last good parameters") {
  auto m = synthetic_model(5, 4, 7);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 1e6;
  std::size_t completed = 0;
  bool threw = false;
  try {
    train(m, cfg, nullptr, [&](const EpochRecord&) { ++completed; });
  } catch (const NonFiniteLoss& e) {
    threw = true;
    CHECK(std::string(e.what()).find("NonFiniteLoss") == 0);
  }
  CHECK(threw);
  CHECK(completed < 200);
  for (const auto& p : m.parameters())
    for (double v : p.values()) CHECK(std::isfinite(v));
}

TEST_CASE("argument validation") {
  auto m = synthetic_model(4, 4, 8);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_instances = 5;
  cfg.kl_mode = KlMode::bound;
  CHECK_THROWS_AS(train(m, cfg), DomainViolation);
  cfg.batch_instances = 0;
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(train(m, cfg), DomainViolation);
  cfg.learning_rate = 1e-3;
  cfg.optimizer = "sgd";
  CHECK_THROWS_AS(train(m, cfg), ParseError);

  auto plain = synthetic_model(4, 4, 8, 0);
  TrainConfig b;
  b.kl_mode = KlMode::bound;
  CHECK_THROWS_AS(train(plain, b), MissingIndividualComponent);

  auto other = m.training.with_schema(m.schema.all_gaussian());
  TrainConfig e;
  e.epochs = 1;
  CHECK_THROWS_AS(train(m, e, &other), SchemaMismatch);
}

TEST_CASE("early stopping keeps the best validation parameters") {
  GenConfig g;
  g.instances = 10;
  g.visits = 5;
  auto data = generate(g, 11);
  auto split = split_longitudinal(data.table, {0.6, 0.4, 0.0}, 2, 1);
  ModelConfig c;
  c.kernel = "se(time) + ca(id)*se(time)";
  c.latent_dim = 2;
  c.hidden_width = 8;
  c.inducing = 0;
  Model m = Model::create(split.train, c, 1);
  TrainConfig cfg;
  cfg.epochs = 400;
  cfg.learning_rate = 3e-2;
  cfg.patience = 3;
  std::vector<double> val;
  auto h = train(m, cfg, &split.validation, [&](const EpochRecord& r) { val.push_back(r.val_nll); });
  REQUIRE(h.best_epoch >= 1);
  double best = INFINITY;
  for (double v : val) best = std::min(best, v);
  CHECK(val[h.best_epoch - 1] == best);
  CHECK(reconstruction_nll(m, split.validation) == doctest::Approx(best).epsilon(1e-12));
  if (h.stopped_early) CHECK(val.size() == h.best_epoch + 3);
}

TEST_CASE("checkpoint round trip") {
  auto m = synthetic_model(4, 4, 12);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.kl_mode = KlMode::bound;
  train(m, cfg);
  auto path = std::filesystem::temp_directory_path() / "hlvae_ckpt_test.json";
  m.save(path.string());
  Model r = Model::load(path.string());
  std::filesystem::remove(path);
  CHECK(snapshot(r) == snapshot(m));
  CHECK(r.schema == m.schema);
  CHECK(r.training.values() == m.training.values());
  CHECK(r.training.mask() == m.training.mask());
  CHECK(klfix::elbo_at(r, KlMode::bound, 4) == klfix::elbo_at(m, KlMode::bound, 4));
  CHECK(reconstruction_nll(r, m.training) == reconstruction_nll(m, m.training));

  // training continues identically from a restored checkpoint
  TrainConfig more;
  more.epochs = 2;
  more.seed = 1;
  train(m, more);
  train(r, more);
  CHECK(snapshot(r) == snapshot(m));
}

TEST_CASE("history csv") {
  std::vector<EpochRecord> h{{1, -2.5, -2.0, 0.5, std::nan("")}, {2, -1.25, -1.0, 0.25, 0.75}};
  CHECK(history_csv(h) == "epoch,elbo,recon,kl,val_nll\n1,-2.5,-2,0.5,nan\n2,-1.25,-1,0.25,0.75\n");
  auto cfg = TrainConfig::from_json(TrainConfig{}.to_json());
  CHECK(cfg.to_json() == TrainConfig{}.to_json());
}
