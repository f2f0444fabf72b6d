#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hlvae/error.hpp"
#include "hlvae/metrics.hpp"
#include "hlvae/rng.hpp"
#include "test_util.hpp"

using namespace hlvae;

namespace {

std::vector<double> v(std::initializer_list<double> x) { return x; }

Schema mixed() {
  return testutil::longitudinal_schema({testutil::gaussian("g"), FeatureSpec::make("n", Likelihood::poisson),
                                        FeatureSpec::make("c", Likelihood::categorical, 3),
                                        FeatureSpec::make("o", Likelihood::ordinal, 5)});
}

}  // namespace

TEST_CASE("nrmse") {
  CHECK(nrmse(v({1, 2}), v({1, 2}), 0, 5) == 0.0);
  CHECK(nrmse(v({0, 0}), v({0, 10}), 0, 10) == doctest::Approx(std::sqrt(50.0) / 10));
  CHECK(nrmse(v({0, 0}), v({0, 10}), 0, 10) == doctest::Approx(0.7071).epsilon(1e-4));
  const double c = 37.5;
  CHECK(nrmse(v({0 * c, 0 * c}), v({0 * c, 10 * c}), 0, 10 * c) ==
        doctest::Approx(nrmse(v({0, 0}), v({0, 10}), 0, 10)).epsilon(1e-14));
  bool flat = false;
  CHECK(nrmse(v({1, 3}), v({1, 1}), 2, 2, &flat) == doctest::Approx(std::sqrt(2.0)));
  CHECK(flat);
  CHECK_THROWS_AS(nrmse(v({}), v({}), 0, 1), EmptyHoldout);
  CHECK_THROWS_AS(rmse(v({1}), v({1, 2})), ShapeMismatch);
}

TEST_CASE("accuracy error") {
  CHECK(accuracy_error(v({0, 1, 2}), v({0, 1, 2})) == 0.0);
  CHECK(accuracy_error(v({0, 1, 2, 2}), v({0, 1, 2, 1})) == 0.25);
  Rng rng(3);
  std::vector<double> p(10000), t(10000);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = double(rng.below(5));
    t[i] = double(rng.below(5));
  }
  CHECK(std::abs(accuracy_error(p, t) - 0.8) < 0.015);
  CHECK_THROWS_AS(accuracy_error(v({}), v({})), EmptyHoldout);
}

TEST_CASE("displacement error") {
  CHECK(displacement_error(v({0, 1, 2, 3, 4}), v({0, 1, 2, 3, 4}), 5) == 0.0);
  CHECK(displacement_error(v({1, 0}), v({0, 0}), 3) == 0.25);
  CHECK(displacement_error(v({0, 4}), v({4, 0}), 5) == 1.0);
  CHECK_THROWS_AS(displacement_error(v({0}), v({0}), 1), DomainViolation);
}

TEST_CASE("predictive NLL report") {
  Schema s = mixed();
  std::vector<CellNll> cells{{0, 1, 1.0}, {1, 1, 1.0}, {0, 0, 0.5}, {2, 2, 2.0}, {3, 3, 4.0}, {1, 0, 1.5}};
  auto rep = predictive_nll_report(cells, s);
  CHECK(rep.find("count", "nll")->value == 1.0);
  CHECK(rep.find("count", "nll")->cells == 2);
  CHECK(rep.find("real", "nll")->value == 1.0);
  CHECK(rep.find("categorical", "nll")->value == 2.0);
  CHECK(rep.find("ordinal", "nll")->value == 4.0);
  CHECK(rep.find("overall", "nll")->value == doctest::Approx(10.0 / 6));
  CHECK(rep.find("overall", "nll")->cells == 6);

  // groups do not depend on cell order
  auto shuffled = cells;
  std::reverse(shuffled.begin(), shuffled.end());
  std::rotate(shuffled.begin(), shuffled.begin() + 2, shuffled.end());
  auto rep2 = predictive_nll_report(shuffled, s);
  for (const auto& r : rep.rows) CHECK(rep2.find(r.scope, r.metric)->value == doctest::Approx(r.value).epsilon(1e-15));

  CHECK(predictive_nll_report({}, s).rows.empty());
  CHECK_THROWS_AS(predictive_nll_report({{0, 9, 1.0}}, s), SchemaMismatch);
}

TEST_CASE("error report over held-out cells") {
  Schema s = mixed();
  auto t = parse_csv(
      "id,time,g,n,c,o\n"
      "1,0,1.0,3,2,4\n"
      "1,1,2.0,0,1,1\n"
      "2,0,3.0,5,0,2\n"
      "2,1,4.0,2,2,0\n",
      s);
  auto stats = fit_normalization(t);
  // predicted table: g off by 1 everywhere, c right once, o off by one level
  auto pred = parse_csv(
      "id,time,g,n,c,o\n"
      "1,0,2.0,3,2,3\n"
      "1,1,3.0,1,0,1\n"
      "2,0,4.0,5,0,2\n"
      "2,1,5.0,2,1,0\n",
      s);
  std::vector<HeldOutCell> truth{{0, 0, 1.0}, {1, 0, 2.0}, {1, 1, 0.0}, {0, 2, 2.0}, {1, 2, 1.0},
                                 {3, 2, 2.0}, {0, 3, 4.0}, {2, 3, 2.0}};
  auto rep = error_report(pred, truth, stats);
  CHECK(rep.find("g", "nrmse")->value == doctest::Approx(1.0 / 3.0));
  CHECK(rep.find("g", "nrmse")->cells == 2);
  CHECK(rep.find("n", "nrmse")->value == doctest::Approx(1.0 / 5.0));
  CHECK(rep.find("c", "accuracy_error")->value == doctest::Approx(2.0 / 3.0));
  CHECK(rep.find("o", "displacement_error")->value == doctest::Approx(0.5 / 4.0));
  std::size_t total = 0;
  for (const auto& r : rep.rows)
    if (r.scope == "g" || r.scope == "n" || r.scope == "c" || r.scope == "o") total += r.cells;
  CHECK(total == truth.size());
  CHECK(rep.find("real", "nrmse")->cells == 2);
  CHECK(rep.find("count", "nrmse")->cells == 1);
  CHECK(rep.csv().rfind("scope,metric,value,cells\n", 0) == 0);
  CHECK(rep.table().find("accuracy_error") != std::string::npos);

  CHECK_THROWS_AS(error_report(pred, {}, stats), EmptyHoldout);
  CHECK_THROWS_AS(error_report(pred, {{9, 0, 1.0}}, stats), SchemaMismatch);
}

TEST_CASE("gaussian predictions scored with the true types") {
  Schema s = mixed();
  Schema g = s.all_gaussian();
  auto pred = parse_csv("id,time,g,n,c,o\n1,0,0.0,2.6,1.4,7.2\n", g);
  auto truth_table = parse_csv("id,time,g,n,c,o\n1,0,0.0,3,1,4\n", s);
  std::vector<HeldOutCell> truth{{0, 2, 1.0}, {0, 3, 4.0}};
  auto rep = error_report(pred, truth, fit_normalization(truth_table), &s);
  CHECK(rep.find("c", "accuracy_error")->value == 0.0);  // 1.4 rounds to 1
  CHECK(rep.find("o", "displacement_error")->value == 0.0);  // 7.2 clamps to 4
}

TEST_CASE("flat training range falls back to RMSE") {
  Schema s = testutil::longitudinal_schema({testutil::gaussian("g")});
  auto t = parse_csv("id,time,g\n1,0,2.0\n1,1,2.0\n", s);
  auto pred = parse_csv("id,time,g\n1,0,2.5\n1,1,2.0\n", s);
  auto rep = error_report(pred, {{0, 0, 2.0}}, fit_normalization(t));
  REQUIRE(rep.find("g", "rmse") != nullptr);
  CHECK(rep.find("g", "rmse")->value == doctest::Approx(0.5));
  CHECK(rep.warnings.size() == 1);
}
