#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "hlvae/error.hpp"
#include "hlvae/synthetic.hpp"
#include "test_util.hpp"

using namespace hlvae;
using testutil::longitudinal_schema;

namespace {

// n instances x v visits, one Gaussian feature equal to id + time.
DatasetTable grid_table(std::size_t n, std::size_t v, std::size_t features = 1) {
  std::vector<FeatureSpec> fs;
  for (std::size_t d = 0; d < features; ++d) fs.push_back(testutil::gaussian("y" + std::to_string(d)));
  Schema s = longitudinal_schema(fs);
  std::vector<double> cov, val;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t t = 0; t < v; ++t) {
      cov.push_back(double(p));
      cov.push_back(double(t));
      for (std::size_t d = 0; d < features; ++d) val.push_back(double(p) + 0.1 * double(t) + double(d));
    }
  return DatasetTable(s, cov, val, std::vector<std::uint8_t>(val.size(), 1));
}

}  // namespace

TEST_CASE("CSV ingestion derives the mask from empty cells") {
  Schema s = longitudinal_schema({testutil::gaussian("a"), FeatureSpec::make("c", Likelihood::categorical, 5)});
  auto t = parse_csv("id,time,a,c\n1,0,0.5,2\n1,1,,3\n2,0,1.5,4\n", s);
  CHECK(t.rows() == 3);
  CHECK(std::count(t.mask().begin(), t.mask().end(), 0) == 1);
  CHECK_FALSE(t.observed(1, 0));
  CHECK(t.num_instances() == 2);
  CHECK(t.rows_of(0).size() == 2);

  CHECK_THROWS_AS(parse_csv("id,time,a,c\n1,0,0.5,7\n", s), DomainViolation);
  CHECK_THROWS_AS(parse_csv("id,time,a\n1,0,0.5\n", s), SchemaMismatch);
  CHECK_THROWS_AS(parse_csv("id,time,a,c,zzz\n1,0,0.5,1,3\n", s), SchemaMismatch);
  CHECK_THROWS_AS(parse_csv("id,time,a,c\n1,,0.5,1\n", s), MissingCovariate);
  CHECK_THROWS_AS(parse_csv("id,time,a,c\n1,0,abc,1\n", s), ParseError);
}

TEST_CASE("domain checks per likelihood") {
  Schema s = longitudinal_schema({FeatureSpec::make("n", Likelihood::poisson),
                                  FeatureSpec::make("ln", Likelihood::lognormal),
                                  FeatureSpec::make("o", Likelihood::ordinal, 3)});
  CHECK_NOTHROW(parse_csv("id,time,n,ln,o\n1,0,3,0.2,2\n", s));
  CHECK_THROWS_AS(parse_csv("id,time,n,ln,o\n1,0,-1,0.2,2\n", s), DomainViolation);
  CHECK_THROWS_AS(parse_csv("id,time,n,ln,o\n1,0,1.5,0.2,2\n", s), DomainViolation);
  CHECK_THROWS_AS(parse_csv("id,time,n,ln,o\n1,0,1,0,2\n", s), DomainViolation);
  CHECK_THROWS_AS(parse_csv("id,time,n,ln,o\n1,0,1,1,3\n", s), DomainViolation);
  // masked cells carry no requirement
  CHECK_NOTHROW(parse_csv("id,time,n,ln,o\n1,0,,,\n", s));
}

TEST_CASE("80-feature mixed schema is accepted") {
  nlohmann::json j;
  j["features"] = nlohmann::json::array();
  auto add = [&](const std::string& kind, int count, int card) {
    for (int i = 0; i < count; ++i) {
      nlohmann::json f = {{"name", kind + std::to_string(i)}, {"likelihood", kind}};
      if (card) f["cardinality"] = card;
      j["features"].push_back(f);
    }
  };
  add("gaussian", 8, 0);
  add("lognormal", 12, 0);
  add("poisson", 12, 0);
  add("ordinal", 12, 4);
  add("categorical", 36, 3);
  j["covariates"] = {{{"name", "id"}, {"kind", "categorical"}, {"id", true}},
                     {{"name", "age"}, {"time", true}},
                     {{"name", "sex"}, {"kind", "binary"}}};
  Schema s = Schema::from_json(j);
  CHECK(s.num_features() == 80);
  CHECK(Schema::from_json(s.to_json()) == s);

  std::string header = "id,age,sex", row = "7,60.5,1";
  for (const auto& f : s.features) {
    header += "," + f.name;
    switch (f.likelihood) {
      case Likelihood::lognormal: row += ",2.5"; break;
      case Likelihood::poisson: row += ",4"; break;
      case Likelihood::ordinal: row += ",3"; break;
      case Likelihood::categorical: row += ",2"; break;
      default: row += ",-0.3";
    }
  }
  auto t = parse_csv(header + "\n" + row + "\n", s);
  CHECK(t.rows() == 1);
  CHECK(t.observed_count() == 80);
}

TEST_CASE("schema invariants") {
  CHECK_THROWS_AS(FeatureSpec::make("c", Likelihood::categorical, 1), SchemaMismatch);
  auto g = testutil::gaussian("g");
  g.cardinality = 3;
  CHECK_THROWS_AS(longitudinal_schema({g}).validate(), SchemaMismatch);
  auto oh = testutil::gaussian("g");
  oh.transform = EncoderTransform::one_hot;
  CHECK_THROWS_AS(longitudinal_schema({oh}).validate(), SchemaMismatch);
  auto two_ids = longitudinal_schema({testutil::gaussian("g")});
  two_ids.covariates[1].is_instance_id = true;
  CHECK_THROWS_AS(two_ids.validate(), SchemaMismatch);
}

TEST_CASE("encoder input transforms") {
  Schema s = longitudinal_schema({testutil::gaussian("g"), FeatureSpec::make("o", Likelihood::ordinal, 4),
                                  FeatureSpec::make("c", Likelihood::categorical, 3),
                                  FeatureSpec::make("n", Likelihood::poisson),
                                  FeatureSpec::make("ln", Likelihood::lognormal)});
  auto t = parse_csv("id,time,g,o,c,n,ln\n1,0,1,2,0,0,1\n1,1,3,0,2,3,4\n2,0,2,,1,8,\n", s);
  auto stats = fit_normalization(t);
  auto e = encode_inputs(t, stats);
  CHECK(e.width == 1 + 3 + 3 + 1 + 1);
  CHECK(encoded_width(s, true) == e.width + 5);

  auto cell = [&](std::size_t n, std::size_t d, std::size_t k) {
    return e.data[n * e.width + e.ranges[d].first + k];
  };
  // g = 2 is the training mean
  CHECK(cell(2, 0, 0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cell(0, 1, 0) == 1.0);
  CHECK(cell(0, 1, 1) == 1.0);
  CHECK(cell(0, 1, 2) == 0.0);
  CHECK(cell(0, 2, 0) == 1.0);
  CHECK(cell(0, 2, 1) == 0.0);
  CHECK(cell(0, 2, 2) == 0.0);
  // missing ordinal and log-normal cells are exactly zero
  for (std::size_t k = 0; k < 3; ++k) CHECK(cell(2, 1, k) == 0.0);
  CHECK(cell(2, 4, 0) == 0.0);

  // population std of {1,3,2} for g
  CHECK(stats.features[0].std == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(cell(1, 0, 0) == doctest::Approx(1.0 / std::sqrt(2.0 / 3.0)));
  // log1p for counts
  double m = (std::log1p(0) + std::log1p(3) + std::log1p(8)) / 3;
  CHECK(stats.features[3].mean == doctest::Approx(m));
  // log-standardize for log-normal
  CHECK(stats.features[4].mean == doctest::Approx(std::log(4.0) / 2));

  auto with_mask = encode_inputs(t, stats, true);
  CHECK(with_mask.data[2 * with_mask.width + e.width + 1] == 0.0);
  CHECK(with_mask.data[2 * with_mask.width + e.width + 0] == 1.0);
}

TEST_CASE("degenerate features are reported and get unit scale") {
  Schema s = longitudinal_schema({testutil::gaussian("g")});
  auto t = parse_csv("id,time,g\n1,0,5\n1,1,5\n", s);
  auto stats = fit_normalization(t);
  CHECK(stats.degenerate == std::vector<std::string>{"g"});
  CHECK(stats.features[0].std == 1.0);
}

TEST_CASE("standardization round trip") {
  auto data = generate(GenConfig{}, 5);
  auto stats = fit_normalization(data.table);
  auto e = encode_inputs(data.table, stats);
  const auto& s = data.table.schema();
  std::size_t checked = 0;
  for (std::size_t n = 0; n < data.table.rows(); ++n)
    for (std::size_t d = 0; d < s.num_features(); ++d) {
      const auto& f = s.features[d];
      if (f.transform != EncoderTransform::standardize && f.transform != EncoderTransform::log1p_standardize &&
          f.transform != EncoderTransform::log_standardize)
        continue;
      double enc = e.data[n * e.width + e.ranges[d].first];
      double raw = data.table.value(n, d);
      CHECK(std::abs(invert_standardized(f, stats.features[d], enc) - raw) <= 1e-12 * std::max(1.0, std::abs(raw)));
      ++checked;
    }
  CHECK(checked > 0);
}

TEST_CASE("longitudinal split counts and determinism") {
  auto t = grid_table(10, 6);
  auto a = split_longitudinal(t, {0.6, 0.2, 0.2}, 4, 2);
  CHECK(a.train.rows() == 44);
  CHECK(a.disclosed.rows() == 8);
  CHECK(a.validation.rows() == 8);
  CHECK(a.test.rows() == 8);
  CHECK(a.train.rows() + a.validation.rows() + a.test.rows() == 60);

  auto b = split_longitudinal(t, {0.6, 0.2, 0.2}, 4, 2);
  CHECK(to_csv(a.train) == to_csv(b.train));
  CHECK(to_csv(a.test) == to_csv(b.test));

  // splits are by instance: held-out rows belong to instances absent from training except via disclosure
  std::set<double> held;
  for (std::size_t n = 0; n < a.test.rows(); ++n) held.insert(a.test.covariate(n, 0));
  for (double id : held) {
    std::size_t in_train = 0;
    for (std::size_t n = 0; n < a.train.rows(); ++n) in_train += a.train.covariate(n, 0) == id;
    CHECK(in_train == 2);
  }

  auto plain = split_longitudinal(t, {0.6, 0.2, 0.2}, 4, 0);
  CHECK(plain.train.rows() == 36);
  CHECK(plain.disclosed.rows() == 0);

  CHECK_THROWS_AS(split_longitudinal(grid_table(10, 2), {0.6, 0.2, 0.2}, 1, 2), TooFewVisits);
  CHECK_THROWS_AS(split_longitudinal(t, {0.6, 0.6, 0.2}, 1, 0), Error);
}

TEST_CASE("MCAR injection") {
  auto t = grid_table(2, 2, 4);  // 4 rows x 4 features
  auto r = inject_mcar(t, 0.25, 9);
  CHECK(r.held_out.size() == 4);
  CHECK(r.table.observed_count() == 12);
  for (const auto& c : r.held_out) {
    CHECK_FALSE(r.table.observed(c.row, c.feature));
    CHECK(c.value == t.value(c.row, c.feature));
  }

  auto big = grid_table(5, 6, 3);
  auto x = inject_mcar(big, 0.5, 21);
  auto y = inject_mcar(big, 0.5, 21);
  CHECK(x.table.mask() == y.table.mask());
  CHECK(x.held_out.size() == 45);

  // no cell that was already missing is ever held out or revived
  auto again = inject_mcar(x.table, 0.5, 3);
  CHECK(again.held_out.size() == 22);
  for (std::size_t k = 0; k < big.mask().size(); ++k)
    if (!x.table.mask()[k]) CHECK(again.table.mask()[k] == 0);
}

TEST_CASE("synthetic generator output is valid and reproducible") {
  GenConfig c;
  c.instances = 20;
  c.visits = 10;
  c.latent_dim = 2;
  c.features = {testutil::gaussian("g1"), testutil::gaussian("g2"), FeatureSpec::make("n", Likelihood::poisson),
                FeatureSpec::make("c", Likelihood::categorical, 3), FeatureSpec::make("o", Likelihood::ordinal, 4)};
  auto a = generate(c, 8);
  CHECK(a.table.rows() == 200);
  CHECK(a.table.num_instances() == 20);
  // the constructor validates every observed cell; round-trip through CSV re-validates
  CHECK(to_csv(parse_csv(to_csv(a.table), a.table.schema())) == to_csv(a.table));
  auto b = generate(c, 8);
  CHECK(to_csv(a.table) == to_csv(b.table));
  CHECK(a.latents == b.latents);
  CHECK(to_csv(generate(c, 9).table) != to_csv(a.table));
}

TEST_CASE("zero-variance generator kernels give one shared trajectory") {
  GenConfig c;
  c.shared_magnitude = c.group_magnitude = c.individual_magnitude = 0;
  c.latent_noise = 0;
  auto d = generate(c, 2);
  const std::size_t L = c.latent_dim;
  for (std::size_t n = 0; n < d.table.rows(); ++n)
    for (std::size_t l = 0; l < L; ++l) CHECK(d.latents[n * L + l] == 0.0);

  // noiseless Gaussian features are then constant across instances
  c.observation_noise = 0;
  auto e = generate(c, 2);
  for (std::size_t n = 1; n < e.table.rows(); ++n) CHECK(e.table.value(n, 0) == e.table.value(0, 0));
}

TEST_CASE("latent variance across instances matches the configured kernel") {
  GenConfig c;
  c.instances = 200;
  c.group_magnitude = 0;
  auto d = generate(c, 17);
  const std::size_t P = c.instances, V = c.visits, L = c.latent_dim;
  double avg = 0;
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t v = 0; v < V; ++v) {
      double m = 0, s = 0;
      for (std::size_t p = 0; p < P; ++p) m += d.latents[(p * V + v) * L + l];
      m /= P;
      for (std::size_t p = 0; p < P; ++p) s += std::pow(d.latents[(p * V + v) * L + l] - m, 2);
      avg += s / (P - 1);
    }
  avg /= double(L * V);
  const double expected = c.individual_magnitude + c.latent_noise;
  CHECK(std::abs(avg - expected) / expected < 0.15);
}

TEST_CASE("table utilities preserve masks") {
  auto t = inject_mcar(grid_table(3, 3, 2), 0.3, 1).table;
  auto sorted = t.subset({8, 7, 6, 5, 4, 3, 2, 1, 0}).sorted_by_instance();
  CHECK(sorted.is_sorted_by_instance());
  CHECK(sorted.mask() == t.mask());
  CHECK(to_csv(sorted) == to_csv(t));
  auto both = DatasetTable::concat(t, t);
  CHECK(both.rows() == 18);
  CHECK(both.observed_count() == 2 * t.observed_count());
}
