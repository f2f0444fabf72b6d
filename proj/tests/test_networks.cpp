#include <doctest.h>

#include <cmath>

#include "hlvae/error.hpp"
#include "hlvae/networks.hpp"
#include "test_util.hpp"

using namespace hlvae;
using ad::Tensor;

namespace {

void zero_all(const std::vector<Tensor>& params) {
  for (auto p : params)
    for (auto& v : p.mutable_values()) v = 0.0;
}

Schema mixed_schema() {
  return testutil::longitudinal_schema({testutil::gaussian("g"), FeatureSpec::make("n", Likelihood::poisson),
                                        FeatureSpec::make("c", Likelihood::categorical, 3),
                                        FeatureSpec::make("o", Likelihood::ordinal, 4),
                                        FeatureSpec::make("l", Likelihood::lognormal)});
}

DatasetTable five_rows() {
  return parse_csv(
      "id,time,g,n,c,o,l\n"
      "1,0,0.3,2,0,1,1.5\n"
      "1,1,-1.2,,2,3,0.4\n"
      "2,0,0.8,0,1,,2.2\n"
      "2,1,,5,,0,0.9\n"
      "3,0,1.9,1,2,2,\n",
      mixed_schema());
}

// Masked log-likelihood of the table under a fixed noise draw.
Tensor masked_loglik(const EncoderParams& enc, const DecoderParams& dec, const DatasetTable& t,
                     const NormalizationStats& stats, const Tensor& noise) {
  auto q = encode(enc, encode_inputs(t, stats));
  auto params = decode(dec, reparameterize(q, noise));
  Tensor total = Tensor::scalar(0.0);
  const std::size_t N = t.rows();
  for (std::size_t d = 0; d < t.num_features(); ++d) {
    std::vector<double> y(N);
    std::vector<std::uint8_t> obs(N);
    for (std::size_t n = 0; n < N; ++n) {
      y[n] = t.value(n, d);
      obs[n] = t.observed(n, d);
    }
    total = total + ad::sum(log_prob_column(params[d], y, obs));
  }
  return total;
}

}  // namespace

TEST_CASE("encoder with zero parameters") {
  Rng rng(1);
  auto enc = EncoderParams::create(7, 10, 3, rng);
  zero_all(enc.parameters());
  auto q = encode(enc, Tensor::constant(2, 7, std::vector<double>(14, 0.4)));
  CHECK(q.latent_dim() == 3);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(q.means(n, l) == 0.0);
      CHECK(q.variances(n, l) == doctest::Approx(std::log(2.0)));
    }
  CHECK_THROWS_AS(encode(enc, Tensor::zeros(2, 6)), ShapeMismatch);
}

TEST_CASE("encoder rows are independent and deterministic") {
  Rng rng(2);
  auto enc = EncoderParams::create(4, 16, 2, rng);
  std::vector<double> x{0.1, -0.5, 2.0, 0.0, 0.1, -0.5, 2.0, 0.0, 1.0, 1.0, -1.0, 0.3};
  auto a = encode(enc, Tensor::constant(3, 4, x));
  auto b = encode(enc, Tensor::constant(3, 4, x));
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(a.means(0, l) == a.means(1, l));
    CHECK(a.variances(0, l) == a.variances(1, l));
    CHECK(a.variances(2, l) > 0);
  }
  CHECK(std::vector<double>(a.means.values().begin(), a.means.values().end()) ==
        std::vector<double>(b.means.values().begin(), b.means.values().end()));

  x[9] += 0.7;  // row 2 only
  auto c = encode(enc, Tensor::constant(3, 4, x));
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(c.means(0, l) == a.means(0, l));
    CHECK(c.means(1, l) == a.means(1, l));
  }
  CHECK((c.means(2, 0) != a.means(2, 0) || c.means(2, 1) != a.means(2, 1) ||
         c.variances(2, 0) != a.variances(2, 0)));
}

TEST_CASE("glorot initialization bounds") {
  Rng rng(3);
  auto d = Dense::create(30, 20, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  double maxabs = 0;
  for (double v : d.weight.values()) maxabs = std::max(maxabs, std::abs(v));
  CHECK(maxabs <= bound);
  CHECK(maxabs > 0.8 * bound);
  for (double v : d.bias.values()) CHECK(v == 0.0);
}

TEST_CASE("reparameterization") {
  LatentPosterior q{Tensor::constant(2, 2, {1, -2, 0.5, 3}), Tensor::constant(2, 2, {0.3, 1e-300, 2, 4})};
  auto z0 = reparameterize(q, Tensor::zeros(2, 2));
  for (std::size_t i = 0; i < 4; ++i) CHECK(z0.values()[i] == q.means.values()[i]);
  auto z1 = reparameterize(q, Tensor::full(2, 2, 1.0));
  CHECK(z1(0, 1) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(z1(1, 1) == doctest::Approx(5.0));
  CHECK_THROWS_AS(reparameterize(q, Tensor::zeros(3, 2)), ShapeMismatch);

  Rng rng(4);
  LatentPosterior one{Tensor::constant(1, 1, {0.7}), Tensor::constant(1, 1, {2.5})};
  const int n = 10000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double z = reparameterize(one, standard_normal(1, 1, rng)).item();
    s += z;
    s2 += z * z;
  }
  const double var = (s2 - s * s / n) / (n - 1);
  CHECK(std::abs(var - 2.5) / 2.5 < 0.05);

  // gradient reaches both the mean and the variance
  Tensor mu = Tensor::parameter(1, 1, {0.2}), v = Tensor::parameter(1, 1, {0.9});
  auto g = ad::backward(ad::sum(reparameterize({mu, v}, Tensor::constant(1, 1, {1.5}))));
  CHECK(g.of(mu)[0] == doctest::Approx(1.0));
  CHECK(g.of(v)[0] == doctest::Approx(1.5 * 0.5 / std::sqrt(0.9)));
}

TEST_CASE("decoder with zero parameters") {
  Rng rng(5);
  auto schema = testutil::longitudinal_schema(
      {testutil::gaussian("a"), testutil::gaussian("b"), FeatureSpec::make("c", Likelihood::categorical, 4)});
  auto dec = DecoderParams::create(schema, 3, 12, 5, rng);
  zero_all(dec.parameters());
  auto out = decode(dec, Tensor::constant(2, 3, {1, 2, 3, -1, 0, 4}));
  REQUIRE(out.size() == 3);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t d = 0; d < 2; ++d) {
      auto g = std::get<GaussianParams>(out[d].row(n));
      CHECK(g.mean == 0.0);
      CHECK(g.variance == doctest::Approx(std::log(2.0)).epsilon(1e-5));
    }
    auto probs = probabilities(out[2].row(n));
    for (double p : probs) CHECK(p == doctest::Approx(0.25));
  }
  CHECK_THROWS_AS(decode(dec, Tensor::zeros(2, 4)), ShapeMismatch);
}

TEST_CASE("decoder slots cover the homogeneous layer") {
  Rng rng(6);
  auto schema = mixed_schema();
  for (std::size_t slot : {1u, 3u, 5u}) {
    auto dec = DecoderParams::create(schema, 2, 8, slot, rng);
    std::size_t total = 0;
    for (const auto& h : dec.heads) total += h.slot;
    CHECK(total == dec.homogeneous_width());
    CHECK(homogeneous_layer(dec, Tensor::zeros(4, 2)).cols() == total);
  }
  auto dec = DecoderParams::create(schema, 2, 8, 5, rng);
  auto out = decode(dec, Tensor::constant(2, 2, {0.3, -0.4, 0.3, -0.4}));
  for (const auto& bp : out) {
    auto a = bp.row(0), b = bp.row(1);
    CHECK(point_estimate(a) == point_estimate(b));
    CHECK(log_prob(1, a) == log_prob(1, b));
  }
}

TEST_CASE("end-to-end masked log-likelihood gradient") {
  Rng rng(7);
  auto t = five_rows();
  auto stats = fit_normalization(t);
  auto enc = EncoderParams::create(encoded_width(t.schema()), 6, 2, rng);
  auto dec = DecoderParams::create(t.schema(), 2, 6, 3, rng);
  for (auto p : dec.parameters())
    for (auto& v : p.mutable_values()) v += 0.1 * rng.normal();
  Tensor noise = standard_normal(t.rows(), 2, rng);

  auto params = enc.parameters();
  auto dp = dec.parameters();
  params.insert(params.end(), dp.begin(), dp.end());
  auto grads = ad::backward(masked_loglik(enc, dec, t, stats, noise));
  double worst = 0;
  for (auto p : params) {
    std::vector<double> x(p.values().begin(), p.values().end());
    auto numeric = testutil::central_diff(
        [&](const std::vector<double>& v) {
          std::copy(v.begin(), v.end(), p.mutable_values().begin());
          double r = masked_loglik(enc, dec, t, stats, noise).item();
          std::copy(x.begin(), x.end(), p.mutable_values().begin());
          return r;
        },
        x);
    worst = std::max(worst, testutil::max_rel_err(grads.of(p), numeric));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("masked cells influence nothing") {
  Rng rng(8);
  auto t = five_rows();
  auto stats = fit_normalization(t);
  auto enc = EncoderParams::create(encoded_width(t.schema()), 6, 2, rng);
  auto dec = DecoderParams::create(t.schema(), 2, 6, 3, rng);
  Tensor noise = standard_normal(t.rows(), 2, rng);

  // overwrite the raw value behind every masked cell
  auto values = t.values();
  for (std::size_t k = 0; k < values.size(); ++k)
    if (!t.mask()[k]) values[k] = 12345.0;
  DatasetTable u(t.schema(), t.covariates(), values, t.mask());
  auto a = encode_inputs(t, stats), b = encode_inputs(u, stats);
  CHECK(a.data == b.data);
  CHECK(masked_loglik(enc, dec, t, stats, noise).item() == masked_loglik(enc, dec, u, stats, noise).item());
}
