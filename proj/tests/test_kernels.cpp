#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "hlvae/error.hpp"
#include "hlvae/kernels.hpp"
#include "hlvae/rng.hpp"
#include "test_util.hpp"

using namespace hlvae;
using ad::Tensor;

namespace {

Schema three_covariates() {
  auto s = testutil::longitudinal_schema({testutil::gaussian("y")}, true);
  return s;
}

// Rows (id, time, group).
DatasetTable table_of(const std::vector<std::array<double, 3>>& rows) {
  std::vector<double> cov, val;
  for (const auto& r : rows) {
    cov.insert(cov.end(), r.begin(), r.end());
    val.push_back(0.0);
  }
  return DatasetTable(three_covariates(), cov, val, std::vector<std::uint8_t>(rows.size(), 1));
}

Eigen::MatrixXd dense(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t(r, c);
  return m;
}

void set(Tensor leaf, double v) { leaf.mutable_values()[0] = v; }

AdditiveGPConfig config_for(const std::string& kernel, const DatasetTable& t, std::size_t L = 1) {
  return AdditiveGPConfig::create(KernelStructure::parse(kernel, t.schema()), L, t);
}

DatasetTable random_table(Rng& rng, std::size_t instances, std::size_t visits) {
  std::vector<std::array<double, 3>> rows;
  for (std::size_t p = 0; p < instances; ++p) {
    double g = double(rng.below(2));
    for (std::size_t v = 0; v < visits; ++v) rows.push_back({double(p), 3.0 * rng.uniform() + v, g});
  }
  return table_of(rows);
}

}  // namespace

TEST_CASE("kernel grammar") {
  auto s = three_covariates();
  auto k = KernelStructure::parse("se(time) + ca(id)*se(time) + ca(group)*se(time)", s);
  REQUIRE(k.terms.size() == 3);
  CHECK(k.terms[1].is_interaction());
  CHECK(k.individual == 1u);
  CHECK(k.shared_covariates() == std::vector<std::size_t>{1, 2});
  CHECK(KernelStructure::parse(k.to_string(), s).to_string() == k.to_string());

  CHECK_FALSE(KernelStructure::parse("se(time)+ca(group)*se(time)", s).individual.has_value());
  CHECK_THROWS_AS(KernelStructure::parse("se(time)+*", s), ParseError);
  try {
    KernelStructure::parse("se(time)+*", s);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("'*'") != std::string::npos);
  }
  CHECK_THROWS_AS(KernelStructure::parse("se(age)", s), UnknownCovariate);
  CHECK_THROWS_AS(KernelStructure::parse("rbf(time)", s), ParseError);
  CHECK_THROWS_AS(KernelStructure::parse("se(time", s), ParseError);
  // interaction factors need disjoint covariates
  CHECK_THROWS_AS(KernelStructure::parse("se(time)*se(time)", s), ParseError);
}

TEST_CASE("kernel matrix definitions") {
  auto t = table_of({{3, 1.0, 0}, {3, 2.5, 1}, {5, 1.0, 0}});
  auto gp = config_for("se(time) + ca(id) + ca(id)*se(time)", t);
  auto& comps = gp.dims[0].components;
  set(comps[0].log_magnitude, std::log(2.0));
  set(comps[0].log_lengthscales, std::log(1.5));
  set(comps[1].log_magnitude, std::log(0.7));
  set(comps[2].log_magnitude, std::log(0.4));
  set(comps[2].log_lengthscales, std::log(0.8));
  Tensor X = covariate_tensor(t);

  auto se = dense(kernel_matrix(comps[0], X, X));
  CHECK(se(0, 0) == doctest::Approx(2.0));
  CHECK(se(0, 1) == doctest::Approx(2.0 * std::exp(-1.5 * 1.5 / (2 * 1.5 * 1.5))));
  CHECK(se(0, 2) == doctest::Approx(2.0));

  auto ca = dense(kernel_matrix(comps[1], X, X));
  CHECK(ca(0, 2) == 0.0);
  CHECK(ca(0, 1) == doctest::Approx(0.7));
  CHECK(ca(2, 2) == doctest::Approx(0.7));

  auto inter = dense(kernel_matrix(comps[2], X, X));
  CHECK(inter(0, 1) == doctest::Approx(0.4 * std::exp(-2.25 / (2 * 0.64))));
  CHECK(inter(0, 2) == 0.0);

  // transpose symmetry on distinct row sets
  auto u = table_of({{3, 0.2, 1}, {9, 4.0, 0}});
  Tensor U = covariate_tensor(u);
  for (const auto& c : comps) {
    auto ab = dense(kernel_matrix(c, X, U));
    auto ba = dense(kernel_matrix(c, U, X));
    CHECK((ab - ba.transpose()).norm() == 0.0);
  }
  // missing covariate column
  Tensor narrow = Tensor::constant(1, 1, {3.0});
  CHECK_THROWS_AS(kernel_matrix(comps[0], narrow, narrow), UnknownCovariate);
}

TEST_CASE("SE kernel is stationary") {
  Rng rng(4);
  auto t = random_table(rng, 3, 4);
  auto gp = config_for("se(time)", t);
  Tensor X = covariate_tensor(t);
  std::vector<double> shifted = t.covariates();
  for (std::size_t n = 0; n < t.rows(); ++n) shifted[n * 3 + 1] += 17.25;
  Tensor Xs = Tensor::constant(t.rows(), 3, shifted);
  auto a = dense(kernel_matrix(gp.dims[0].components[0], X, X));
  auto b = dense(kernel_matrix(gp.dims[0].components[0], Xs, Xs));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prior covariance examples") {
  auto one = table_of({{0, 1.0, 0}});
  auto gp = config_for("se(time)", one);
  set(gp.dims[0].components[0].log_magnitude, std::log(1.3));
  auto S = dense(prior_covariance(gp, covariate_tensor(one), 0));
  CHECK(S.rows() == 1);
  CHECK(S(0, 0) == doctest::Approx(1.3 + gp.dims[0].noise_variance_value()));

  Rng rng(1);
  auto t = random_table(rng, 4, 5);
  auto gp2 = config_for("se(time) + ca(id)*se(time) + ca(group)*se(time)", t);
  for (auto& c : gp2.dims[0].components) set(c.log_magnitude, -1000.0);
  auto Z = dense(prior_covariance(gp2, covariate_tensor(t), 0));
  const double s2 = gp2.dims[0].noise_variance_value();
  CHECK((Z - s2 * Eigen::MatrixXd::Identity(20, 20)).norm() == 0.0);
  CHECK(s2 >= kLatentNoiseFloor);
}

TEST_CASE("kernel matrices are symmetric PSD and priors SPD") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto t = random_table(rng, 5, 4);
    auto gp = config_for("se(time) + ca(id)*se(time) + ca(group)*se(time) + ca(group)", t, 2);
    for (auto& d : gp.dims)
      for (auto& c : d.components) {
        set(c.log_magnitude, rng.normal());
        if (c.log_lengthscales.defined()) set(c.log_lengthscales, rng.normal());
      }
    Tensor X = covariate_tensor(t);
    for (std::size_t l = 0; l < 2; ++l) {
      for (const auto& c : gp.dims[l].components) {
        auto K = dense(kernel_matrix(c, X, X));
        CHECK((K - K.transpose()).norm() == 0.0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
        CHECK(es.eigenvalues().minCoeff() >= -1e-9 * es.eigenvalues().maxCoeff());
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense(prior_covariance(gp, X, l)));
      CHECK(es.eigenvalues().minCoeff() > 0);
    }
  }
}

TEST_CASE("split covariance reassembles the prior") {
  Rng rng(8);
  auto t = random_table(rng, 2, 2);
  auto gp = config_for("se(time) + ca(id)*se(time)", t);
  Tensor X = covariate_tensor(t);
  auto split = split_covariance(gp, X, 0, 0);
  auto A = dense(split.low_rank_part), B = dense(split.block_part);
  CHECK((A + B - dense(prior_covariance(gp, X, 0))).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(B(0, 2) == 0.0);
  CHECK(B(1, 3) == 0.0);
  CHECK(B(0, 1) != 0.0);

  auto plain = config_for("se(time) + ca(group)*se(time)", t);
  auto s2 = split_covariance(plain, X, 0, 0);
  const double noise = plain.dims[0].noise_variance_value();
  CHECK((dense(s2.block_part) - noise * Eigen::MatrixXd::Identity(4, 4)).norm() == 0.0);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng r(seed);
    auto tt = random_table(r, 4, 3);
    auto g = config_for("se(time) + ca(id)*se(time) + ca(group)*se(time)", tt, 2);
    Tensor XX = covariate_tensor(tt);
    for (std::size_t l = 0; l < 2; ++l) {
      auto sp = split_covariance(g, XX, l, 0);
      CHECK((dense(sp.low_rank_part) + dense(sp.block_part) - dense(prior_covariance(g, XX, l)))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
    }
  }

  auto interleaved = table_of({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}});
  CHECK_THROWS_AS(split_covariance(gp, covariate_tensor(interleaved), 0, 0), NotSorted);
}

TEST_CASE("hyperparameter initialization") {
  auto t = table_of({{0, 2.0, 0}, {0, 10.0, 1}});
  auto gp = config_for("se(time) + ca(id)*se(time)", t, 3);
  CHECK(gp.latent_dim() == 3);
  for (const auto& d : gp.dims)
    for (const auto& c : d.components) {
      CHECK(std::exp(c.log_magnitude.item()) == doctest::Approx(0.5));
      CHECK(std::exp(c.log_lengthscales.item()) == doctest::Approx(4.0));
    }
  // independent leaves per dimension
  CHECK(gp.dims[0].components[0].log_magnitude.node() != gp.dims[1].components[0].log_magnitude.node());
}

TEST_CASE("kernel gradients match finite differences") {
  Rng rng(5);
  auto t = random_table(rng, 3, 3);
  auto gp = config_for("se(time) + ca(id)*se(time)", t);
  Tensor X = covariate_tensor(t);
  auto params = gp.parameters();
  auto loss = [&]() {
    Tensor S = prior_covariance(gp, X, 0);
    Tensor L = ad::cholesky(S);
    Tensor y = ad::triangular_solve(L, Tensor::full(t.rows(), 1, 1.0), ad::Triangle::lower);
    return ad::log_det_from_cholesky(L) + ad::sum(ad::square(y));
  };
  auto grads = ad::backward(loss());
  for (auto p : params) {
    std::vector<double> x(p.values().begin(), p.values().end());
    auto numeric = testutil::central_diff(
        [&](const std::vector<double>& v) {
          std::copy(v.begin(), v.end(), p.mutable_values().begin());
          double f = loss().item();
          std::copy(x.begin(), x.end(), p.mutable_values().begin());
          return f;
        },
        x);
    CHECK(testutil::max_rel_err(grads.of(p), numeric) < 1e-6);
  }
}
