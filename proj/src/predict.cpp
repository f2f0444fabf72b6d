#include "hlvae/predict.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hlvae/error.hpp"

namespace hlvae {

using ad::Tensor;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  auto v = t.values();
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = v[i * t.cols() + j];
  return m;
}

double log_mean_exp(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s / static_cast<double>(v.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Latent predictive

LatentPredictor::LatentPredictor(const Model& model) : model_(&model) {
  LatentPosterior q = encode(model.encoder, model.encode_table(model.training));
  means_.assign(q.means.values().begin(), q.means.values().end());
  vars_.assign(q.variances.values().begin(), q.variances.values().end());
  factorize();
}

LatentPredictor::LatentPredictor(const Model& model, std::vector<double> train_means,
                                 std::vector<double> train_vars)
    : model_(&model), means_(std::move(train_means)), vars_(std::move(train_vars)) {
  const std::size_t expected = model.training.rows() * model.config.latent_dim;
  if (means_.size() != expected || vars_.size() != expected) {
    throw ShapeMismatch("training encodings must be (N, L)");
  }
  factorize();
}

void LatentPredictor::factorize() {
  const Model& m = *model_;
  const std::size_t N = m.training.rows(), L = m.gp.latent_dim();
  Tensor X = covariate_tensor(m.training);
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd sigma = to_eigen(prior_covariance(m.gp, X, l).detach());
    Eigen::LLT<Eigen::MatrixXd> llt;
    const double scale = sigma.diagonal().mean();
    double jitter = 0;
    for (;;) {
      Eigen::MatrixXd a = sigma;
      a.diagonal().array() += jitter;
      llt.compute(a);
      if (llt.info() == Eigen::Success) break;
      jitter = jitter == 0 ? ad::kJitterStart * scale : jitter * 10;
      if (jitter > ad::kJitterMax * scale) {
        throw FactorizationFailure("prior covariance of latent dimension " + std::to_string(l) +
                                   " is not positive definite");
      }
    }
    Eigen::VectorXd mu(N);
    for (std::size_t n = 0; n < N; ++n) mu(n) = means_[n * L + l];
    alpha_.push_back(llt.solve(mu));
    chol_.push_back(std::move(llt));
  }
}

void LatentPredictor::check_levels(const std::vector<double>& covariates, std::size_t rows) const {
  const Model& m = *model_;
  const Schema& s = m.schema;
  const std::size_t Q = s.num_covariates();
  for (std::size_t q = 0; q < Q; ++q) {
    if (!s.covariates[q].strict) continue;
    bool used = false;
    for (const auto& t : m.gp.structure.terms)
      for (const auto& f : t.factors) used = used || (f.index == q && f.kind == FactorKind::categorical);
    if (!used) continue;
    std::set<double> seen;
    for (std::size_t n = 0; n < m.training.rows(); ++n) seen.insert(m.training.covariate(n, q));
    for (std::size_t n = 0; n < rows; ++n) {
      if (!seen.count(covariates[n * Q + q])) {
        throw UnknownInstance("level " + format_double(covariates[n * Q + q]) + " of covariate '" +
                              s.covariates[q].name + "' never appears in the training data");
      }
    }
  }
}

PredictiveLatent LatentPredictor::predict(const std::vector<double>& covariates, std::size_t rows) const {
  const Model& m = *model_;
  const std::size_t Q = m.schema.num_covariates(), L = m.gp.latent_dim(), N = m.training.rows();
  if (covariates.size() != rows * Q) throw ShapeMismatch("query covariates must be (rows, Q)");
  for (double v : covariates)
    if (!std::isfinite(v)) throw MissingCovariate("query covariates must be finite");
  check_levels(covariates, rows);

  PredictiveLatent out;
  out.rows = rows;
  out.latent_dim = L;
  out.means.assign(rows * L, 0.0);
  out.variances.assign(rows * L, 0.0);
  if (rows == 0) return out;

  Tensor X = covariate_tensor(m.training);
  Tensor Xs = Tensor::constant(rows, Q, covariates);
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd Kxs = to_eigen(additive_kernel(m.gp, l, X, Xs).detach());  // (N, rows)
    Eigen::VectorXd mean = Kxs.transpose() * alpha_[l];
    Eigen::MatrixXd V = chol_[l].matrixL().solve(Kxs);   // L^-1 K
    Eigen::MatrixXd U = chol_[l].matrixU().solve(V);     // Sigma^-1 K
    Eigen::VectorXd w(N);
    for (std::size_t n = 0; n < N; ++n) w(n) = vars_[n * L + l];
    const double prior = prior_variance(m.gp, l);
    const double noise = m.gp.dims[l].noise_variance_value();
    for (std::size_t r = 0; r < rows; ++r) {
      double reduce = V.col(r).squaredNorm();
      double spread = (U.col(r).array().square() * w.array()).sum();
      double var = std::max(prior - reduce, 0.0) + spread + noise;
      out.means[r * L + l] = mean(r);
      out.variances[r * L + l] = var;
    }
  }
  return out;
}

PredictiveLatent LatentPredictor::predict(const DatasetTable& query) const {
  if (!(query.schema() == model_->schema)) throw SchemaMismatch("query schema differs from the model schema");
  return predict(query.covariates(), query.rows());
}

PredictiveLatent latent_predict(const DatasetTable& query, const Model& model) {
  return LatentPredictor(model).predict(query);
}

// ---------------------------------------------------------------------------
// Predictive distribution

std::string to_string(LatentSource s) {
  switch (s) {
    case LatentSource::automatic: return "auto";
    case LatentSource::amortized: return "amortized";
    case LatentSource::gp: return "gp";
  }
  return "auto";
}

LatentSource parse_latent_source(const std::string& s) {
  if (s == "auto") return LatentSource::automatic;
  if (s == "amortized") return LatentSource::amortized;
  if (s == "gp") return LatentSource::gp;
  throw ParseError("unknown latent source '" + s + "' (expected auto, amortized or gp)");
}

PredictiveDistribution::PredictiveDistribution(std::vector<BatchParams> params, std::size_t rows,
                                               std::size_t samples)
    : params_(std::move(params)), rows_(rows), samples_(samples) {
  for (const auto& p : params_)
    if (p.rows() != rows * samples) throw ShapeMismatch("decoded parameters must hold samples x rows");
}

LikelihoodParams PredictiveDistribution::at(std::size_t s, std::size_t n, std::size_t d) const {
  return params_.at(d).row(s * rows_ + n);
}

double PredictiveDistribution::log_predictive(std::size_t n, std::size_t d, double y) const {
  std::vector<double> lp(samples_);
  for (std::size_t s = 0; s < samples_; ++s) lp[s] = log_prob(y, at(s, n, d));
  return log_mean_exp(lp);
}

double PredictiveDistribution::log_predictive_discretized(std::size_t n, std::size_t d, double k) const {
  std::vector<double> lp(samples_);
  for (std::size_t s = 0; s < samples_; ++s) {
    auto p = at(s, n, d);
    auto* g = std::get_if<GaussianParams>(&p);
    if (!g) throw DomainViolation("discretized scoring needs a Gaussian head");
    const double sd = std::sqrt(g->variance);
    const double hi = (k + 0.5 - g->mean) / sd, lo = (k - 0.5 - g->mean) / sd;
    // mass of [lo, hi] via the tail on the far side of the mean
    double mass = lo > 0 ? 0.5 * (std::erfc(lo / std::sqrt(2.0)) - std::erfc(hi / std::sqrt(2.0)))
                         : 0.5 * (std::erfc(-hi / std::sqrt(2.0)) - std::erfc(-lo / std::sqrt(2.0)));
    lp[s] = std::log(std::max(mass, 1e-300));
  }
  return log_mean_exp(lp);
}

std::vector<double> PredictiveDistribution::level_probabilities(std::size_t n, std::size_t d) const {
  std::vector<double> acc;
  for (std::size_t s = 0; s < samples_; ++s) {
    auto p = probabilities(at(s, n, d));
    if (acc.empty()) acc.assign(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) acc[i] += p[i] / static_cast<double>(samples_);
  }
  return acc;
}

std::pair<double, double> PredictiveDistribution::moments(std::size_t n, std::size_t d) const {
  double m1 = 0, m2 = 0;
  const double S = static_cast<double>(samples_);
  for (std::size_t s = 0; s < samples_; ++s) {
    double mean = 0, var = 0;
    auto p = at(s, n, d);
    if (auto* g = std::get_if<GaussianParams>(&p)) {
      mean = g->mean;
      var = g->variance;
    } else if (auto* ln = std::get_if<LogNormalParams>(&p)) {
      mean = std::exp(ln->mu + 0.5 * ln->variance);
      var = std::expm1(ln->variance) * mean * mean;
    } else if (auto* po = std::get_if<PoissonParams>(&p)) {
      mean = var = po->rate;
    } else {
      auto probs = probabilities(p);
      for (std::size_t i = 0; i < probs.size(); ++i) mean += static_cast<double>(i) * probs[i];
      for (std::size_t i = 0; i < probs.size(); ++i) var += probs[i] * std::pow(static_cast<double>(i) - mean, 2);
    }
    m1 += mean / S;
    m2 += (var + mean * mean) / S;
  }
  return {m1, std::max(m2 - m1 * m1, 0.0)};
}

double PredictiveDistribution::point(std::size_t n, std::size_t d) const {
  switch (params_.at(d).kind) {
    case Likelihood::categorical:
    case Likelihood::ordinal: {
      auto p = level_probabilities(n, d);
      return static_cast<double>(std::max_element(p.begin(), p.end()) - p.begin());
    }
    default: return moments(n, d).first;
  }
}

// ---------------------------------------------------------------------------
// Imputation / prediction

namespace {

PredictionResult run(const DatasetTable& query, const Model& model, const PredictOptions& opt, bool future) {
  if (!(query.schema() == model.schema)) throw SchemaMismatch("query schema differs from the model schema");
  if (opt.samples == 0) throw DomainViolation("at least one latent sample is required");
  const std::size_t N = query.rows(), D = query.num_features(), L = model.config.latent_dim;
  const std::size_t S = opt.samples;

  std::vector<std::uint8_t> use_gp(N, 0);
  for (std::size_t n = 0; n < N; ++n) {
    bool any = false;
    for (std::size_t d = 0; d < D; ++d) any = any || query.observed(n, d);
    use_gp[n] = future || opt.source == LatentSource::gp || (opt.source == LatentSource::automatic && !any);
  }

  std::vector<double> mean(N * L, 0.0), var(N * L, 1.0);
  if (std::find(use_gp.begin(), use_gp.end(), 0) != use_gp.end()) {
    LatentPosterior q = encode(model.encoder, model.encode_table(query));
    for (std::size_t i = 0; i < N * L; ++i) {
      mean[i] = q.means.values()[i];
      var[i] = q.variances.values()[i];
    }
  }
  if (std::find(use_gp.begin(), use_gp.end(), 1) != use_gp.end()) {
    std::vector<std::size_t> idx;
    std::vector<double> cov;
    for (std::size_t n = 0; n < N; ++n) {
      if (!use_gp[n]) continue;
      idx.push_back(n);
      for (std::size_t q = 0; q < query.num_covariates(); ++q) cov.push_back(query.covariate(n, q));
    }
    PredictiveLatent pl = LatentPredictor(model).predict(cov, idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t l = 0; l < L; ++l) {
        mean[idx[i] * L + l] = pl.mean(i, l);
        var[idx[i] * L + l] = pl.variance(i, l);
      }
  }

  Rng rng(opt.seed);
  std::vector<double> z(S * N * L);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t i = 0; i < N * L; ++i) z[s * N * L + i] = mean[i] + std::sqrt(var[i]) * rng.normal();
  auto decoded = decode(model.decoder, Tensor::constant(S * N, L, std::move(z)));
  for (auto& p : decoded) {
    p.first = p.first.detach();
    if (p.second.defined()) p.second = p.second.detach();
    if (p.increments.defined()) p.increments = p.increments.detach();
  }
  PredictiveDistribution dist(std::move(decoded), N, S);

  std::vector<double> values = query.values();
  std::vector<std::uint8_t> mask(N * D, 1);
  std::vector<CellNll> nll;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) {
      if (query.observed(n, d)) nll.push_back({n, d, -dist.log_predictive(n, d, query.value(n, d))});
      if (future || !query.observed(n, d)) {
        double v = dist.point(n, d);
        // counts stay in the support
        if (query.schema().features[d].likelihood == Likelihood::poisson) v = std::round(v);
        values[n * D + d] = v;
      }
    }
  DatasetTable filled(query.schema(), query.covariates(), std::move(values), std::move(mask));
  return {std::move(filled), std::move(nll), std::move(dist), std::move(use_gp)};
}

}  // namespace

PredictionResult impute(const DatasetTable& query, const Model& model, const PredictOptions& options) {
  return run(query, model, options, false);
}

PredictionResult predict_future(const DatasetTable& future, const Model& model, const PredictOptions& options) {
  return run(future, model, options, true);
}

std::vector<CellNll> score_held_out(const PredictionResult& result, const std::vector<HeldOutCell>& truth,
                                    const Schema& truth_schema) {
  const Schema& model_schema = result.filled.schema();
  if (truth_schema.num_features() != model_schema.num_features()) {
    throw SchemaMismatch("truth schema has a different number of features");
  }
  std::vector<CellNll> out;
  for (const auto& c : truth) {
    if (c.row >= result.distribution.rows() || c.feature >= truth_schema.num_features()) {
      throw SchemaMismatch("held-out cell outside the predicted table");
    }
    const bool discrete = is_discrete(truth_schema.features[c.feature].likelihood);
    const bool gaussian_head = is_gaussian(model_schema.features[c.feature].likelihood);
    double lp = discrete && gaussian_head ? result.distribution.log_predictive_discretized(c.row, c.feature, c.value)
                                          : result.distribution.log_predictive(c.row, c.feature, c.value);
    out.push_back({c.row, c.feature, -lp});
  }
  return out;
}

std::string nll_csv(const Schema& schema, const std::vector<CellNll>& cells, const PredictOptions& options) {
  std::string out = "# samples=" + std::to_string(options.samples) + " seed=" + std::to_string(options.seed) +
                    " latent=" + to_string(options.source) + "\n";
  out += "row,feature,nll\n";
  for (const auto& c : cells)
    out += std::to_string(c.row) + "," + schema.features[c.feature].name + "," + format_double(c.nll) + "\n";
  return out;
}

}  // namespace hlvae
