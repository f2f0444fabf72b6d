#pragma once

// GP-conditioned latent predictive, Monte-Carlo predictive distribution over
// features, imputation and future-visit prediction.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hlvae/data.hpp"
#include "hlvae/likelihood.hpp"
#include "hlvae/model.hpp"

namespace hlvae {

struct PredictiveLatent {
  std::size_t rows = 0;
  std::size_t latent_dim = 0;
  std::vector<double> means;      // (rows, L) row-major
  std::vector<double> variances;  // (rows, L)

  double mean(std::size_t n, std::size_t l) const { return means[n * latent_dim + l]; }
  double variance(std::size_t n, std::size_t l) const { return variances[n * latent_dim + l]; }
};

// Factorizes Sigma_l on the training covariates once; queries are then
// O(N^2) per row and dimension.
class LatentPredictor {
 public:
  explicit LatentPredictor(const Model& model);
  // Encoded training means/variances given explicitly (N, L) row-major.
  LatentPredictor(const Model& model, std::vector<double> train_means, std::vector<double> train_vars);

  // Query covariates (rows, Q) row-major.
  PredictiveLatent predict(const std::vector<double>& covariates, std::size_t rows) const;
  PredictiveLatent predict(const DatasetTable& query) const;

 private:
  void factorize();
  void check_levels(const std::vector<double>& covariates, std::size_t rows) const;

  const Model* model_;
  std::vector<double> means_, vars_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_;
  std::vector<Eigen::VectorXd> alpha_;  // Sigma_l^-1 mu_l
};

PredictiveLatent latent_predict(const DatasetTable& query, const Model& model);

enum class LatentSource { automatic, amortized, gp };
std::string to_string(LatentSource s);
LatentSource parse_latent_source(const std::string& s);

struct PredictOptions {
  std::size_t samples = 50;
  std::uint64_t seed = 0;
  LatentSource source = LatentSource::automatic;
};

// Per-row mixture over latent samples of decoded likelihood parameters.
class PredictiveDistribution {
 public:
  PredictiveDistribution(std::vector<BatchParams> params, std::size_t rows, std::size_t samples);

  std::size_t rows() const { return rows_; }
  std::size_t samples() const { return samples_; }
  std::size_t features() const { return params_.size(); }

  // log (1/S) sum_s p(y | params_s).
  double log_predictive(std::size_t n, std::size_t d, double y) const;
  // Point estimate from the sample-averaged sufficient statistics.
  double point(std::size_t n, std::size_t d) const;
  // Mixture mean and variance (Gaussian, log-normal and Poisson features).
  std::pair<double, double> moments(std::size_t n, std::size_t d) const;
  // log (1/S) sum_s P(k - 1/2 < y < k + 1/2) for a Gaussian feature scored
  // against an integer level k.
  double log_predictive_discretized(std::size_t n, std::size_t d, double k) const;
  // Sample-averaged level probabilities (categorical / ordinal).
  std::vector<double> level_probabilities(std::size_t n, std::size_t d) const;

 private:
  LikelihoodParams at(std::size_t s, std::size_t n, std::size_t d) const;

  std::vector<BatchParams> params_;  // rows ordered (sample, row)
  std::size_t rows_, samples_;
};

struct CellNll {
  std::size_t row;
  std::size_t feature;
  double nll;
};

struct PredictionResult {
  DatasetTable filled;
  std::vector<CellNll> nll;  // every cell observed in the input, (row, feature) order
  PredictiveDistribution distribution;
  std::vector<std::uint8_t> used_gp;  // per row
};

// Missing cells are filled; observed cells are never changed. Rows with any
// observed cell use their amortized posterior (automatic mode), rows with
// none use latent_predict.
PredictionResult impute(const DatasetTable& query, const Model& model, const PredictOptions& options = {});

// Every cell is predicted from the covariates alone (latent_predict); the
// observed cells of `future` are ground truth for the NLL only.
PredictionResult predict_future(const DatasetTable& future, const Model& model,
                                const PredictOptions& options = {});

// Predictive NLL of held-out cells. `truth_schema` gives the true feature
// types; a Gaussian head scored against a discrete feature uses the
// discretized density.
std::vector<CellNll> score_held_out(const PredictionResult& result, const std::vector<HeldOutCell>& truth,
                                    const Schema& truth_schema);

std::string nll_csv(const Schema& schema, const std::vector<CellNll>& cells, const PredictOptions& options);

}  // namespace hlvae
