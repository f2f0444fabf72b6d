#pragma once

// Heterogeneous likelihood layer. Each feature owns a head that maps its slot
// of the homogeneous layer to likelihood parameters through link functions.

#include <cstddef>
#include <variant>
#include <vector>

#include "hlvae/data.hpp"
#include "hlvae/rng.hpp"
#include "hlvae/tensor.hpp"

namespace hlvae {

struct GaussianParams {
  double mean;
  double variance;
};
struct LogNormalParams {
  double mu;
  double variance;
};
struct PoissonParams {
  double rate;
};
// R log-probabilities up to a shared constant; the first is pinned to 0.
struct CategoricalParams {
  std::vector<double> logits;
};
// P(y <= r) = sigmoid(threshold_r - score), thresholds strictly increasing.
struct OrdinalParams {
  double score;
  std::vector<double> thresholds;
};

using LikelihoodParams =
    std::variant<GaussianParams, LogNormalParams, PoissonParams, CategoricalParams, OrdinalParams>;

// log p(y | params). Throws DomainViolation when y is outside the support.
double log_prob(double y, const LikelihoodParams& params);
double sample(const LikelihoodParams& params, Rng& rng);
// Mean for Gaussian / log-normal / Poisson, mode (lowest index on ties) for
// categorical and ordinal.
double point_estimate(const LikelihoodParams& params);
// Category / level probabilities (categorical and ordinal only).
std::vector<double> probabilities(const LikelihoodParams& params);

// Added to every decoded Gaussian / log-normal variance.
inline constexpr double kVarianceFloor = 1e-6;
// Added to every decoded Poisson rate so that log(rate) stays finite.
inline constexpr double kRateFloor = 1e-8;

// Trainable head for one feature.
struct FeatureHead {
  FeatureSpec spec;
  std::size_t slot = 5;     // s_d
  std::size_t outputs = 0;  // network outputs (W)
  ad::Tensor weight;        // (slot, outputs)
  ad::Tensor bias;          // (1, outputs)
  ad::Tensor free_variance;          // (1, 1), gaussian-free-variance only
  ad::Tensor threshold_increments;   // (1, R-1), ordinal only
  // Fixed output standardization: Gaussian / log-normal means are
  // offset + scale * h and variances scale^2 * v; Poisson rates are
  // softplus(h + offset). Identity by default.
  double offset = 0.0;
  double scale = 1.0;

  static std::size_t output_count(const FeatureSpec& spec);
  // Glorot-uniform weights, zero biases and zero free parameters.
  static FeatureHead create(const FeatureSpec& spec, std::size_t slot, Rng& rng);
  // Sets offset/scale from training statistics.
  void calibrate(const FeatureStats& stats);

  std::vector<ad::Tensor> parameters() const;
};

// Decoded parameters for a batch of rows of one feature.
struct BatchParams {
  Likelihood kind;
  ad::Tensor first;   // mean / mu / rate / logits (N, R) / score
  ad::Tensor second;  // variance (N, 1) or ordinal thresholds (1, R-1)
  ad::Tensor increments;  // ordinal threshold gaps (1, R-1)

  std::size_t rows() const { return first.rows(); }
  LikelihoodParams row(std::size_t n) const;
};

// Applies h_wd and the link functions to a (N, slot) block of the
// homogeneous layer.
BatchParams decode_head(const ad::Tensor& slot_block, const FeatureHead& head);
// Single-row convenience.
LikelihoodParams decode_head_row(std::span<const double> slot, const FeatureHead& head);

// Differentiable per-row log-likelihood (N, 1). Cells with observed == 0
// contribute exactly 0 and no gradient; their values are never read.
ad::Tensor log_prob_column(const BatchParams& params, std::span<const double> y,
                           std::span<const std::uint8_t> observed);

}  // namespace hlvae
