#pragma once

// Additive multi-output GP prior over the latent dimensions.
//
// The kernel structure is written as a sum of terms, each a product of
// factors, e.g. "se(age) + ca(id)*se(age) + ca(sex)*se(age)". Every latent
// dimension shares the structure but owns its hyperparameters.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hlvae/data.hpp"
#include "hlvae/rng.hpp"
#include "hlvae/tensor.hpp"

namespace hlvae {

enum class FactorKind { squared_exponential, categorical };

struct KernelFactor {
  FactorKind kind;
  std::string covariate;
  std::size_t index = 0;  // column in the covariate matrix
};

// One additive term. A single factor is a plain SE / categorical component;
// several factors form an interaction with one shared magnitude.
struct KernelTerm {
  std::vector<KernelFactor> factors;

  bool is_interaction() const { return factors.size() > 1; }
  bool uses(std::size_t covariate) const;
  std::size_t lengthscale_count() const;
  std::string to_string() const;
};

struct KernelStructure {
  std::vector<KernelTerm> terms;
  // Term flagged as the individual-specific random component, if any: the
  // first interaction that contains a categorical factor on the instance id.
  std::optional<std::size_t> individual;

  // Throws ParseError naming the offending token, UnknownCovariate for names
  // absent from the schema.
  static KernelStructure parse(const std::string& text, const Schema& schema);
  std::string to_string() const;
  // Whether any term besides the individual one exists (K^(A) != 0).
  bool has_shared() const { return terms.size() > (individual ? 1u : 0u); }
  // Covariates used by the non-individual terms.
  std::vector<std::size_t> shared_covariates() const;
};

// Hyperparameters of one term for one latent dimension.
struct KernelComponent {
  KernelTerm term;
  ad::Tensor log_magnitude;     // (1, 1)
  ad::Tensor log_lengthscales;  // (1, #se factors); undefined when there are none
};

inline constexpr double kLatentNoiseFloor = 1e-4;

struct LatentKernel {
  std::vector<KernelComponent> components;
  ad::Tensor raw_noise;  // sigma_z^2 = 1e-4 + exp(raw_noise)

  ad::Tensor noise_variance() const;
  double noise_variance_value() const;
  std::vector<ad::Tensor> parameters() const;
};

struct AdditiveGPConfig {
  KernelStructure structure;
  std::vector<LatentKernel> dims;

  std::size_t latent_dim() const { return dims.size(); }
  bool has_individual() const { return structure.individual.has_value(); }

  // log-lengthscale = log(span / 2) from the training covariates,
  // log-magnitude = log(1 / #terms).
  static AdditiveGPConfig create(const KernelStructure& structure, std::size_t latent_dim,
                                 const DatasetTable& train, double initial_noise = 0.1);
  std::vector<ad::Tensor> parameters() const;
};

// Covariate matrix of a table as a constant (N, Q) tensor.
ad::Tensor covariate_tensor(const DatasetTable& table);

// K(X_rows, X_cols) for one component. Categorical factors compare values
// and pass no gradient; squared-exponential factors are differentiable in
// both the hyperparameters and the inputs (trainable inducing points).
ad::Tensor kernel_matrix(const KernelComponent& c, const ad::Tensor& rows, const ad::Tensor& cols);

// Sum of the selected components (all when `include_individual`).
ad::Tensor additive_kernel(const AdditiveGPConfig& config, std::size_t l, const ad::Tensor& rows,
                           const ad::Tensor& cols, bool include_individual = true);
// k(x, x) for every row: the sum of component magnitudes.
double prior_variance(const AdditiveGPConfig& config, std::size_t l);

// Sigma_l = sum_r K^(r,l) + sigma_zl^2 I.
ad::Tensor prior_covariance(const AdditiveGPConfig& config, const ad::Tensor& X, std::size_t l);

struct CovarianceSplit {
  ad::Tensor low_rank_part;  // K^(A): non-individual components
  ad::Tensor block_part;     // Sigma-hat: block-diag(K^(R)_pp + sigma_z^2 I)
};

// Rows of X must be grouped by instance (NotSorted otherwise).
CovarianceSplit split_covariance(const AdditiveGPConfig& config, const ad::Tensor& X, std::size_t l,
                                 std::size_t id_column);
// Sigma-hat_p for one instance's rows.
ad::Tensor individual_block(const AdditiveGPConfig& config, const ad::Tensor& X_p, std::size_t l);

}  // namespace hlvae
