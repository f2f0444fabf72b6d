#pragma once

// ELBO pieces: masked reconstruction, the exact Gaussian KL against the
// additive GP prior, and the inducing-point upper bound on that KL that
// decomposes over instances.

#include <span>
#include <vector>

#include "hlvae/data.hpp"
#include "hlvae/kernels.hpp"
#include "hlvae/model.hpp"
#include "hlvae/networks.hpp"
#include "hlvae/rng.hpp"

namespace hlvae {

enum class KlMode { exact, bound };
std::string to_string(KlMode m);
KlMode parse_kl_mode(const std::string& s);

// Sum of log p(y_nd | params) over observed cells of `batch`.
ad::Tensor reconstruction_term(const DatasetTable& batch, const std::vector<BatchParams>& params);

// sum_l KL(N(mu_l, W_l) || N(0, Sigma_l)).
ad::Tensor exact_kl(const LatentPosterior& q, std::span<const ad::Tensor> sigmas);
// Same with Sigma_l built from the table covariates.
ad::Tensor exact_kl(const LatentPosterior& q, const AdditiveGPConfig& gp, const DatasetTable& table);

// Upper bound on the KL of the full table, estimated from the complete
// instances in `batch` (rows grouped by instance). `q` holds the encoder
// outputs for the batch rows in order; `full` is the complete training table
// (fixes P, N and each instance's row count).
ad::Tensor minibatch_kl_bound(const DatasetTable& batch, const LatentPosterior& q, const AdditiveGPConfig& gp,
                              const InducingPointSet& inducing, const VariationalGaussian& vg,
                              const DatasetTable& full);

struct ElboTerms {
  ad::Tensor objective;     // scaled recon - beta * kl (maximized)
  ad::Tensor reconstruction;  // scaled to the full table
  ad::Tensor kl;
};

// Single-sample estimate on `batch` (complete instances of `full`).
// Exact mode requires batch to be the full table.
ElboTerms elbo(const DatasetTable& batch, const Model& model, KlMode mode, double beta, Rng& rng,
               const DatasetTable& full);

// Mean per-cell NLL of the observed cells of `table`, decoding at the
// amortized posterior mean.
double reconstruction_nll(const Model& model, const DatasetTable& table);

}  // namespace hlvae
