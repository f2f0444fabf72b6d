#pragma once

// Amortized encoder q(z_n | y_n) and decoder g(z_n) -> homogeneous layer ->
// per-feature likelihood heads.

#include <cstddef>
#include <vector>

#include "hlvae/data.hpp"
#include "hlvae/likelihood.hpp"
#include "hlvae/rng.hpp"
#include "hlvae/tensor.hpp"

namespace hlvae {

struct Dense {
  ad::Tensor weight;  // (in, out)
  ad::Tensor bias;    // (1, out)

  static Dense create(std::size_t in, std::size_t out, Rng& rng);
  ad::Tensor operator()(const ad::Tensor& x) const;
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

// Input width -> hidden (ReLU) -> 2L outputs (means, pre-variances).
struct EncoderParams {
  Dense hidden;
  Dense output;

  static EncoderParams create(std::size_t input_width, std::size_t hidden_width, std::size_t latent_dim,
                              Rng& rng);
  std::size_t input_width() const { return hidden.in(); }
  std::size_t latent_dim() const { return output.out() / 2; }
  std::vector<ad::Tensor> parameters() const;
};

// L -> hidden (ReLU) -> homogeneous layer of width sum_d s_d -> heads.
struct DecoderParams {
  Dense hidden;
  Dense output;
  std::vector<FeatureHead> heads;

  static DecoderParams create(const Schema& schema, std::size_t latent_dim, std::size_t hidden_width,
                              std::size_t slot_width, Rng& rng);
  std::size_t homogeneous_width() const { return output.out(); }
  std::vector<ad::Tensor> parameters() const;
};

// Diagonal Gaussian posterior per row.
struct LatentPosterior {
  ad::Tensor means;      // (N, L)
  ad::Tensor variances;  // (N, L), strictly positive

  std::size_t rows() const { return means.rows(); }
  std::size_t latent_dim() const { return means.cols(); }
  LatentPosterior detach() const { return {means.detach(), variances.detach()}; }
};

LatentPosterior encode(const EncoderParams& enc, const ad::Tensor& inputs);
LatentPosterior encode(const EncoderParams& enc, const EncodedMatrix& inputs);

// z = mu + sigma * eps.
ad::Tensor reparameterize(const LatentPosterior& q, const ad::Tensor& noise);
// Standard normal (N, L) draws.
ad::Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng);

// Homogeneous layer A (N, sum s_d).
ad::Tensor homogeneous_layer(const DecoderParams& dec, const ad::Tensor& Z);
// One BatchParams per feature.
std::vector<BatchParams> decode(const DecoderParams& dec, const ad::Tensor& Z);

}  // namespace hlvae
