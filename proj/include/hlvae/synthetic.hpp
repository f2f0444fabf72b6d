#pragma once

// Synthetic longitudinal tables with a known latent process: a shared GP over
// time, a group-by-time GP and an instance-by-time GP per latent dimension,
// mapped through a fixed random tanh network to each feature's likelihood.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "hlvae/data.hpp"

namespace hlvae {

struct GenConfig {
  std::size_t instances = 40;
  std::size_t visits = 10;
  std::size_t latent_dim = 2;
  double shared_magnitude = 1.0;
  double shared_lengthscale = 3.0;
  double group_magnitude = 0.5;
  double group_lengthscale = 4.0;
  double individual_magnitude = 0.5;
  double individual_lengthscale = 3.0;
  double latent_noise = 0.01;  // variance
  // Standard deviation of Gaussian / log-normal observation noise; 0 makes
  // those features deterministic functions of the latent.
  double observation_noise = 0.1;
  std::size_t decoder_hidden = 8;
  std::vector<FeatureSpec> features;  // empty: a default mixed-type set

  static std::vector<FeatureSpec> default_features();
  Schema schema() const;

  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
};

struct SyntheticData {
  DatasetTable table;           // rows grouped by instance, then time
  std::vector<double> latents;  // (N, L) noiseless-decoder inputs
  GenConfig config;
};

// Covariates: id (instance identifier), time (visit index), group (binary).
SyntheticData generate(const GenConfig& config, std::uint64_t seed);

std::string latents_csv(const SyntheticData& data);

}  // namespace hlvae
