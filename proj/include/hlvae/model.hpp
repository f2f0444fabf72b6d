#pragma once

// The full model: encoder, decoder with heads, additive GP prior, inducing
// points and q(u) for the mini-batch KL bound, plus the frozen training data
// and normalization statistics needed for prediction.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hlvae/data.hpp"
#include "hlvae/kernels.hpp"
#include "hlvae/networks.hpp"

namespace hlvae {

struct ModelConfig {
  std::string kernel = "se(time) + ca(id)*se(time)";
  std::size_t latent_dim = 8;
  std::size_t hidden_width = 50;
  std::size_t slot_width = 5;
  std::size_t inducing = 32;  // 0 disables the inducing-point machinery
  bool append_mask = false;
  double initial_noise = 0.1;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// M pseudo-inputs in covariate space. Only continuous covariates used by the
// shared kernel terms are trainable; the other columns are fixed.
struct InducingPointSet {
  ad::Tensor points;                          // (M, Q)
  std::vector<std::uint8_t> trainable_column;  // per covariate

  std::size_t size() const { return points.rows(); }
  // Deterministic k-means style selection over the shared covariates; M is
  // capped at the number of distinct configurations.
  static InducingPointSet create(const DatasetTable& train, const KernelStructure& structure,
                                 std::size_t max_points, std::uint64_t seed);
};

// q(u_l) = N(m_l, H_l), stored whitened: u_l = L_l v_l with L_l L_l^T = K_SS
// and q(v_l) = N(mt_l, Ct_l Ct_l^T), Ct_l lower triangular with a
// softplus-positive diagonal. Then m_l = L_l mt_l and H_l = L_l Ct_l Ct_l^T L_l^T.
struct VariationalGaussian {
  std::vector<ad::Tensor> means;        // mt_l, (M, 1) per latent dimension
  std::vector<ad::Tensor> raw_factors;  // (M, M) per latent dimension

  std::size_t latent_dim() const { return means.size(); }
  // Ct_l.
  ad::Tensor factor(std::size_t l) const;
  // Sets raw_factors[l] so that factor(l) equals `chol`.
  void set_factor(std::size_t l, std::span<const double> chol);

  // m_l and H_l in the original coordinates.
  ad::Tensor mean(std::size_t l, const AdditiveGPConfig& gp, const ad::Tensor& points) const;
  ad::Tensor covariance(std::size_t l, const AdditiveGPConfig& gp, const ad::Tensor& points) const;

  // mt = 0, Ct = I: q(u) equals the prior.
  static VariationalGaussian at_prior(std::size_t latent_dim, std::size_t points);
};

class Model {
 public:
  Schema schema;
  NormalizationStats stats;
  ModelConfig config;
  EncoderParams encoder;
  DecoderParams decoder;
  AdditiveGPConfig gp;
  std::optional<InducingPointSet> inducing;
  std::optional<VariationalGaussian> variational;
  DatasetTable training;  // sorted by instance

  static Model create(const DatasetTable& train, const ModelConfig& config, std::uint64_t seed);

  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;
  std::vector<ad::Tensor> parameters() const;

  EncodedMatrix encode_table(const DatasetTable& table) const;

  // Deep copy of all parameter values (fresh leaves).
  Model clone() const;
  void copy_values_from(const Model& other);

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Model load(const std::string& path);
};

inline constexpr int kCheckpointVersion = 1;

}  // namespace hlvae
