#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hlvae/elbo.hpp"
#include "hlvae/model.hpp"

namespace hlvae {

struct TrainConfig {
  std::size_t epochs = 100;
  // Instances per mini-batch in bound mode; 0 means all. Exact mode always
  // uses the full table.
  std::size_t batch_instances = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::string optimizer = "adam";
  KlMode kl_mode = KlMode::exact;
  std::uint64_t seed = 0;
  // Linear KL weight ramp length in epochs; negative selects the default
  // (none in exact mode, 10% of the epochs in bound mode).
  int warmup_epochs = -1;
  // Early stopping on validation NLL; 0 disables.
  std::size_t patience = 0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double elbo = 0;   // reconstruction - kl, averaged over the epoch's batches
  double recon = 0;
  double kl = 0;
  double val_nll = 0;  // NaN without a validation table
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;
  std::size_t best_epoch = 0;
};

std::string history_csv(const std::vector<EpochRecord>& history);

class Adam {
 public:
  Adam(std::vector<ad::Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  // Ascent step on the objective whose gradients are given. Parameters
  // missing from `grads` are left alone. `masks` (optional, aligned with the
  // parameter list) zero individual gradient entries.
  void ascend(const ad::Gradients& grads);
  void set_mask(const ad::Tensor& param, std::vector<double> mask);

 private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> m_, v_, mask_;
  std::vector<std::size_t> t_;
  double lr_, b1_, b2_, eps_;
};

using EpochObserver = std::function<void(const EpochRecord&)>;

// Trains `model` in place on model.training. Throws NonFiniteLoss after
// restoring the parameters of the last completed epoch.
TrainHistory train(Model& model, const TrainConfig& config, const DatasetTable* validation = nullptr,
                   const EpochObserver& observer = {});

}  // namespace hlvae
