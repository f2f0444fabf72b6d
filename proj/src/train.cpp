#include "hlvae/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hlvae/error.hpp"

namespace hlvae {

using ad::Tensor;
using nlohmann::json;

json TrainConfig::to_json() const {
  return {{"epochs", epochs},       {"batch_instances", batch_instances}, {"learning_rate", learning_rate},
          {"beta1", beta1},         {"beta2", beta2},                     {"optimizer", optimizer},
          {"kl", to_string(kl_mode)}, {"seed", seed},                     {"warmup_epochs", warmup_epochs},
          {"patience", patience}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_instances = j.value("batch_instances", c.batch_instances);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.optimizer = j.value("optimizer", c.optimizer);
  if (j.contains("kl")) c.kl_mode = parse_kl_mode(j.at("kl").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.patience = j.value("patience", c.patience);
  return c;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,elbo,recon,kl,val_nll\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_double(r.elbo) + "," + format_double(r.recon) + "," +
           format_double(r.kl) + "," + (std::isnan(r.val_nll) ? std::string("nan") : format_double(r.val_nll)) +
           "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    if (!p.is_leaf()) throw Error("optimizer parameters must be leaf tensors");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
    mask_.emplace_back();
    t_.push_back(0);
  }
}

void Adam::set_mask(const Tensor& param, std::vector<double> mask) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].node() == param.node()) {
      if (mask.size() != param.size()) throw ShapeMismatch("mask size does not match the parameter");
      mask_[i] = std::move(mask);
      return;
    }
  }
  throw Error("mask given for an unknown parameter");
}

void Adam::ascend(const ad::Gradients& grads) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!grads.contains(params_[i])) continue;
    std::vector<double> g = grads.of(params_[i]);
    if (!mask_[i].empty())
      for (std::size_t k = 0; k < g.size(); ++k) g[k] *= mask_[i][k];
    ++t_[i];
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_[i]));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_[i]));
    auto x = params_[i].mutable_values();
    for (std::size_t k = 0; k < g.size(); ++k) {
      m_[i][k] = b1_ * m_[i][k] + (1 - b1_) * g[k];
      v_[i][k] = b2_ * v_[i][k] + (1 - b2_) * g[k] * g[k];
      x[k] += lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------

TrainHistory train(Model& model, const TrainConfig& config, const DatasetTable* validation,
                   const EpochObserver& observer) {
  if (config.optimizer != "adam") throw ParseError("unknown optimizer '" + config.optimizer + "'");
  if (config.learning_rate <= 0) throw DomainViolation("learning rate must be positive");
  const DatasetTable& data = model.training;
  const std::size_t P = data.num_instances();
  if (config.batch_instances > P) {
    throw DomainViolation("batch of " + std::to_string(config.batch_instances) + " instances exceeds the " +
                          std::to_string(P) + " training instances");
  }
  if (validation && !(validation->schema() == model.schema)) {
    throw SchemaMismatch("validation schema differs from the training schema");
  }
  if (config.kl_mode == KlMode::bound && (!model.gp.has_individual() || !model.variational)) {
    throw MissingIndividualComponent("bound mode needs a ca(id) interaction term and inducing points");
  }

  const bool exact = config.kl_mode == KlMode::exact;
  const std::size_t batch = exact || config.batch_instances == 0 ? P : config.batch_instances;
  const std::size_t warmup = config.warmup_epochs >= 0 ? static_cast<std::size_t>(config.warmup_epochs)
                             : exact                    ? 0
                                                        : config.epochs / 10;

  Adam adam(model.parameters(), config.learning_rate, config.beta1, config.beta2);
  if (model.inducing) {
    const auto& ip = *model.inducing;
    std::vector<double> mask(ip.points.size());
    for (std::size_t m = 0; m < ip.size(); ++m)
      for (std::size_t q = 0; q < ip.points.cols(); ++q) mask[m * ip.points.cols() + q] = ip.trainable_column[q];
    adam.set_mask(ip.points, std::move(mask));
  }

  Rng rng(config.seed);
  TrainHistory history;
  Model last_good = model.clone();
  Model best = model.clone();
  double best_val = INFINITY;
  std::size_t since_best = 0;

  for (std::size_t e = 0; e < config.epochs; ++e) {
    const double beta = warmup == 0 ? 1.0 : std::min(1.0, static_cast<double>(e + 1) / static_cast<double>(warmup));
    std::vector<std::size_t> order(P);
    std::iota(order.begin(), order.end(), 0);
    if (batch < P) rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = e + 1;
    std::size_t nb = 0;
    try {
      for (std::size_t start = 0; start < P; start += batch) {
        std::vector<std::size_t> rows;
        for (std::size_t i = start; i < std::min(P, start + batch); ++i) {
          const auto& r = data.rows_of(order[i]);
          rows.insert(rows.end(), r.begin(), r.end());
        }
        DatasetTable b = batch == P ? data : data.subset(rows);
        ElboTerms t = elbo(b, model, config.kl_mode, beta, rng, data);
        const double obj = t.objective.item();
        if (!std::isfinite(obj)) throw NonFiniteValue("objective is " + format_double(obj));
        adam.ascend(ad::backward(t.objective));
        rec.recon += t.reconstruction.item();
        rec.kl += t.kl.item();
        ++nb;
      }
      for (const auto& p : model.parameters())
        for (double v : p.values())
          if (!std::isfinite(v)) throw NonFiniteValue("parameter update produced a non-finite value");
    } catch (const NumericalError& err) {
      model.copy_values_from(last_good);
      throw NonFiniteLoss("epoch " + std::to_string(e + 1) + ": " + err.what() +
                          "; parameters restored to the end of epoch " + std::to_string(e));
    }
    rec.recon /= static_cast<double>(nb);
    rec.kl /= static_cast<double>(nb);
    rec.elbo = rec.recon - rec.kl;
    rec.val_nll = validation ? reconstruction_nll(model, *validation) : std::nan("");
    history.epochs.push_back(rec);
    if (observer) observer(rec);
    last_good.copy_values_from(model);

    if (config.patience > 0 && validation && std::isfinite(rec.val_nll)) {
      if (rec.val_nll < best_val) {
        best_val = rec.val_nll;
        history.best_epoch = rec.epoch;
        best.copy_values_from(model);
        since_best = 0;
      } else if (++since_best >= config.patience) {
        model.copy_values_from(best);
        history.stopped_early = true;
        break;
      }
    }
  }
  if (!history.stopped_early && history.best_epoch > 0) model.copy_values_from(best);
  return history;
}

}  // namespace hlvae
