#pragma once

// Held-out evaluation: NRMSE for numerical features, accuracy error for
// categorical ones, normalized displacement for ordinal ones, and
// predictive NLL aggregated by likelihood group.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hlvae/data.hpp"
#include "hlvae/predict.hpp"

namespace hlvae {

enum class MetricGroup { real, count, categorical, ordinal };
std::string to_string(MetricGroup g);
MetricGroup group_of(Likelihood l);

double rmse(std::span<const double> pred, std::span<const double> truth);
// RMSE / (hi - lo); plain RMSE (and *fell_back = true) when hi == lo.
double nrmse(std::span<const double> pred, std::span<const double> truth, double lo, double hi,
             bool* fell_back = nullptr);
double accuracy_error(std::span<const double> pred, std::span<const double> truth);
double displacement_error(std::span<const double> pred, std::span<const double> truth, int levels);

struct MetricRow {
  std::string scope;   // feature name, group name or "overall"
  std::string metric;  // nrmse / rmse / accuracy_error / displacement_error / nll
  double value = 0;
  std::size_t cells = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::vector<std::string> warnings;

  const MetricRow* find(const std::string& scope, const std::string& metric) const;
  void append(const MetricReport& other);
  std::string csv() const;
  std::string table() const;
};

// Mean NLL per likelihood group and overall (weighted by cells).
MetricReport predictive_nll_report(const std::vector<CellNll>& cells, const Schema& schema);

// Error metrics of `predicted` against the held-out cells. Discrete
// predictions are rounded and clamped to the level range before comparison.
// `train_stats` supplies the NRMSE normalizer (observed training range).
// Feature types come from `truth_schema` when given (e.g. scoring a model
// whose heads were all forced Gaussian), otherwise from the table.
MetricReport error_report(const DatasetTable& predicted, const std::vector<HeldOutCell>& truth,
                          const NormalizationStats& train_stats, const Schema* truth_schema = nullptr);

}  // namespace hlvae
