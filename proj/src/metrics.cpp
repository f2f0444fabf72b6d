#include "hlvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hlvae/error.hpp"

namespace hlvae {

std::string to_string(MetricGroup g) {
  switch (g) {
    case MetricGroup::real: return "real";
    case MetricGroup::count: return "count";
    case MetricGroup::categorical: return "categorical";
    case MetricGroup::ordinal: return "ordinal";
  }
  return "real";
}

MetricGroup group_of(Likelihood l) {
  switch (l) {
    case Likelihood::poisson: return MetricGroup::count;
    case Likelihood::categorical: return MetricGroup::categorical;
    case Likelihood::ordinal: return MetricGroup::ordinal;
    default: return MetricGroup::real;
  }
}

namespace {

void check(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ShapeMismatch("prediction and truth lengths differ");
  if (truth.empty()) throw EmptyHoldout("no held-out cells to score");
}

}  // namespace

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check(pred, truth);
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double nrmse(std::span<const double> pred, std::span<const double> truth, double lo, double hi, bool* fell_back) {
  double r = rmse(pred, truth);
  bool flat = !(hi > lo);
  if (fell_back) *fell_back = flat;
  return flat ? r : r / (hi - lo);
}

double accuracy_error(std::span<const double> pred, std::span<const double> truth) {
  check(pred, truth);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != truth[i];
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

double displacement_error(std::span<const double> pred, std::span<const double> truth, int levels) {
  check(pred, truth);
  if (levels < 2) throw DomainViolation("displacement error needs at least two levels");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size()) / static_cast<double>(levels - 1);
}

// ---------------------------------------------------------------------------

const MetricRow* MetricReport::find(const std::string& scope, const std::string& metric) const {
  for (const auto& r : rows)
    if (r.scope == scope && r.metric == metric) return &r;
  return nullptr;
}

void MetricReport::append(const MetricReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
}

std::string MetricReport::csv() const {
  std::string out = "scope,metric,value,cells\n";
  for (const auto& r : rows)
    out += r.scope + "," + r.metric + "," + format_double(r.value) + "," + std::to_string(r.cells) + "\n";
  return out;
}

std::string MetricReport::table() const {
  std::size_t w0 = 5, w1 = 6;
  for (const auto& r : rows) w0 = std::max(w0, r.scope.size()), w1 = std::max(w1, r.metric.size());
  auto pad = [](std::string s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  std::string out = pad("scope", w0) + "  " + pad("metric", w1) + "  " + pad("value", 12) + "  cells\n";
  out += std::string(w0 + w1 + 25, '-') + "\n";
  for (const auto& r : rows) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", r.value);
    out += pad(r.scope, w0) + "  " + pad(r.metric, w1) + "  " + pad(buf, 12) + "  " + std::to_string(r.cells) + "\n";
  }
  for (const auto& w : warnings) out += "warning: " + w + "\n";
  return out;
}

MetricReport predictive_nll_report(const std::vector<CellNll>& cells, const Schema& schema) {
  std::map<MetricGroup, std::pair<double, std::size_t>> groups;
  double total = 0;
  for (const auto& c : cells) {
    if (c.feature >= schema.num_features()) throw SchemaMismatch("NLL cell refers to an unknown feature");
    auto& g = groups[group_of(schema.features[c.feature].likelihood)];
    g.first += c.nll;
    ++g.second;
    total += c.nll;
  }
  MetricReport rep;
  for (const auto& [g, acc] : groups) {
    rep.rows.push_back({to_string(g), "nll", acc.first / static_cast<double>(acc.second), acc.second});
  }
  if (!cells.empty()) rep.rows.push_back({"overall", "nll", total / static_cast<double>(cells.size()), cells.size()});
  return rep;
}

MetricReport error_report(const DatasetTable& predicted, const std::vector<HeldOutCell>& truth,
                          const NormalizationStats& train_stats, const Schema* truth_schema) {
  const Schema& schema = truth_schema ? *truth_schema : predicted.schema();
  if (schema.num_features() != predicted.num_features()) {
    throw SchemaMismatch("truth schema has a different number of features");
  }
  if (train_stats.features.size() != schema.num_features()) {
    throw SchemaMismatch("training statistics do not match the schema");
  }
  if (truth.empty()) throw EmptyHoldout("no held-out cells to score");
  const std::size_t D = schema.num_features();
  std::vector<std::vector<double>> pred(D), obs(D);
  for (const auto& c : truth) {
    if (c.row >= predicted.rows() || c.feature >= D) throw SchemaMismatch("held-out cell outside the table");
    const auto& f = schema.features[c.feature];
    double p = predicted.value(c.row, c.feature);
    if (!predicted.observed(c.row, c.feature)) p = std::nan("");
    if (f.likelihood == Likelihood::categorical || f.likelihood == Likelihood::ordinal) {
      p = std::clamp(std::round(p), 0.0, static_cast<double>(f.cardinality - 1));
    }
    pred[c.feature].push_back(p);
    obs[c.feature].push_back(c.value);
  }

  MetricReport rep;
  std::map<MetricGroup, std::pair<double, std::size_t>> groups;
  for (std::size_t d = 0; d < D; ++d) {
    if (obs[d].empty()) continue;
    const auto& f = schema.features[d];
    const MetricGroup g = group_of(f.likelihood);
    MetricRow row{f.name, "", 0, obs[d].size()};
    switch (g) {
      case MetricGroup::real:
      case MetricGroup::count: {
        bool flat = false;
        const auto& s = train_stats.features[d];
        row.value = nrmse(pred[d], obs[d], s.raw_min, s.raw_max, &flat);
        row.metric = flat ? "rmse" : "nrmse";
        if (flat) rep.warnings.push_back("feature '" + f.name + "' has a constant training range; reporting RMSE");
        break;
      }
      case MetricGroup::categorical:
        row.metric = "accuracy_error";
        row.value = accuracy_error(pred[d], obs[d]);
        break;
      case MetricGroup::ordinal:
        row.metric = "displacement_error";
        row.value = displacement_error(pred[d], obs[d], f.cardinality);
        break;
    }
    rep.rows.push_back(row);
    auto& acc = groups[g];
    acc.first += row.value * static_cast<double>(row.cells);
    acc.second += row.cells;
  }
  for (const auto& [g, acc] : groups) {
    const char* metric = g == MetricGroup::categorical ? "accuracy_error"
                         : g == MetricGroup::ordinal   ? "displacement_error"
                                                       : "nrmse";
    rep.rows.push_back({to_string(g), metric, acc.first / static_cast<double>(acc.second), acc.second});
  }
  return rep;
}

}  // namespace hlvae
