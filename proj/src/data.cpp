#include "hlvae/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "hlvae/error.hpp"
#include "hlvae/rng.hpp"

namespace hlvae {

using nlohmann::json;

// ---------------------------------------------------------------------------
// enum names

namespace {

template <class E>
struct Names;

template <>
struct Names<Likelihood> {
  static constexpr std::pair<Likelihood, const char*> table[] = {
      {Likelihood::gaussian, "gaussian"},
      {Likelihood::gaussian_free_variance, "gaussian-free-variance"},
      {Likelihood::lognormal, "lognormal"},
      {Likelihood::poisson, "poisson"},
      {Likelihood::categorical, "categorical"},
      {Likelihood::ordinal, "ordinal"}};
};

template <>
struct Names<EncoderTransform> {
  static constexpr std::pair<EncoderTransform, const char*> table[] = {
      {EncoderTransform::standardize, "standardize"},
      {EncoderTransform::log_standardize, "log-standardize"},
      {EncoderTransform::log1p_standardize, "log1p-standardize"},
      {EncoderTransform::one_hot, "one-hot"},
      {EncoderTransform::thermometer, "thermometer"}};
};

template <>
struct Names<CovariateKind> {
  static constexpr std::pair<CovariateKind, const char*> table[] = {
      {CovariateKind::continuous, "continuous"},
      {CovariateKind::categorical, "categorical"},
      {CovariateKind::binary, "binary"}};
};

template <class E>
std::string name_of(E e) {
  for (auto [v, n] : Names<E>::table)
    if (v == e) return n;
  return "?";
}

template <class E>
E parse_name(const std::string& s, const char* what) {
  for (auto [v, n] : Names<E>::table)
    if (s == n) return v;
  throw SchemaMismatch(std::string("unknown ") + what + " '" + s + "'");
}

bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

}  // namespace

std::string to_string(Likelihood l) { return name_of(l); }
std::string to_string(EncoderTransform t) { return name_of(t); }
std::string to_string(CovariateKind k) { return name_of(k); }
Likelihood parse_likelihood(const std::string& s) { return parse_name<Likelihood>(s, "likelihood"); }
EncoderTransform parse_transform(const std::string& s) {
  return parse_name<EncoderTransform>(s, "encoder transform");
}
CovariateKind parse_covariate_kind(const std::string& s) {
  return parse_name<CovariateKind>(s, "covariate kind");
}

EncoderTransform default_transform(Likelihood l) {
  switch (l) {
    case Likelihood::gaussian:
    case Likelihood::gaussian_free_variance: return EncoderTransform::standardize;
    case Likelihood::lognormal: return EncoderTransform::log_standardize;
    case Likelihood::poisson: return EncoderTransform::log1p_standardize;
    case Likelihood::categorical: return EncoderTransform::one_hot;
    case Likelihood::ordinal: return EncoderTransform::thermometer;
  }
  return EncoderTransform::standardize;
}

bool is_discrete(Likelihood l) {
  return l == Likelihood::poisson || l == Likelihood::categorical || l == Likelihood::ordinal;
}

bool is_gaussian(Likelihood l) {
  return l == Likelihood::gaussian || l == Likelihood::gaussian_free_variance;
}

// ---------------------------------------------------------------------------
// FeatureSpec / Schema

FeatureSpec FeatureSpec::make(std::string name, Likelihood l, int cardinality) {
  FeatureSpec f;
  f.name = std::move(name);
  f.likelihood = l;
  f.cardinality = cardinality;
  f.transform = default_transform(l);
  f.validate();
  return f;
}

std::size_t FeatureSpec::encoded_width() const {
  switch (transform) {
    case EncoderTransform::one_hot: return static_cast<std::size_t>(cardinality);
    case EncoderTransform::thermometer: return static_cast<std::size_t>(cardinality - 1);
    default: return 1;
  }
}

void FeatureSpec::validate() const {
  const bool nominal = likelihood == Likelihood::categorical || likelihood == Likelihood::ordinal;
  if (nominal && cardinality < 2) {
    throw SchemaMismatch("feature '" + name + "' needs cardinality >= 2");
  }
  if (!nominal && cardinality != 0) {
    throw SchemaMismatch("feature '" + name + "' is " + to_string(likelihood) +
                         " and must not carry a cardinality");
  }
  if ((transform == EncoderTransform::one_hot) != (likelihood == Likelihood::categorical)) {
    throw SchemaMismatch("feature '" + name + "': one-hot encoding is reserved for categorical features");
  }
  if ((transform == EncoderTransform::thermometer) != (likelihood == Likelihood::ordinal)) {
    throw SchemaMismatch("feature '" + name + "': thermometer encoding is reserved for ordinal features");
  }
  if (unit_interval && !is_gaussian(likelihood)) {
    throw SchemaMismatch("feature '" + name + "': unit_interval applies to gaussian features only");
  }
}

std::size_t Schema::id_index() const {
  for (std::size_t q = 0; q < covariates.size(); ++q)
    if (covariates[q].is_instance_id) return q;
  throw SchemaMismatch("schema has no instance-id covariate");
}

std::size_t Schema::time_index() const {
  for (std::size_t q = 0; q < covariates.size(); ++q)
    if (covariates[q].is_time_axis) return q;
  throw SchemaMismatch("schema has no time-axis covariate");
}

std::optional<std::size_t> Schema::covariate_index(const std::string& name) const {
  for (std::size_t q = 0; q < covariates.size(); ++q)
    if (covariates[q].name == name) return q;
  return std::nullopt;
}

std::optional<std::size_t> Schema::feature_index(const std::string& name) const {
  for (std::size_t d = 0; d < features.size(); ++d)
    if (features[d].name == name) return d;
  return std::nullopt;
}

void Schema::validate() const {
  std::set<std::string> names;
  for (const auto& f : features) {
    f.validate();
    if (!names.insert(f.name).second) throw SchemaMismatch("duplicate column '" + f.name + "'");
  }
  int ids = 0, times = 0;
  for (const auto& c : covariates) {
    if (!names.insert(c.name).second) throw SchemaMismatch("duplicate column '" + c.name + "'");
    ids += c.is_instance_id;
    times += c.is_time_axis;
  }
  if (ids != 1) throw SchemaMismatch("exactly one covariate must be the instance id");
  if (times != 1) throw SchemaMismatch("exactly one covariate must be the time axis");
  if (features.empty()) throw SchemaMismatch("schema has no features");
}

Schema Schema::all_gaussian() const {
  Schema s = *this;
  for (auto& f : s.features) {
    f.likelihood = Likelihood::gaussian;
    f.cardinality = 0;
    f.transform = EncoderTransform::standardize;
    f.unit_interval = false;
  }
  return s;
}

json Schema::to_json() const {
  json j;
  j["features"] = json::array();
  for (const auto& f : features) {
    json e = {{"name", f.name}, {"likelihood", to_string(f.likelihood)}};
    if (f.cardinality > 0) e["cardinality"] = f.cardinality;
    if (f.transform != default_transform(f.likelihood)) e["transform"] = to_string(f.transform);
    if (f.unit_interval) e["unit_interval"] = true;
    j["features"].push_back(e);
  }
  j["covariates"] = json::array();
  for (const auto& c : covariates) {
    json e = {{"name", c.name}, {"kind", to_string(c.kind)}};
    if (c.is_instance_id) e["id"] = true;
    if (c.is_time_axis) e["time"] = true;
    if (c.strict) e["strict"] = true;
    j["covariates"].push_back(e);
  }
  return j;
}

Schema Schema::from_json(const json& j) {
  Schema s;
  try {
    for (const auto& e : j.at("features")) {
      FeatureSpec f;
      f.name = e.at("name").get<std::string>();
      f.likelihood = parse_likelihood(e.at("likelihood").get<std::string>());
      f.cardinality = e.value("cardinality", 0);
      f.transform = e.contains("transform") ? parse_transform(e["transform"].get<std::string>())
                                            : default_transform(f.likelihood);
      f.unit_interval = e.value("unit_interval", false);
      s.features.push_back(f);
    }
    for (const auto& e : j.at("covariates")) {
      CovariateSpec c;
      c.name = e.at("name").get<std::string>();
      c.kind = parse_covariate_kind(e.value("kind", std::string("continuous")));
      c.is_instance_id = e.value("id", false);
      c.is_time_axis = e.value("time", false);
      c.strict = e.value("strict", false);
      s.covariates.push_back(c);
    }
  } catch (const json::exception& ex) {
    throw SchemaMismatch(std::string("malformed schema: ") + ex.what());
  }
  s.validate();
  return s;
}

Schema Schema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaMismatch("cannot open schema file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw SchemaMismatch("schema file " + path + " is not valid JSON: " + ex.what());
  }
  return from_json(j);
}

void Schema::save(const std::string& path) const {
  std::ofstream out(path);
  out << to_json().dump(2) << "\n";
}

bool Schema::operator==(const Schema& o) const { return to_json() == o.to_json(); }

// ---------------------------------------------------------------------------
// DatasetTable

namespace {

void check_cell(const FeatureSpec& f, double y, std::size_t row) {
  auto fail = [&](const std::string& why) {
    throw DomainViolation("row " + std::to_string(row) + ", feature '" + f.name + "': " + why);
  };
  if (!std::isfinite(y)) fail("non-finite value");
  switch (f.likelihood) {
    case Likelihood::gaussian:
    case Likelihood::gaussian_free_variance:
      if (f.unit_interval && (y < 0 || y > 1)) fail("value outside [0, 1]");
      break;
    case Likelihood::lognormal:
      if (!(y > 0)) fail("log-normal value must be > 0");
      break;
    case Likelihood::poisson:
      if (y < 0 || !is_integer(y)) fail("count must be a non-negative integer");
      break;
    case Likelihood::categorical:
    case Likelihood::ordinal:
      if (!is_integer(y) || y < 0 || y >= f.cardinality) {
        fail("level " + format_double(y) + " outside {0.." + std::to_string(f.cardinality - 1) + "}");
      }
      break;
  }
}

}  // namespace

DatasetTable::DatasetTable(Schema schema, std::vector<double> covariates, std::vector<double> values,
                           std::vector<std::uint8_t> observed)
    : schema_(std::move(schema)),
      covariates_(std::move(covariates)),
      values_(std::move(values)),
      observed_(std::move(observed)) {
  const std::size_t D = schema_.num_features();
  const std::size_t Q = schema_.num_covariates();
  rows_ = D ? values_.size() / D : 0;
  if (values_.size() != rows_ * D || observed_.size() != rows_ * D || covariates_.size() != rows_ * Q) {
    throw ShapeMismatch("table arrays disagree on the number of rows");
  }
  for (std::size_t n = 0; n < rows_; ++n) {
    for (std::size_t q = 0; q < Q; ++q) {
      double x = covariates_[n * Q + q];
      if (!std::isfinite(x)) throw MissingCovariate("row " + std::to_string(n) + ", covariate '" +
                                                    schema_.covariates[q].name + "'");
      if (schema_.covariates[q].kind == CovariateKind::binary && x != 0 && x != 1) {
        throw DomainViolation("row " + std::to_string(n) + ", binary covariate '" +
                              schema_.covariates[q].name + "' must be 0 or 1");
      }
    }
    for (std::size_t d = 0; d < D; ++d) {
      if (observed_[n * D + d]) check_cell(schema_.features[d], values_[n * D + d], n);
      else values_[n * D + d] = 0.0;
    }
  }
  index_instances();
}

void DatasetTable::index_instances() {
  instance_.assign(rows_, 0);
  instance_ids_.clear();
  instance_rows_.clear();
  std::map<double, std::size_t> seen;
  const std::size_t id = schema_.id_index();
  for (std::size_t n = 0; n < rows_; ++n) {
    double v = covariate(n, id);
    auto [it, inserted] = seen.emplace(v, instance_ids_.size());
    if (inserted) {
      instance_ids_.push_back(v);
      instance_rows_.emplace_back();
    }
    instance_[n] = it->second;
    instance_rows_[it->second].push_back(n);
  }
}

std::size_t DatasetTable::observed_count() const {
  return static_cast<std::size_t>(std::count(observed_.begin(), observed_.end(), std::uint8_t{1}));
}

DatasetTable DatasetTable::subset(const std::vector<std::size_t>& rows) const {
  const std::size_t D = num_features(), Q = num_covariates();
  std::vector<double> cov, val;
  std::vector<std::uint8_t> obs;
  cov.reserve(rows.size() * Q);
  val.reserve(rows.size() * D);
  obs.reserve(rows.size() * D);
  for (std::size_t n : rows) {
    cov.insert(cov.end(), covariates_.begin() + n * Q, covariates_.begin() + (n + 1) * Q);
    val.insert(val.end(), values_.begin() + n * D, values_.begin() + (n + 1) * D);
    obs.insert(obs.end(), observed_.begin() + n * D, observed_.begin() + (n + 1) * D);
  }
  return DatasetTable(schema_, std::move(cov), std::move(val), std::move(obs));
}

DatasetTable DatasetTable::sorted_by_instance() const {
  std::vector<std::size_t> order(rows_);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t id = schema_.id_index(), t = schema_.time_index();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (covariate(a, id) != covariate(b, id)) return covariate(a, id) < covariate(b, id);
    return covariate(a, t) < covariate(b, t);
  });
  return subset(order);
}

bool DatasetTable::is_sorted_by_instance() const {
  // Instances numbered by first appearance: contiguous blocks iff every row's
  // instance is either the previous one or the next new one.
  for (std::size_t n = 1; n < rows_; ++n)
    if (instance_[n] != instance_[n - 1] && instance_[n] != instance_[n - 1] + 1) return false;
  return true;
}

DatasetTable DatasetTable::with_mask(std::vector<std::uint8_t> observed) const {
  if (observed.size() != observed_.size()) throw ShapeMismatch("mask size mismatch");
  return DatasetTable(schema_, covariates_, values_, std::move(observed));
}

DatasetTable DatasetTable::with_schema(Schema schema) const {
  if (schema.num_features() != num_features() || schema.num_covariates() != num_covariates()) {
    throw SchemaMismatch("replacement schema has a different number of columns");
  }
  return DatasetTable(std::move(schema), covariates_, values_, observed_);
}

DatasetTable DatasetTable::concat(const DatasetTable& a, const DatasetTable& b) {
  if (!(a.schema() == b.schema())) throw SchemaMismatch("cannot concatenate tables with different schemas");
  auto cov = a.covariates_;
  cov.insert(cov.end(), b.covariates_.begin(), b.covariates_.end());
  auto val = a.values_;
  val.insert(val.end(), b.values_.begin(), b.values_.end());
  auto obs = a.observed_;
  obs.insert(obs.end(), b.observed_.begin(), b.observed_.end());
  return DatasetTable(a.schema_, std::move(cov), std::move(val), std::move(obs));
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && ws(s.back())) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(s[i])) ++i;
  s = s.substr(i);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_number(const std::string& s, std::size_t line, const std::string& column) {
  double v = 0;
  const char* first = s.data();
  if (!s.empty() && s[0] == '+') ++first;
  auto res = std::from_chars(first, s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("line " + std::to_string(line) + ", column '" + column + "': cannot parse '" + s + "'");
  }
  return v;
}

}  // namespace

DatasetTable parse_csv(const std::string& text, const Schema& schema) {
  schema.validate();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty()) throw SchemaMismatch("CSV has no header row");
  if (header.size() > 0 && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0] = header[0].substr(3);

  const std::size_t D = schema.num_features(), Q = schema.num_covariates();
  // column -> (is_feature, index)
  std::vector<std::pair<bool, std::size_t>> map;
  std::set<std::string> seen;
  for (const auto& h : header) {
    if (!seen.insert(h).second) throw SchemaMismatch("duplicate column '" + h + "' in CSV header");
    if (auto d = schema.feature_index(h)) map.emplace_back(true, *d);
    else if (auto q = schema.covariate_index(h)) map.emplace_back(false, *q);
    else throw SchemaMismatch("unknown column '" + h + "'");
  }
  for (const auto& f : schema.features)
    if (!seen.count(f.name)) throw SchemaMismatch("missing feature column '" + f.name + "'");
  for (const auto& c : schema.covariates)
    if (!seen.count(c.name)) throw SchemaMismatch("missing covariate column '" + c.name + "'");

  std::vector<double> cov, val;
  std::vector<std::uint8_t> obs;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw SchemaMismatch("line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                           " fields, header has " + std::to_string(header.size()));
    }
    cov.resize((row + 1) * Q, 0.0);
    val.resize((row + 1) * D, 0.0);
    obs.resize((row + 1) * D, 0);
    for (std::size_t k = 0; k < fields.size(); ++k) {
      auto [is_feature, idx] = map[k];
      if (is_feature) {
        if (fields[k].empty()) continue;
        val[row * D + idx] = parse_number(fields[k], lineno, header[k]);
        obs[row * D + idx] = 1;
      } else {
        if (fields[k].empty()) {
          throw MissingCovariate("line " + std::to_string(lineno) + ", covariate '" + header[k] + "'");
        }
        cov[row * Q + idx] = parse_number(fields[k], lineno, header[k]);
      }
    }
    ++row;
  }
  return DatasetTable(schema, std::move(cov), std::move(val), std::move(obs));
}

DatasetTable load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaMismatch("cannot open data file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema);
}

std::string to_csv(const DatasetTable& t) {
  const Schema& s = t.schema();
  std::string out;
  bool first = true;
  for (const auto& c : s.covariates) {
    if (!first) out += ',';
    out += c.name;
    first = false;
  }
  for (const auto& f : s.features) {
    out += ',';
    out += f.name;
  }
  out += '\n';
  for (std::size_t n = 0; n < t.rows(); ++n) {
    for (std::size_t q = 0; q < t.num_covariates(); ++q) {
      if (q) out += ',';
      out += format_double(t.covariate(n, q));
    }
    for (std::size_t d = 0; d < t.num_features(); ++d) {
      out += ',';
      if (t.observed(n, d)) out += format_double(t.value(n, d));
    }
    out += '\n';
  }
  return out;
}

void save_csv(const std::string& path, const DatasetTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << to_csv(table);
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

double forward_transform(EncoderTransform t, double y) {
  switch (t) {
    case EncoderTransform::log_standardize: return std::log(y);
    case EncoderTransform::log1p_standardize: return std::log1p(y);
    default: return y;
  }
}

bool standardizing(EncoderTransform t) {
  return t == EncoderTransform::standardize || t == EncoderTransform::log_standardize ||
         t == EncoderTransform::log1p_standardize;
}

}  // namespace

json NormalizationStats::to_json() const {
  json j;
  j["features"] = json::array();
  for (const auto& f : features) {
    j["features"].push_back({{"mean", f.mean},
                             {"std", f.std},
                             {"raw_min", f.raw_min},
                             {"raw_max", f.raw_max},
                             {"raw_mean", f.raw_mean},
                             {"count", f.count}});
  }
  j["degenerate"] = degenerate;
  return j;
}

NormalizationStats NormalizationStats::from_json(const json& j) {
  NormalizationStats s;
  for (const auto& e : j.at("features")) {
    FeatureStats f;
    f.mean = e.at("mean");
    f.std = e.at("std");
    f.raw_min = e.at("raw_min");
    f.raw_max = e.at("raw_max");
    f.raw_mean = e.at("raw_mean");
    f.count = e.at("count");
    s.features.push_back(f);
  }
  s.degenerate = j.value("degenerate", std::vector<std::string>{});
  return s;
}

NormalizationStats fit_normalization(const DatasetTable& train) {
  NormalizationStats stats;
  const auto& schema = train.schema();
  for (std::size_t d = 0; d < train.num_features(); ++d) {
    const auto& f = schema.features[d];
    FeatureStats s;
    double sum = 0, sum_raw = 0;
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t n = 0; n < train.rows(); ++n) {
      if (!train.observed(n, d)) continue;
      double y = train.value(n, d);
      sum += forward_transform(f.transform, y);
      sum_raw += y;
      lo = std::min(lo, y);
      hi = std::max(hi, y);
      ++s.count;
    }
    if (s.count > 0) {
      s.mean = sum / s.count;
      s.raw_mean = sum_raw / s.count;
      s.raw_min = lo;
      s.raw_max = hi;
      double ss = 0;
      for (std::size_t n = 0; n < train.rows(); ++n) {
        if (!train.observed(n, d)) continue;
        double e = forward_transform(f.transform, train.value(n, d)) - s.mean;
        ss += e * e;
      }
      s.std = std::sqrt(ss / s.count);
    }
    if (!standardizing(f.transform)) {
      s.mean = 0.0;
      s.std = 1.0;
    } else if (!(s.std > 0)) {
      stats.degenerate.push_back(f.name);
      s.std = 1.0;
    }
    stats.features.push_back(s);
  }
  return stats;
}

std::size_t encoded_width(const Schema& schema, bool append_mask) {
  std::size_t w = 0;
  for (const auto& f : schema.features) w += f.encoded_width();
  return w + (append_mask ? schema.num_features() : 0);
}

EncodedMatrix encode_inputs(const DatasetTable& table, const NormalizationStats& stats, bool append_mask) {
  const auto& schema = table.schema();
  if (stats.features.size() != schema.num_features()) {
    throw SchemaMismatch("normalization statistics do not match the feature count");
  }
  EncodedMatrix m;
  m.rows = table.rows();
  m.width = encoded_width(schema, append_mask);
  m.data.assign(m.rows * m.width, 0.0);
  m.stats = stats;
  std::size_t off = 0;
  for (const auto& f : schema.features) {
    m.ranges.emplace_back(off, f.encoded_width());
    off += f.encoded_width();
  }
  const std::size_t mask_off = off;
  for (std::size_t n = 0; n < m.rows; ++n) {
    double* row = m.data.data() + n * m.width;
    for (std::size_t d = 0; d < schema.num_features(); ++d) {
      if (append_mask) row[mask_off + d] = table.observed(n, d) ? 1.0 : 0.0;
      if (!table.observed(n, d)) continue;
      const auto& f = schema.features[d];
      const auto& s = stats.features[d];
      const double y = table.value(n, d);
      auto [o, w] = m.ranges[d];
      switch (f.transform) {
        case EncoderTransform::one_hot: row[o + static_cast<std::size_t>(y)] = 1.0; break;
        case EncoderTransform::thermometer:
          for (std::size_t j = 0; j < w; ++j) row[o + j] = y > static_cast<double>(j) ? 1.0 : 0.0;
          break;
        default: row[o] = (forward_transform(f.transform, y) - s.mean) / s.std; break;
      }
    }
  }
  return m;
}

EncodedMatrix encode_inputs(const DatasetTable& table) { return encode_inputs(table, fit_normalization(table)); }

double invert_standardized(const FeatureSpec& f, const FeatureStats& s, double encoded) {
  double t = encoded * s.std + s.mean;
  switch (f.transform) {
    case EncoderTransform::log_standardize: return std::exp(t);
    case EncoderTransform::log1p_standardize: return std::expm1(t);
    case EncoderTransform::standardize: return t;
    default: throw SchemaMismatch("feature '" + f.name + "' is not standardized");
  }
}

// ---------------------------------------------------------------------------
// Splits and holes

LongitudinalSplit split_longitudinal(const DatasetTable& table, SplitFractions fr, std::uint64_t seed,
                                     std::size_t visits_disclosed) {
  if (fr.train < 0 || fr.validation < 0 || fr.test < 0 ||
      std::abs(fr.train + fr.validation + fr.test - 1.0) > 1e-9) {
    throw Error("split fractions must be non-negative and sum to 1");
  }
  const std::size_t P = table.num_instances();
  std::vector<std::size_t> order(P);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  std::size_t n_train = static_cast<std::size_t>(std::llround(fr.train * P));
  std::size_t n_val = static_cast<std::size_t>(std::llround(fr.validation * P));
  n_train = std::min(n_train, P);
  n_val = std::min(n_val, P - n_train);

  // 0 = train, 1 = validation, 2 = test
  std::vector<int> role(P, 2);
  for (std::size_t k = 0; k < P; ++k) role[order[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);

  std::vector<std::uint8_t> disclosed(table.rows(), 0);
  for (std::size_t k = n_train; k < P; ++k) {
    std::size_t p = order[k];
    if (visits_disclosed == 0) continue;
    auto rows = table.rows_of(p);
    if (rows.size() <= visits_disclosed) {
      throw TooFewVisits("instance " + format_double(table.instance_id(p)) + " has " +
                         std::to_string(rows.size()) + " rows, needs more than " +
                         std::to_string(visits_disclosed));
    }
    rng.shuffle(rows);
    for (std::size_t j = 0; j < visits_disclosed; ++j) disclosed[rows[j]] = 1;
  }

  std::vector<std::size_t> tr, va, te, di;
  for (std::size_t n = 0; n < table.rows(); ++n) {
    int r = role[table.instance_of(n)];
    if (r == 0 || disclosed[n]) tr.push_back(n);
    else if (r == 1) va.push_back(n);
    else te.push_back(n);
    if (disclosed[n]) di.push_back(n);
  }
  return {table.subset(tr), table.subset(va), table.subset(te), table.subset(di)};
}

McarResult inject_mcar(const DatasetTable& table, double ratio, std::uint64_t seed) {
  if (!(ratio > 0 && ratio < 1)) throw Error("MCAR ratio must lie in (0, 1)");
  std::vector<std::size_t> cells;
  for (std::size_t k = 0; k < table.mask().size(); ++k)
    if (table.mask()[k]) cells.push_back(k);
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(cells.size()) + 1e-9));
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + rng.below(cells.size() - i);
    std::swap(cells[i], cells[j]);
  }
  std::vector<std::size_t> chosen(cells.begin(), cells.begin() + count);
  std::sort(chosen.begin(), chosen.end());

  auto mask = table.mask();
  McarResult out;
  const std::size_t D = table.num_features();
  for (std::size_t k : chosen) {
    mask[k] = 0;
    out.held_out.push_back({k / D, k % D, table.values()[k]});
  }
  out.table = table.with_mask(std::move(mask));
  return out;
}

void save_held_out(const std::string& path, const Schema& schema, const std::vector<HeldOutCell>& cells) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "row,feature,value\n";
  for (const auto& c : cells) {
    out << c.row << ',' << schema.features.at(c.feature).name << ',' << format_double(c.value) << '\n';
  }
}

std::vector<HeldOutCell> load_held_out(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaMismatch("cannot open held-out cell file " + path);
  std::string line;
  std::getline(in, line);
  if (trim(line) != "row,feature,value") throw SchemaMismatch(path + ": expected header row,feature,value");
  std::vector<HeldOutCell> cells;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split_fields(line);
    if (f.size() != 3) throw ParseError(path + " line " + std::to_string(lineno) + ": expected 3 fields");
    auto d = schema.feature_index(f[1]);
    if (!d) throw SchemaMismatch(path + ": unknown feature '" + f[1] + "'");
    double row = parse_number(f[0], lineno, "row");
    cells.push_back({static_cast<std::size_t>(row), *d, parse_number(f[2], lineno, "value")});
  }
  return cells;
}

}  // namespace hlvae
