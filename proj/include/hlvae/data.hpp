#pragma once

// Heterogeneous longitudinal tables: schema, CSV ingestion, encoder inputs,
// instance-level splits and MCAR hole injection.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace hlvae {

enum class Likelihood { gaussian, gaussian_free_variance, lognormal, poisson, categorical, ordinal };
enum class EncoderTransform { standardize, log_standardize, log1p_standardize, one_hot, thermometer };
enum class CovariateKind { continuous, categorical, binary };

std::string to_string(Likelihood l);
std::string to_string(EncoderTransform t);
std::string to_string(CovariateKind k);
Likelihood parse_likelihood(const std::string& s);
EncoderTransform parse_transform(const std::string& s);
CovariateKind parse_covariate_kind(const std::string& s);

// Encoder transform implied by a likelihood when the schema does not name one.
EncoderTransform default_transform(Likelihood l);
bool is_discrete(Likelihood l);
bool is_gaussian(Likelihood l);

struct FeatureSpec {
  std::string name;
  Likelihood likelihood = Likelihood::gaussian;
  int cardinality = 0;  // categorical / ordinal only
  EncoderTransform transform = EncoderTransform::standardize;
  bool unit_interval = false;  // gaussian only: sigmoid mean link

  static FeatureSpec make(std::string name, Likelihood l, int cardinality = 0);
  // Width of this feature's encoder-input block.
  std::size_t encoded_width() const;
  void validate() const;
};

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::continuous;
  bool is_instance_id = false;
  bool is_time_axis = false;
  // Unseen levels raise UnknownInstance at prediction time instead of
  // falling back to the prior.
  bool strict = false;
};

struct Schema {
  std::vector<FeatureSpec> features;
  std::vector<CovariateSpec> covariates;

  std::size_t num_features() const { return features.size(); }
  std::size_t num_covariates() const { return covariates.size(); }
  std::size_t id_index() const;
  std::size_t time_index() const;
  std::optional<std::size_t> covariate_index(const std::string& name) const;
  std::optional<std::size_t> feature_index(const std::string& name) const;
  void validate() const;

  // Every head replaced by a plain Gaussian (the homogeneous baseline).
  Schema all_gaussian() const;

  nlohmann::json to_json() const;
  static Schema from_json(const nlohmann::json& j);
  static Schema load(const std::string& path);
  void save(const std::string& path) const;

  bool operator==(const Schema& other) const;
};

// Row-major table of covariates (fully observed) and raw feature values with
// a per-cell observation mask. Immutable once built; transformations return
// new tables.
class DatasetTable {
 public:
  DatasetTable() = default;
  // Validates observed cells against the schema (DomainViolation).
  DatasetTable(Schema schema, std::vector<double> covariates, std::vector<double> values,
               std::vector<std::uint8_t> observed);

  const Schema& schema() const { return schema_; }
  std::size_t rows() const { return rows_; }
  std::size_t num_features() const { return schema_.num_features(); }
  std::size_t num_covariates() const { return schema_.num_covariates(); }

  double covariate(std::size_t n, std::size_t q) const { return covariates_[n * num_covariates() + q]; }
  double value(std::size_t n, std::size_t d) const { return values_[n * num_features() + d]; }
  bool observed(std::size_t n, std::size_t d) const { return observed_[n * num_features() + d] != 0; }

  const std::vector<double>& covariates() const { return covariates_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<std::uint8_t>& mask() const { return observed_; }

  // Instances are numbered in order of first appearance.
  std::size_t num_instances() const { return instance_ids_.size(); }
  std::size_t instance_of(std::size_t n) const { return instance_[n]; }
  double instance_id(std::size_t p) const { return instance_ids_[p]; }
  const std::vector<std::size_t>& rows_of(std::size_t p) const { return instance_rows_[p]; }
  std::size_t observed_count() const;

  DatasetTable subset(const std::vector<std::size_t>& rows) const;
  // Stable sort by (instance id value, time).
  DatasetTable sorted_by_instance() const;
  bool is_sorted_by_instance() const;
  DatasetTable with_mask(std::vector<std::uint8_t> observed) const;
  DatasetTable with_schema(Schema schema) const;
  static DatasetTable concat(const DatasetTable& a, const DatasetTable& b);

 private:
  void index_instances();

  Schema schema_;
  std::size_t rows_ = 0;
  std::vector<double> covariates_;
  std::vector<double> values_;
  std::vector<std::uint8_t> observed_;
  std::vector<std::size_t> instance_;
  std::vector<double> instance_ids_;
  std::vector<std::vector<std::size_t>> instance_rows_;
};

DatasetTable load_csv(const std::string& path, const Schema& schema);
DatasetTable parse_csv(const std::string& text, const Schema& schema);
std::string to_csv(const DatasetTable& table);
void save_csv(const std::string& path, const DatasetTable& table);

// Shortest round-trip decimal representation.
std::string format_double(double v);

// --- encoder inputs ---

struct FeatureStats {
  double mean = 0.0;  // of the transformed observed training values
  double std = 1.0;
  double raw_min = 0.0;
  double raw_max = 0.0;
  double raw_mean = 0.0;
  std::size_t count = 0;
};

struct NormalizationStats {
  std::vector<FeatureStats> features;
  std::vector<std::string> degenerate;  // features whose observed std was 0

  nlohmann::json to_json() const;
  static NormalizationStats from_json(const nlohmann::json& j);
};

// Fitted on the training split only. Constant observed columns are reported in
// `degenerate` and get std = 1.
NormalizationStats fit_normalization(const DatasetTable& train);

struct EncodedMatrix {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<double> data;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // (offset, width) per feature
  NormalizationStats stats;
};

// Missing cells are zero after the transform. With `append_mask` the
// observation mask is added as D extra columns.
EncodedMatrix encode_inputs(const DatasetTable& table, const NormalizationStats& stats,
                            bool append_mask = false);
EncodedMatrix encode_inputs(const DatasetTable& table);
std::size_t encoded_width(const Schema& schema, bool append_mask = false);

// Inverse of the standardizing transforms (standardize / log / log1p).
double invert_standardized(const FeatureSpec& f, const FeatureStats& s, double encoded);

// --- splits and holes ---

struct LongitudinalSplit {
  DatasetTable train;       // training instances + disclosed rows of held-out instances
  DatasetTable validation;  // remaining rows of validation instances
  DatasetTable test;        // remaining rows of test instances
  DatasetTable disclosed;   // the disclosed rows alone
};

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

// Splits by instance. Every held-out (validation or test) instance gives
// `visits_disclosed` random rows to the training table.
LongitudinalSplit split_longitudinal(const DatasetTable& table, SplitFractions fractions,
                                     std::uint64_t seed, std::size_t visits_disclosed);

struct HeldOutCell {
  std::size_t row;
  std::size_t feature;
  double value;
};

struct McarResult {
  DatasetTable table;
  std::vector<HeldOutCell> held_out;  // sorted by (row, feature)
};

McarResult inject_mcar(const DatasetTable& table, double ratio, std::uint64_t seed);

void save_held_out(const std::string& path, const Schema& schema, const std::vector<HeldOutCell>& cells);
std::vector<HeldOutCell> load_held_out(const std::string& path, const Schema& schema);

}  // namespace hlvae
