#include "hlvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "hlvae/error.hpp"

namespace hlvae {

using ad::Tensor;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

json ModelConfig::to_json() const {
  return {{"kernel", kernel},           {"latent_dim", latent_dim}, {"hidden_width", hidden_width},
          {"slot_width", slot_width},   {"inducing", inducing},     {"append_mask", append_mask},
          {"initial_noise", initial_noise}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.kernel = j.value("kernel", c.kernel);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.slot_width = j.value("slot_width", c.slot_width);
  c.inducing = j.value("inducing", c.inducing);
  c.append_mask = j.value("append_mask", c.append_mask);
  c.initial_noise = j.value("initial_noise", c.initial_noise);
  return c;
}

// ---------------------------------------------------------------------------
// Inducing points

namespace {

double softplus_inverse(double y) {
  // log(expm1(y)), stable for large y
  return y > 30 ? y : std::log(std::expm1(y));
}

}  // namespace

InducingPointSet InducingPointSet::create(const DatasetTable& train, const KernelStructure& structure,
                                          std::size_t max_points, std::uint64_t seed) {
  const Schema& schema = train.schema();
  const std::size_t Q = schema.num_covariates();
  const std::vector<std::size_t> shared = structure.shared_covariates();

  InducingPointSet s;
  s.trainable_column.assign(Q, 0);
  for (std::size_t q : shared) {
    const auto& c = schema.covariates[q];
    if (c.kind == CovariateKind::continuous && !c.is_instance_id) s.trainable_column[q] = 1;
  }
  if (shared.empty() || max_points == 0) {
    s.points = Tensor::parameter(1, Q, std::vector<double>(Q, 0.0));
    return s;
  }

  // Distinct configurations of the shared covariates, in lexicographic order.
  std::set<std::vector<double>> distinct;
  for (std::size_t n = 0; n < train.rows(); ++n) {
    std::vector<double> key;
    for (std::size_t q : shared) key.push_back(train.covariate(n, q));
    distinct.insert(std::move(key));
  }
  std::vector<std::vector<double>> cand(distinct.begin(), distinct.end());

  std::vector<std::vector<double>> centers;
  if (cand.size() <= max_points) {
    centers = cand;
  } else {
    // k-means++ seeding on standardized coordinates, then Lloyd updates:
    // continuous coordinates move to the cluster mean, discrete ones take the
    // most common value.
    const std::size_t k = shared.size();
    std::vector<double> lo(k, INFINITY), hi(k, -INFINITY);
    for (const auto& c : cand)
      for (std::size_t i = 0; i < k; ++i) lo[i] = std::min(lo[i], c[i]), hi[i] = std::max(hi[i], c[i]);
    auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
      double d = 0;
      for (std::size_t i = 0; i < k; ++i) {
        double span = hi[i] > lo[i] ? hi[i] - lo[i] : 1.0;
        double t = (a[i] - b[i]) / span;
        d += t * t;
      }
      return d;
    };
    Rng rng(seed);
    centers.push_back(cand[rng.below(cand.size())]);
    std::vector<double> best(cand.size(), INFINITY);
    while (centers.size() < max_points) {
      double total = 0;
      for (std::size_t i = 0; i < cand.size(); ++i) {
        best[i] = std::min(best[i], dist2(cand[i], centers.back()));
        total += best[i];
      }
      double u = rng.uniform() * total, acc = 0;
      std::size_t pick = cand.size() - 1;
      for (std::size_t i = 0; i < cand.size(); ++i) {
        acc += best[i];
        if (u < acc && best[i] > 0) {
          pick = i;
          break;
        }
      }
      centers.push_back(cand[pick]);
    }
    for (int iter = 0; iter < 10; ++iter) {
      std::vector<std::vector<std::size_t>> members(centers.size());
      for (std::size_t i = 0; i < cand.size(); ++i) {
        std::size_t arg = 0;
        double bd = INFINITY;
        for (std::size_t c = 0; c < centers.size(); ++c) {
          double d = dist2(cand[i], centers[c]);
          if (d < bd) bd = d, arg = c;
        }
        members[arg].push_back(i);
      }
      for (std::size_t c = 0; c < centers.size(); ++c) {
        if (members[c].empty()) continue;
        for (std::size_t i = 0; i < k; ++i) {
          if (s.trainable_column[shared[i]]) {
            double m = 0;
            for (std::size_t j : members[c]) m += cand[j][i];
            centers[c][i] = m / static_cast<double>(members[c].size());
          } else {
            std::map<double, std::size_t> votes;
            for (std::size_t j : members[c]) ++votes[cand[j][i]];
            centers[c][i] = std::max_element(votes.begin(), votes.end(), [](auto& a, auto& b) {
                              return a.second < b.second;
                            })->first;
          }
        }
      }
    }
  }

  std::vector<double> pts(centers.size() * Q, 0.0);
  for (std::size_t m = 0; m < centers.size(); ++m)
    for (std::size_t i = 0; i < shared.size(); ++i) pts[m * Q + shared[i]] = centers[m][i];
  s.points = Tensor::parameter(centers.size(), Q, std::move(pts));
  return s;
}

// ---------------------------------------------------------------------------
// q(u)

Tensor VariationalGaussian::factor(std::size_t l) const {
  const Tensor& raw = raw_factors.at(l);
  const std::size_t M = raw.rows();
  std::vector<double> strict(M * M, 0.0);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < i; ++j) strict[i * M + j] = 1.0;
  return raw * Tensor::constant(M, M, std::move(strict)) + ad::diag_matrix(ad::softplus(ad::diagonal(raw)));
}

void VariationalGaussian::set_factor(std::size_t l, std::span<const double> chol) {
  auto raw = raw_factors.at(l).mutable_values();
  const std::size_t M = raw_factors[l].rows();
  if (chol.size() != M * M) throw ShapeMismatch("factor size does not match q(u)");
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      double v = chol[i * M + j];
      if (j < i) raw[i * M + j] = v;
      else if (j == i) raw[i * M + j] = softplus_inverse(std::max(v, 1e-12));
      else raw[i * M + j] = 0.0;
    }
}

Tensor VariationalGaussian::mean(std::size_t l, const AdditiveGPConfig& gp, const Tensor& points) const {
  if (!gp.structure.has_shared()) return Tensor::zeros(points.rows(), 1);  // K^(A) = 0
  return ad::matmul(ad::cholesky(additive_kernel(gp, l, points, points, false)), means.at(l));
}

Tensor VariationalGaussian::covariance(std::size_t l, const AdditiveGPConfig& gp, const Tensor& points) const {
  if (!gp.structure.has_shared()) return Tensor::zeros(points.rows(), points.rows());
  Tensor B = ad::matmul(ad::cholesky(additive_kernel(gp, l, points, points, false)), factor(l));
  return ad::matmul(B, B, false, true);
}

VariationalGaussian VariationalGaussian::at_prior(std::size_t latent_dim, std::size_t points) {
  VariationalGaussian vg;
  const std::size_t M = points;
  std::vector<double> raw(M * M, 0.0);
  for (std::size_t i = 0; i < M; ++i) raw[i * M + i] = softplus_inverse(1.0);
  for (std::size_t l = 0; l < latent_dim; ++l) {
    vg.means.push_back(Tensor::parameter(M, 1, std::vector<double>(M, 0.0)));
    vg.raw_factors.push_back(Tensor::parameter(M, M, raw));
  }
  return vg;
}

// ---------------------------------------------------------------------------
// Model

Model Model::create(const DatasetTable& train, const ModelConfig& config, std::uint64_t seed) {
  if (train.rows() == 0) throw SchemaMismatch("training table is empty");
  if (config.latent_dim == 0) throw ShapeMismatch("latent dimension must be positive");
  Model m;
  m.schema = train.schema();
  m.schema.validate();
  m.config = config;
  m.training = train.sorted_by_instance();
  m.stats = fit_normalization(m.training);

  Rng rng(seed);
  m.encoder = EncoderParams::create(encoded_width(m.schema, config.append_mask), config.hidden_width,
                                    config.latent_dim, rng);
  m.decoder = DecoderParams::create(m.schema, config.latent_dim, config.hidden_width, config.slot_width, rng);
  for (std::size_t d = 0; d < m.decoder.heads.size(); ++d) m.decoder.heads[d].calibrate(m.stats.features[d]);

  KernelStructure ks = KernelStructure::parse(config.kernel, m.schema);
  m.gp = AdditiveGPConfig::create(ks, config.latent_dim, m.training, config.initial_noise);
  if (config.inducing > 0 && ks.individual) {
    m.inducing = InducingPointSet::create(m.training, ks, config.inducing, rng.next_u64());
    m.variational = VariationalGaussian::at_prior(config.latent_dim, m.inducing->size());
  }
  return m;
}

namespace {

template <class M, class F>
void visit_parameters(M& m, F&& f) {
  auto dense = [&](const std::string& p, auto& d) {
    f(p + ".weight", d.weight);
    f(p + ".bias", d.bias);
  };
  dense("encoder.hidden", m.encoder.hidden);
  dense("encoder.output", m.encoder.output);
  dense("decoder.hidden", m.decoder.hidden);
  dense("decoder.output", m.decoder.output);
  for (std::size_t d = 0; d < m.decoder.heads.size(); ++d) {
    auto& h = m.decoder.heads[d];
    const std::string p = "head." + std::to_string(d) + "." + h.spec.name;
    f(p + ".weight", h.weight);
    f(p + ".bias", h.bias);
    if (h.free_variance.defined()) f(p + ".free_variance", h.free_variance);
    if (h.threshold_increments.defined()) f(p + ".threshold_increments", h.threshold_increments);
  }
  for (std::size_t l = 0; l < m.gp.dims.size(); ++l) {
    auto& dim = m.gp.dims[l];
    const std::string p = "gp." + std::to_string(l);
    for (std::size_t r = 0; r < dim.components.size(); ++r) {
      auto& c = dim.components[r];
      const std::string q = p + ".term" + std::to_string(r);
      f(q + ".log_magnitude", c.log_magnitude);
      if (c.log_lengthscales.defined()) f(q + ".log_lengthscales", c.log_lengthscales);
    }
    f(p + ".raw_noise", dim.raw_noise);
  }
  if (m.inducing) f(std::string("inducing.points"), m.inducing->points);
  if (m.variational) {
    for (std::size_t l = 0; l < m.variational->means.size(); ++l) {
      f("q_u." + std::to_string(l) + ".mean", m.variational->means[l]);
      f("q_u." + std::to_string(l) + ".raw_factor", m.variational->raw_factors[l]);
    }
  }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_parameters(*this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  visit_parameters(*this, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

EncodedMatrix Model::encode_table(const DatasetTable& table) const {
  if (!(table.schema() == schema)) throw SchemaMismatch("table schema differs from the model schema");
  return encode_inputs(table, stats, config.append_mask);
}

Model Model::clone() const {
  Model m = *this;
  visit_parameters(m, [](const std::string&, Tensor& t) {
    std::span<const double> v = t.values();
    t = Tensor::parameter(t.rows(), t.cols(), std::vector<double>(v.begin(), v.end()));
  });
  return m;
}

void Model::copy_values_from(const Model& other) {
  auto src = other.named_parameters();
  std::size_t i = 0;
  visit_parameters(*this, [&](const std::string& name, Tensor& t) {
    if (i >= src.size() || src[i].first != name || src[i].second.size() != t.size()) {
      throw ShapeMismatch("parameter layouts differ at '" + name + "'");
    }
    auto dst = t.mutable_values();
    auto v = src[i++].second.values();
    std::copy(v.begin(), v.end(), dst.begin());
  });
}

json Model::to_json() const {
  json params = json::object();
  for (const auto& [name, t] : named_parameters()) {
    params[name] = {{"shape", {t.rows(), t.cols()}},
                    {"values", std::vector<double>(t.values().begin(), t.values().end())}};
  }
  return {{"format", "hlvae-checkpoint"}, {"version", kCheckpointVersion}, {"config", config.to_json()},
          {"schema", schema.to_json()},  {"stats", stats.to_json()},      {"parameters", params},
          {"training_data", to_csv(training)}};
}

Model Model::from_json(const json& j) {
  if (j.value("format", std::string()) != "hlvae-checkpoint") throw ParseError("not a model checkpoint");
  int version = j.value("version", 0);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  Schema schema = Schema::from_json(j.at("schema"));
  ModelConfig config = ModelConfig::from_json(j.at("config"));
  DatasetTable train = parse_csv(j.at("training_data").get<std::string>(), schema);
  Model m = create(train, config, 0);
  m.stats = NormalizationStats::from_json(j.at("stats"));
  for (std::size_t d = 0; d < m.decoder.heads.size(); ++d) m.decoder.heads[d].calibrate(m.stats.features[d]);
  const json& params = j.at("parameters");
  std::size_t seen = 0;
  visit_parameters(m, [&](const std::string& name, Tensor& t) {
    if (!params.contains(name)) throw ParseError("checkpoint is missing parameter '" + name + "'");
    const json& p = params[name];
    auto shape = p.at("shape").get<std::vector<std::size_t>>();
    auto values = p.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] * shape[1] != values.size()) {
      throw ParseError("malformed parameter '" + name + "'");
    }
    // Inducing-point count is data dependent; accept the stored shape.
    if (shape[0] != t.rows() || shape[1] != t.cols()) {
      if (name.rfind("inducing.", 0) != 0 && name.rfind("q_u.", 0) != 0) {
        throw ParseError("parameter '" + name + "' has the wrong shape");
      }
      t = Tensor::parameter(shape[0], shape[1], std::move(values));
    } else {
      std::copy(values.begin(), values.end(), t.mutable_values().begin());
    }
    ++seen;
  });
  if (seen != params.size()) throw ParseError("checkpoint has unexpected parameters");
  return m;
}

void Model::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << to_json().dump(1) << "\n";
}

Model Model::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace hlvae
