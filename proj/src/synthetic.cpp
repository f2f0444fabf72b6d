#include "hlvae/synthetic.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "hlvae/error.hpp"
#include "hlvae/likelihood.hpp"
#include "hlvae/rng.hpp"

namespace hlvae {

using nlohmann::json;

std::vector<FeatureSpec> GenConfig::default_features() {
  return {FeatureSpec::make("g1", Likelihood::gaussian),       FeatureSpec::make("g2", Likelihood::gaussian),
          FeatureSpec::make("count", Likelihood::poisson),     FeatureSpec::make("cat", Likelihood::categorical, 4),
          FeatureSpec::make("ord", Likelihood::ordinal, 5)};
}

Schema GenConfig::schema() const {
  Schema s;
  s.features = features.empty() ? default_features() : features;
  s.covariates = {{"id", CovariateKind::categorical, true, false, false},
                  {"time", CovariateKind::continuous, false, true, false},
                  {"group", CovariateKind::binary, false, false, false}};
  s.validate();
  return s;
}

json GenConfig::to_json() const {
  json feats = json::array();
  for (const auto& f : schema().features) {
    json jf = {{"name", f.name}, {"likelihood", to_string(f.likelihood)}};
    if (f.cardinality) jf["cardinality"] = f.cardinality;
    feats.push_back(jf);
  }
  return {{"instances", instances},
          {"visits", visits},
          {"latent_dim", latent_dim},
          {"shared_magnitude", shared_magnitude},
          {"shared_lengthscale", shared_lengthscale},
          {"group_magnitude", group_magnitude},
          {"group_lengthscale", group_lengthscale},
          {"individual_magnitude", individual_magnitude},
          {"individual_lengthscale", individual_lengthscale},
          {"latent_noise", latent_noise},
          {"observation_noise", observation_noise},
          {"decoder_hidden", decoder_hidden},
          {"features", feats}};
}

GenConfig GenConfig::from_json(const json& j) {
  GenConfig c;
  c.instances = j.value("instances", c.instances);
  c.visits = j.value("visits", c.visits);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.shared_magnitude = j.value("shared_magnitude", c.shared_magnitude);
  c.shared_lengthscale = j.value("shared_lengthscale", c.shared_lengthscale);
  c.group_magnitude = j.value("group_magnitude", c.group_magnitude);
  c.group_lengthscale = j.value("group_lengthscale", c.group_lengthscale);
  c.individual_magnitude = j.value("individual_magnitude", c.individual_magnitude);
  c.individual_lengthscale = j.value("individual_lengthscale", c.individual_lengthscale);
  c.latent_noise = j.value("latent_noise", c.latent_noise);
  c.observation_noise = j.value("observation_noise", c.observation_noise);
  c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
  if (j.contains("features")) {
    for (const auto& jf : j.at("features")) {
      c.features.push_back(FeatureSpec::make(jf.at("name").get<std::string>(),
                                             parse_likelihood(jf.at("likelihood").get<std::string>()),
                                             jf.value("cardinality", 0)));
    }
  }
  return c;
}

namespace {

// One draw from GP(0, mag * SE(ls)) on the points t.
Eigen::VectorXd gp_draw(const std::vector<double>& t, double mag, double ls, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::VectorXd eps(n);
  for (Eigen::Index i = 0; i < n; ++i) eps(i) = rng.normal();
  if (mag <= 0) return Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double d = (t[i] - t[j]) / ls;
      K(i, j) = mag * std::exp(-0.5 * d * d);
    }
  K.diagonal().array() += 1e-8 * mag;
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw FactorizationFailure("generator kernel is not positive definite");
  return llt.matrixL() * eps;
}

}  // namespace

SyntheticData generate(const GenConfig& config, std::uint64_t seed) {
  if (config.instances == 0 || config.visits == 0 || config.latent_dim == 0) {
    throw DomainViolation("instances, visits and latent_dim must be positive");
  }
  Schema schema = config.schema();
  Rng rng(seed);
  const std::size_t P = config.instances, V = config.visits, L = config.latent_dim, N = P * V;
  const std::size_t D = schema.num_features(), H = config.decoder_hidden;

  std::vector<double> times(V);
  for (std::size_t v = 0; v < V; ++v) times[v] = static_cast<double>(v);
  std::vector<int> group(P);
  for (std::size_t p = 0; p < P; ++p) group[p] = static_cast<int>(rng.below(2));

  std::vector<double> z(N * L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::VectorXd shared = gp_draw(times, config.shared_magnitude, config.shared_lengthscale, rng);
    Eigen::VectorXd by_group[2] = {gp_draw(times, config.group_magnitude, config.group_lengthscale, rng),
                                   gp_draw(times, config.group_magnitude, config.group_lengthscale, rng)};
    for (std::size_t p = 0; p < P; ++p) {
      Eigen::VectorXd own = gp_draw(times, config.individual_magnitude, config.individual_lengthscale, rng);
      for (std::size_t v = 0; v < V; ++v) {
        z[(p * V + v) * L + l] = shared(v) + by_group[group[p]](v) + own(v) +
                                 std::sqrt(config.latent_noise) * rng.normal();
      }
    }
  }

  // Fixed random decoder: h = tanh(z W1 + b1), feature outputs h W2.
  std::vector<std::size_t> width(D), offset(D);
  std::size_t total = 0;
  for (std::size_t d = 0; d < D; ++d) {
    width[d] = schema.features[d].likelihood == Likelihood::categorical ? schema.features[d].cardinality : 1;
    offset[d] = total;
    total += width[d];
  }
  Eigen::MatrixXd W1(L, H), W2(H, total);
  Eigen::VectorXd b1(H);
  for (Eigen::Index i = 0; i < W1.size(); ++i) W1.data()[i] = rng.normal() * 1.5 / std::sqrt(double(L));
  for (Eigen::Index i = 0; i < b1.size(); ++i) b1(i) = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < W2.size(); ++i) W2.data()[i] = rng.normal() / std::sqrt(double(H));

  std::vector<double> covs(N * 3), values(N * D);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t v = 0; v < V; ++v) {
      const std::size_t n = p * V + v;
      covs[n * 3 + 0] = static_cast<double>(p);
      covs[n * 3 + 1] = times[v];
      covs[n * 3 + 2] = group[p];
      Eigen::RowVectorXd zn(L);
      for (std::size_t l = 0; l < L; ++l) zn(l) = z[n * L + l];
      Eigen::RowVectorXd h = (zn * W1 + b1.transpose()).array().tanh().matrix();
      Eigen::RowVectorXd out = h * W2;
      for (std::size_t d = 0; d < D; ++d) {
        const auto& f = schema.features[d];
        const double o = out(offset[d]);
        const double noise = config.observation_noise;
        double y = 0;
        switch (f.likelihood) {
          case Likelihood::gaussian:
          case Likelihood::gaussian_free_variance:
            y = f.unit_interval ? 1.0 / (1.0 + std::exp(-2.0 * o)) : 2.0 * o;
            if (noise > 0) y += noise * rng.normal();
            break;
          case Likelihood::lognormal:
            y = std::exp(o + (noise > 0 ? noise * rng.normal() : 0.0));
            break;
          case Likelihood::poisson:
            y = sample(PoissonParams{std::exp(1.0 + 1.5 * o)}, rng);
            break;
          case Likelihood::categorical: {
            std::vector<double> logits(width[d]);
            for (std::size_t r = 0; r < width[d]; ++r) logits[r] = 4.0 * out(offset[d] + r);
            y = sample(CategoricalParams{logits}, rng);
            break;
          }
          case Likelihood::ordinal: {
            std::vector<double> t(f.cardinality - 1);
            for (std::size_t r = 0; r < t.size(); ++r)
              t[r] = -2.0 + 4.0 * static_cast<double>(r) / std::max<double>(1.0, static_cast<double>(t.size() - 1));
            y = sample(OrdinalParams{4.0 * o, t}, rng);
            break;
          }
        }
        values[n * D + d] = y;
      }
    }

  SyntheticData out{DatasetTable(schema, std::move(covs), std::move(values), std::vector<std::uint8_t>(N * D, 1)),
                    std::move(z), config};
  return out;
}

std::string latents_csv(const SyntheticData& data) {
  const std::size_t L = data.config.latent_dim;
  std::string out = "id,time";
  for (std::size_t l = 0; l < L; ++l) out += ",z" + std::to_string(l);
  out += "\n";
  for (std::size_t n = 0; n < data.table.rows(); ++n) {
    out += format_double(data.table.covariate(n, 0)) + "," + format_double(data.table.covariate(n, 1));
    for (std::size_t l = 0; l < L; ++l) out += "," + format_double(data.latents[n * L + l]);
    out += "\n";
  }
  return out;
}

}  // namespace hlvae
