#include "hlvae/elbo.hpp"

#include <cmath>
#include <map>

#include "hlvae/error.hpp"

namespace hlvae {

using ad::Tensor;

std::string to_string(KlMode m) { return m == KlMode::exact ? "exact" : "bound"; }

KlMode parse_kl_mode(const std::string& s) {
  if (s == "exact") return KlMode::exact;
  if (s == "bound" || s == "minibatch" || s == "minibatch-bound") return KlMode::bound;
  throw ParseError("unknown KL mode '" + s + "' (expected exact or bound)");
}

namespace {

std::vector<double> feature_column(const DatasetTable& t, std::size_t d) {
  std::vector<double> v(t.rows());
  for (std::size_t n = 0; n < t.rows(); ++n) v[n] = t.value(n, d);
  return v;
}

std::vector<std::uint8_t> mask_column(const DatasetTable& t, std::size_t d) {
  std::vector<std::uint8_t> v(t.rows());
  for (std::size_t n = 0; n < t.rows(); ++n) v[n] = t.observed(n, d);
  return v;
}

Tensor covariate_rows(const DatasetTable& t, std::size_t first, std::size_t count) {
  const std::size_t Q = t.num_covariates();
  std::vector<double> v(t.covariates().begin() + first * Q, t.covariates().begin() + (first + count) * Q);
  return Tensor::constant(count, Q, std::move(v));
}

}  // namespace

Tensor reconstruction_term(const DatasetTable& batch, const std::vector<BatchParams>& params) {
  if (params.size() != batch.num_features()) throw ShapeMismatch("one parameter set per feature expected");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t d = 0; d < params.size(); ++d) {
    if (params[d].rows() != batch.rows()) throw ShapeMismatch("decoded rows do not match the batch");
    auto y = feature_column(batch, d);
    auto o = mask_column(batch, d);
    total = total + ad::sum(log_prob_column(params[d], y, o));
  }
  return total;
}

Tensor exact_kl(const LatentPosterior& q, std::span<const Tensor> sigmas) {
  if (sigmas.size() != q.latent_dim()) throw ShapeMismatch("one prior covariance per latent dimension expected");
  const double N = static_cast<double>(q.rows());
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t l = 0; l < sigmas.size(); ++l) {
    if (sigmas[l].rows() != q.rows() || sigmas[l].cols() != q.rows()) {
      throw ShapeMismatch("prior covariance does not match the posterior size");
    }
    Tensor L = ad::cholesky(sigmas[l]);
    Tensor mu = ad::cols(q.means, l, 1);
    Tensor w = ad::cols(q.variances, l, 1);
    Tensor tr = ad::sum(ad::square(ad::triangular_solve(L, ad::diag_matrix(ad::sqrt(w)), ad::Triangle::lower)));
    Tensor quad = ad::sum(ad::square(ad::triangular_solve(L, mu, ad::Triangle::lower)));
    Tensor kl = 0.5 * (ad::log_det_from_cholesky(L) - ad::sum(ad::log(w)) + tr + quad - N);
    total = total + kl;
  }
  return total;
}

Tensor exact_kl(const LatentPosterior& q, const AdditiveGPConfig& gp, const DatasetTable& table) {
  Tensor X = covariate_tensor(table);
  std::vector<Tensor> sigmas;
  for (std::size_t l = 0; l < gp.latent_dim(); ++l) sigmas.push_back(prior_covariance(gp, X, l));
  return exact_kl(q, sigmas);
}

// With q(u) = N(m, H), block Sigma-hat_p = K^(R)_pp + s^2 I, low-rank
// predictor A_p = K_pS K_SS^-1 and K~_pp = K_pp - A_p K_Sp:
//   Y_p = log|Sigma-hat_p| - sum log w_p + (mu_p - A_p m)' Sigma-hat_p^-1 (mu_p - A_p m)
//         + tr(Sigma-hat_p^-1 (W_p + K~_pp + A_p H A_p'))
// and the bound is 1/2 (P/P^) sum_p Y_p - N/2 + KL(N(m, H) || N(0, K_SS)).
// It is KL(q(z) || p(z)) plus the KL between q(z) p(f | u) q(u) and the
// exact joint, hence never below the exact KL. In whitened coordinates
// (V = L_K^-1 K_Sp) A_p m = V' mt, A_p H A_p' = V' Ct Ct' V and the last KL is
// KL(N(mt, Ct Ct') || N(0, I)).
Tensor minibatch_kl_bound(const DatasetTable& batch, const LatentPosterior& q, const AdditiveGPConfig& gp,
                          const InducingPointSet& inducing, const VariationalGaussian& vg,
                          const DatasetTable& full) {
  if (!gp.has_individual()) {
    throw MissingIndividualComponent("the kernel has no ca(id) interaction term; use exact KL");
  }
  if (q.rows() != batch.rows()) throw ShapeMismatch("posterior rows do not match the batch");
  if (vg.latent_dim() != gp.latent_dim() || q.latent_dim() != gp.latent_dim()) {
    throw ShapeMismatch("latent dimensions of q(u), q(z) and the prior differ");
  }
  if (!batch.is_sorted_by_instance()) throw NotSorted("batch rows must be grouped by instance");

  std::map<double, std::size_t> full_counts;
  for (std::size_t p = 0; p < full.num_instances(); ++p) full_counts[full.instance_id(p)] = full.rows_of(p).size();
  std::vector<std::size_t> starts, counts;
  for (std::size_t p = 0; p < batch.num_instances(); ++p) {
    const auto& rows = batch.rows_of(p);
    auto it = full_counts.find(batch.instance_id(p));
    if (it == full_counts.end() || it->second != rows.size()) {
      throw IncompleteInstance("instance " + format_double(batch.instance_id(p)) + " has " +
                               std::to_string(rows.size()) + " rows in the batch but " +
                               (it == full_counts.end() ? std::string("none") : std::to_string(it->second)) +
                               " in the training table");
    }
    starts.push_back(rows.front());
    counts.push_back(rows.size());
  }

  const double P = static_cast<double>(full.num_instances());
  const double Pb = static_cast<double>(batch.num_instances());
  const double N = static_cast<double>(full.rows());
  const std::size_t M = inducing.size();
  const Tensor& S = inducing.points;

  std::vector<Tensor> blocks_X;
  for (std::size_t i = 0; i < starts.size(); ++i) blocks_X.push_back(covariate_rows(batch, starts[i], counts[i]));

  // Without shared terms K^(A) vanishes: V = 0 and K~ = 0.
  const bool low_rank = gp.structure.has_shared();

  Tensor total = Tensor::scalar(0.0);
  for (std::size_t l = 0; l < gp.latent_dim(); ++l) {
    Tensor Lk;
    if (low_rank) Lk = ad::cholesky(additive_kernel(gp, l, S, S, false));
    Tensor G = vg.factor(l);
    const Tensor& a = vg.means[l];
    Tensor kl_u = 0.5 * (ad::sum(ad::square(G)) + ad::sum(ad::square(a)) - static_cast<double>(M) -
                         ad::log_det_from_cholesky(G));

    Tensor ups = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < starts.size(); ++i) {
      const Tensor& Xp = blocks_X[i];
      const std::size_t n = counts[i];
      Tensor mu = ad::slice(q.means, starts[i], n, l, 1);
      Tensor w = ad::slice(q.variances, starts[i], n, l, 1);

      Tensor V = low_rank ? ad::triangular_solve(Lk, additive_kernel(gp, l, S, Xp, false), ad::Triangle::lower)
                          : Tensor::zeros(M, n);
      Tensor Ktil = low_rank ? additive_kernel(gp, l, Xp, Xp, false) - ad::matmul(V, V, true, false)
                             : Tensor::zeros(n, n);
      Tensor Lp = ad::cholesky(individual_block(gp, Xp, l));
      Tensor Linv = ad::triangular_solve(Lp, Tensor::identity(n), ad::Triangle::lower);
      Tensor Sinv = ad::matmul(Linv, Linv, true, false);

      Tensor r = mu - ad::matmul(V, a, true, false);
      Tensor quad = ad::sum(ad::square(ad::matmul(Linv, r)));
      Tensor tr_w = ad::sum(ad::diagonal(Sinv) * w);
      Tensor tr_k = ad::sum(Sinv * Ktil);
      Tensor tr_h = ad::sum(ad::square(ad::matmul(Linv, ad::matmul(V, G, true, false))));
      ups = ups + ad::log_det_from_cholesky(Lp) - ad::sum(ad::log(w)) + quad + tr_w + tr_k + tr_h;
    }
    total = total + 0.5 * (P / Pb) * ups - 0.5 * N + kl_u;
  }
  return total;
}

ElboTerms elbo(const DatasetTable& batch, const Model& model, KlMode mode, double beta, Rng& rng,
               const DatasetTable& full) {
  if (beta < 0 || beta > 1) throw DomainViolation("KL weight must lie in [0, 1]");
  EncodedMatrix enc = model.encode_table(batch);
  LatentPosterior q = encode(model.encoder, enc);
  Tensor Z = reparameterize(q, standard_normal(q.rows(), q.latent_dim(), rng));
  Tensor recon = reconstruction_term(batch, decode(model.decoder, Z));

  ElboTerms t;
  if (mode == KlMode::exact) {
    if (batch.rows() != full.rows()) throw ShapeMismatch("exact KL needs the full training table as the batch");
    t.reconstruction = recon;
    t.kl = exact_kl(q, model.gp, batch);
  } else {
    if (!model.inducing || !model.variational) {
      throw MissingIndividualComponent("model has no inducing points; the kernel needs a ca(id) interaction");
    }
    const double batch_obs = static_cast<double>(batch.observed_count());
    const double scale = batch_obs > 0 ? static_cast<double>(full.observed_count()) / batch_obs : 0.0;
    t.reconstruction = recon * scale;
    t.kl = minibatch_kl_bound(batch, q, model.gp, *model.inducing, *model.variational, full);
  }
  t.objective = t.reconstruction - beta * t.kl;
  return t;
}

double reconstruction_nll(const Model& model, const DatasetTable& table) {
  if (table.rows() == 0) return std::nan("");
  LatentPosterior q = encode(model.encoder, model.encode_table(table));
  auto params = decode(model.decoder, q.means.detach());
  const std::size_t cells = table.observed_count();
  if (cells == 0) return std::nan("");
  return -reconstruction_term(table, params).item() / static_cast<double>(cells);
}

}  // namespace hlvae
