#include "hlvae/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hlvae/error.hpp"

namespace hlvae {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
// log sigmoid(x) = -softplus(-x)
double log_sigmoid(double x) { return -softplus(-x); }

void require_level(double y, std::size_t levels) {
  if (!(std::floor(y) == y) || y < 0 || y >= static_cast<double>(levels)) {
    throw DomainViolation("level " + format_double(y) + " outside {0.." + std::to_string(levels - 1) + "}");
  }
}

// log P(y = r) for the cumulative-logit model, written so that no difference
// of two sigmoids is ever formed:
//   sigma(a) - sigma(b) = sigma(a) sigma(-b) (1 - exp(-(a - b))),  a > b.
double ordinal_log_prob(std::size_t r, double score, const std::vector<double>& t) {
  const std::size_t R = t.size() + 1;
  double lp = 0.0;
  if (r < R - 1) lp += log_sigmoid(t[r] - score);
  if (r > 0) lp += log_sigmoid(score - t[r - 1]);
  if (r > 0 && r < R - 1) lp += std::log(-std::expm1(-(t[r] - t[r - 1])));
  return lp;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= s;
  return p;
}

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::size_t inverse_cdf(const std::vector<double>& p, double u) {
  double c = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    c += p[i];
    if (u < c) return i;
  }
  return p.size() - 1;
}

std::uint64_t poisson_knuth(double rate, Rng& rng) {
  const double limit = std::exp(-rate);
  std::uint64_t k = 0;
  double prod = rng.uniform_open();
  while (prod > limit) {
    ++k;
    prod *= rng.uniform_open();
  }
  return k;
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

double log_prob(double y, const LikelihoodParams& params) {
  return std::visit(
      Overloaded{
          [&](const GaussianParams& g) {
            double e = y - g.mean;
            return -0.5 * (kLog2Pi + std::log(g.variance)) - 0.5 * e * e / g.variance;
          },
          [&](const LogNormalParams& g) {
            if (!(y > 0)) throw DomainViolation("log-normal value must be > 0");
            double ly = std::log(y);
            double e = ly - g.mu;
            return -ly - 0.5 * (kLog2Pi + std::log(g.variance)) - 0.5 * e * e / g.variance;
          },
          [&](const PoissonParams& p) {
            if (y < 0 || std::floor(y) != y) throw DomainViolation("count must be a non-negative integer");
            return y * std::log(p.rate) - p.rate - std::lgamma(y + 1.0);
          },
          [&](const CategoricalParams& c) {
            require_level(y, c.logits.size());
            double m = *std::max_element(c.logits.begin(), c.logits.end());
            double s = 0;
            for (double l : c.logits) s += std::exp(l - m);
            return c.logits[static_cast<std::size_t>(y)] - m - std::log(s);
          },
          [&](const OrdinalParams& o) {
            require_level(y, o.thresholds.size() + 1);
            return ordinal_log_prob(static_cast<std::size_t>(y), o.score, o.thresholds);
          }},
      params);
}

std::vector<double> probabilities(const LikelihoodParams& params) {
  if (auto* c = std::get_if<CategoricalParams>(&params)) return softmax(c->logits);
  if (auto* o = std::get_if<OrdinalParams>(&params)) {
    std::vector<double> p(o->thresholds.size() + 1);
    for (std::size_t r = 0; r < p.size(); ++r) p[r] = std::exp(ordinal_log_prob(r, o->score, o->thresholds));
    return p;
  }
  throw DomainViolation("probabilities() needs a categorical or ordinal distribution");
}

double sample(const LikelihoodParams& params, Rng& rng) {
  return std::visit(
      Overloaded{[&](const GaussianParams& g) { return g.mean + std::sqrt(g.variance) * rng.normal(); },
                 [&](const LogNormalParams& g) { return std::exp(g.mu + std::sqrt(g.variance) * rng.normal()); },
                 [&](const PoissonParams& p) {
                   // Sum of Poisson(rate / k) draws keeps Knuth's product away
                   // from underflow.
                   const auto chunks = static_cast<std::uint64_t>(std::ceil(p.rate / 30.0));
                   std::uint64_t total = 0;
                   for (std::uint64_t k = 0; k < std::max<std::uint64_t>(chunks, 1); ++k)
                     total += poisson_knuth(p.rate / static_cast<double>(std::max<std::uint64_t>(chunks, 1)), rng);
                   return static_cast<double>(total);
                 },
                 [&](const CategoricalParams& c) {
                   return static_cast<double>(inverse_cdf(softmax(c.logits), rng.uniform()));
                 },
                 [&](const OrdinalParams& o) {
                   return static_cast<double>(inverse_cdf(probabilities(o), rng.uniform()));
                 }},
      params);
}

double point_estimate(const LikelihoodParams& params) {
  return std::visit(Overloaded{[](const GaussianParams& g) { return g.mean; },
                               [](const LogNormalParams& g) { return std::exp(g.mu + 0.5 * g.variance); },
                               [](const PoissonParams& p) { return p.rate; },
                               [](const CategoricalParams& c) {
                                 return static_cast<double>(argmax_lowest(c.logits));
                               },
                               [&](const OrdinalParams&) {
                                 return static_cast<double>(argmax_lowest(probabilities(params)));
                               }},
                    params);
}

// ---------------------------------------------------------------------------
// Heads

std::size_t FeatureHead::output_count(const FeatureSpec& spec) {
  switch (spec.likelihood) {
    case Likelihood::gaussian:
    case Likelihood::lognormal: return 2;
    case Likelihood::gaussian_free_variance:
    case Likelihood::poisson:
    case Likelihood::ordinal: return 1;
    case Likelihood::categorical: return static_cast<std::size_t>(spec.cardinality - 1);
  }
  return 0;
}

FeatureHead FeatureHead::create(const FeatureSpec& spec, std::size_t slot, Rng& rng) {
  FeatureHead h;
  h.spec = spec;
  h.slot = slot;
  h.outputs = output_count(spec);
  const double bound = std::sqrt(6.0 / static_cast<double>(slot + h.outputs));
  std::vector<double> w(slot * h.outputs);
  for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
  h.weight = ad::Tensor::parameter(slot, h.outputs, std::move(w));
  h.bias = ad::Tensor::parameter(1, h.outputs, std::vector<double>(h.outputs, 0.0));
  if (spec.likelihood == Likelihood::gaussian_free_variance) {
    h.free_variance = ad::Tensor::parameter(1, 1, {0.0});
  }
  if (spec.likelihood == Likelihood::ordinal) {
    auto k = static_cast<std::size_t>(spec.cardinality - 1);
    h.threshold_increments = ad::Tensor::parameter(1, k, std::vector<double>(k, 0.0));
  }
  return h;
}

void FeatureHead::calibrate(const FeatureStats& stats) {
  offset = 0.0;
  scale = 1.0;
  switch (spec.likelihood) {
    case Likelihood::gaussian:
    case Likelihood::gaussian_free_variance:
    case Likelihood::lognormal:
      if (spec.unit_interval) break;
      offset = stats.mean;
      scale = stats.std;
      break;
    case Likelihood::poisson:
      // softplus^-1 of the mean count
      offset = std::log(std::expm1(std::max(stats.raw_mean, 1e-3)));
      break;
    default: break;
  }
}

std::vector<ad::Tensor> FeatureHead::parameters() const {
  std::vector<ad::Tensor> p{weight, bias};
  if (free_variance.defined()) p.push_back(free_variance);
  if (threshold_increments.defined()) p.push_back(threshold_increments);
  return p;
}

LikelihoodParams BatchParams::row(std::size_t n) const {
  switch (kind) {
    case Likelihood::gaussian:
    case Likelihood::gaussian_free_variance: return GaussianParams{first(n, 0), second(n, 0)};
    case Likelihood::lognormal: return LogNormalParams{first(n, 0), second(n, 0)};
    case Likelihood::poisson: return PoissonParams{first(n, 0)};
    case Likelihood::categorical: {
      std::vector<double> l(first.cols());
      for (std::size_t j = 0; j < l.size(); ++j) l[j] = first(n, j);
      return CategoricalParams{std::move(l)};
    }
    case Likelihood::ordinal: {
      auto t = second.values();
      return OrdinalParams{first(n, 0), std::vector<double>(t.begin(), t.end())};
    }
  }
  throw DomainViolation("unknown likelihood");
}

BatchParams decode_head(const ad::Tensor& slot_block, const FeatureHead& head) {
  using namespace ad;
  if (slot_block.cols() != head.slot) {
    throw ShapeMismatch("head for '" + head.spec.name + "' expects a slot of width " +
                        std::to_string(head.slot) + ", got " + std::to_string(slot_block.cols()));
  }
  const std::size_t N = slot_block.rows();
  Tensor raw = matmul(slot_block, head.weight) + head.bias;
  BatchParams out{head.spec.likelihood, {}, {}, {}};
  const double s2 = head.scale * head.scale;
  switch (head.spec.likelihood) {
    case Likelihood::gaussian:
    case Likelihood::gaussian_free_variance: {
      Tensor h1 = cols(raw, 0, 1);
      out.first = head.spec.unit_interval ? sigmoid(h1) : head.offset + head.scale * h1;
      Tensor v = head.spec.likelihood == Likelihood::gaussian
                     ? softplus(cols(raw, 1, 1))
                     : Tensor::full(N, 1, 1.0) * softplus(head.free_variance);
      out.second = s2 * (v + kVarianceFloor);
      break;
    }
    case Likelihood::lognormal:
      out.first = head.offset + head.scale * cols(raw, 0, 1);
      out.second = s2 * (softplus(cols(raw, 1, 1)) + kVarianceFloor);
      break;
    case Likelihood::poisson:
      out.first = softplus(raw + head.offset) + kRateFloor;
      break;
    case Likelihood::categorical: {
      std::vector<Tensor> parts{Tensor::zeros(N, 1), raw};
      out.first = concat(parts, 1);
      break;
    }
    case Likelihood::ordinal: {
      out.first = softplus(raw);
      const std::size_t k = head.threshold_increments.cols();
      std::vector<double> upper(k * k, 0.0);
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i; j < k; ++j) upper[i * k + j] = 1.0;
      out.increments = softplus(head.threshold_increments);
      out.second = matmul(out.increments, Tensor::constant(k, k, std::move(upper)));
      break;
    }
  }
  return out;
}

LikelihoodParams decode_head_row(std::span<const double> slot, const FeatureHead& head) {
  auto block = ad::Tensor::constant(1, slot.size(), std::vector<double>(slot.begin(), slot.end()));
  return decode_head(block, head).row(0);
}

ad::Tensor log_prob_column(const BatchParams& p, std::span<const double> y,
                           std::span<const std::uint8_t> observed) {
  using namespace ad;
  const std::size_t N = p.rows();
  if (y.size() != N || observed.size() != N) throw ShapeMismatch("log_prob_column: value count differs from rows");
  std::vector<double> mask(N);
  for (std::size_t n = 0; n < N; ++n) mask[n] = observed[n] ? 1.0 : 0.0;
  Tensor m = Tensor::column(mask);

  auto filled = [&](double placeholder) {
    std::vector<double> v(N);
    for (std::size_t n = 0; n < N; ++n) v[n] = observed[n] ? y[n] : placeholder;
    return v;
  };
  auto level_selector = [&](std::size_t width, auto pick) {
    std::vector<double> s(N * width, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      if (!observed[n]) continue;
      long j = pick(static_cast<long>(y[n]));
      if (j >= 0 && j < static_cast<long>(width)) s[n * width + static_cast<std::size_t>(j)] = 1.0;
    }
    return Tensor::constant(N, width, std::move(s));
  };

  Tensor lp;
  switch (p.kind) {
    case Likelihood::gaussian:
    case Likelihood::gaussian_free_variance: {
      Tensor yv = Tensor::column(filled(0.0));
      Tensor logv = log(p.second);
      lp = -0.5 * kLog2Pi - 0.5 * logv - 0.5 * square(yv - p.first) * exp(-logv);
      break;
    }
    case Likelihood::lognormal: {
      auto v = filled(1.0);
      for (auto& x : v) {
        if (!(x > 0)) throw DomainViolation("log-normal value must be > 0");
        x = std::log(x);
      }
      Tensor ly = Tensor::column(v);
      Tensor logv = log(p.second);
      lp = -ly - 0.5 * kLog2Pi - 0.5 * logv - 0.5 * square(ly - p.first) * exp(-logv);
      break;
    }
    case Likelihood::poisson: {
      auto v = filled(0.0);
      std::vector<double> lg(N);
      for (std::size_t n = 0; n < N; ++n) {
        if (v[n] < 0 || std::floor(v[n]) != v[n]) throw DomainViolation("count must be a non-negative integer");
        lg[n] = std::lgamma(v[n] + 1.0);
      }
      lp = Tensor::column(v) * log(p.first) - p.first - Tensor::column(lg);
      break;
    }
    case Likelihood::categorical: {
      const std::size_t R = p.first.cols();
      for (std::size_t n = 0; n < N; ++n)
        if (observed[n]) require_level(y[n], R);
      std::vector<double> mx(N);
      for (std::size_t n = 0; n < N; ++n) {
        double best = p.first(n, 0);
        for (std::size_t j = 1; j < R; ++j) best = std::max(best, p.first(n, j));
        mx[n] = best;
      }
      Tensor shift = Tensor::column(mx);
      Tensor lse = shift + log(sum(exp(p.first - shift), 1));
      Tensor pick = sum(p.first * level_selector(R, [](long r) { return r; }), 1);
      lp = pick - lse;
      break;
    }
    case Likelihood::ordinal: {
      const std::size_t K = p.second.cols();  // R - 1
      for (std::size_t n = 0; n < N; ++n)
        if (observed[n]) require_level(y[n], K + 1);
      Tensor upper = -softplus(p.first - p.second);  // log sigma(t_j - c)
      Tensor lower = -softplus(p.second - p.first);  // log sigma(c - t_j)
      Tensor gap = log(1.0 - exp(-p.increments));    // log(1 - exp(-(t_j - t_{j-1})))
      Tensor a = sum(upper * level_selector(K, [](long r) { return r; }), 1);
      Tensor b = sum(lower * level_selector(K, [](long r) { return r - 1; }), 1);
      Tensor g = sum(gap * level_selector(K, [K](long r) {
                       return r >= 1 && r < static_cast<long>(K) ? r : -1;
                     }),
                     1);
      lp = a + b + g;
      break;
    }
  }
  return lp * m;
}

}  // namespace hlvae
