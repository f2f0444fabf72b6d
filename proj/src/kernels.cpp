#include "hlvae/kernels.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "hlvae/error.hpp"

namespace hlvae {

using ad::Tensor;

// ---------------------------------------------------------------------------
// Structure

bool KernelTerm::uses(std::size_t covariate) const {
  return std::any_of(factors.begin(), factors.end(), [&](const auto& f) { return f.index == covariate; });
}

std::size_t KernelTerm::lengthscale_count() const {
  return static_cast<std::size_t>(std::count_if(
      factors.begin(), factors.end(), [](const auto& f) { return f.kind == FactorKind::squared_exponential; }));
}

std::string KernelTerm::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (i) s += "*";
    s += factors[i].kind == FactorKind::squared_exponential ? "se(" : "ca(";
    s += factors[i].covariate + ")";
  }
  return s;
}

std::string KernelStructure::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) s += " + ";
    s += terms[i].to_string();
  }
  return s;
}

std::vector<std::size_t> KernelStructure::shared_covariates() const {
  std::set<std::size_t> out;
  for (std::size_t r = 0; r < terms.size(); ++r) {
    if (individual && *individual == r) continue;
    for (const auto& f : terms[r].factors) out.insert(f.index);
  }
  return {out.begin(), out.end()};
}

namespace {

struct Token {
  enum Kind { name, lparen, rparen, plus, star, end } kind;
  std::string text;
  std::size_t pos;
};

std::vector<Token> tokenize(const std::string& s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_' || s[j] == '.')) ++j;
      out.push_back({Token::name, s.substr(i, j - i), i});
      i = j;
      continue;
    }
    Token::Kind k;
    switch (c) {
      case '(': k = Token::lparen; break;
      case ')': k = Token::rparen; break;
      case '+': k = Token::plus; break;
      case '*': k = Token::star; break;
      default:
        throw ParseError("unexpected character '" + std::string(1, c) + "' at position " + std::to_string(i));
    }
    out.push_back({k, std::string(1, c), i});
    ++i;
  }
  out.push_back({Token::end, "end of input", s.size()});
  return out;
}

class Parser {
 public:
  Parser(const std::string& text, const Schema& schema) : toks_(tokenize(text)), schema_(schema) {}

  KernelStructure parse() {
    KernelStructure ks;
    ks.terms.push_back(term());
    while (peek().kind == Token::plus) {
      ++pos_;
      ks.terms.push_back(term());
    }
    if (peek().kind != Token::end) fail(peek(), "'+', '*' or end of input");
    return ks;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }

  [[noreturn]] void fail(const Token& t, const std::string& expected) const {
    throw ParseError("unexpected token '" + t.text + "' at position " + std::to_string(t.pos) + ", expected " +
                     expected);
  }

  KernelTerm term() {
    KernelTerm t;
    t.factors.push_back(factor());
    while (peek().kind == Token::star) {
      ++pos_;
      t.factors.push_back(factor());
    }
    std::set<std::size_t> seen;
    for (const auto& f : t.factors) {
      if (!seen.insert(f.index).second) {
        throw ParseError("covariate '" + f.covariate + "' appears twice in term '" + t.to_string() + "'");
      }
    }
    return t;
  }

  KernelFactor factor() {
    const Token& kind = peek();
    if (kind.kind != Token::name || (kind.text != "se" && kind.text != "ca")) fail(kind, "'se' or 'ca'");
    ++pos_;
    if (peek().kind != Token::lparen) fail(peek(), "'('");
    ++pos_;
    const Token& name = peek();
    if (name.kind != Token::name) fail(name, "a covariate name");
    ++pos_;
    if (peek().kind != Token::rparen) fail(peek(), "')'");
    ++pos_;
    auto idx = schema_.covariate_index(name.text);
    if (!idx) throw UnknownCovariate("kernel refers to unknown covariate '" + name.text + "'");
    return {kind.text == "se" ? FactorKind::squared_exponential : FactorKind::categorical, name.text, *idx};
  }

  std::vector<Token> toks_;
  const Schema& schema_;
  std::size_t pos_ = 0;
};

}  // namespace

KernelStructure KernelStructure::parse(const std::string& text, const Schema& schema) {
  KernelStructure ks = Parser(text, schema).parse();
  const std::size_t id = schema.id_index();
  for (std::size_t r = 0; r < ks.terms.size(); ++r) {
    const auto& t = ks.terms[r];
    bool has_id = std::any_of(t.factors.begin(), t.factors.end(), [&](const auto& f) {
      return f.kind == FactorKind::categorical && f.index == id;
    });
    if (t.is_interaction() && has_id) {
      ks.individual = r;
      break;
    }
  }
  return ks;
}

// ---------------------------------------------------------------------------
// Hyperparameters

Tensor LatentKernel::noise_variance() const { return ad::exp(raw_noise) + kLatentNoiseFloor; }

double LatentKernel::noise_variance_value() const { return std::exp(raw_noise.item()) + kLatentNoiseFloor; }

std::vector<Tensor> LatentKernel::parameters() const {
  std::vector<Tensor> p;
  for (const auto& c : components) {
    p.push_back(c.log_magnitude);
    if (c.log_lengthscales.defined()) p.push_back(c.log_lengthscales);
  }
  p.push_back(raw_noise);
  return p;
}

AdditiveGPConfig AdditiveGPConfig::create(const KernelStructure& structure, std::size_t latent_dim,
                                          const DatasetTable& train, double initial_noise) {
  AdditiveGPConfig cfg;
  cfg.structure = structure;
  const double log_mag = std::log(1.0 / static_cast<double>(structure.terms.size()));
  auto span = [&](std::size_t q) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t n = 0; n < train.rows(); ++n) {
      lo = std::min(lo, train.covariate(n, q));
      hi = std::max(hi, train.covariate(n, q));
    }
    double s = hi - lo;
    return std::isfinite(s) && s > 0 ? s : 2.0;
  };
  for (std::size_t l = 0; l < latent_dim; ++l) {
    LatentKernel lk;
    for (const auto& term : structure.terms) {
      KernelComponent c;
      c.term = term;
      c.log_magnitude = Tensor::parameter(1, 1, {log_mag});
      std::vector<double> ls;
      for (const auto& f : term.factors)
        if (f.kind == FactorKind::squared_exponential) ls.push_back(std::log(span(f.index) / 2.0));
      if (!ls.empty()) c.log_lengthscales = Tensor::parameter(1, ls.size(), ls);
      lk.components.push_back(std::move(c));
    }
    lk.raw_noise = Tensor::parameter(1, 1, {std::log(std::max(initial_noise - kLatentNoiseFloor, 1e-12))});
    cfg.dims.push_back(std::move(lk));
  }
  return cfg;
}

std::vector<Tensor> AdditiveGPConfig::parameters() const {
  std::vector<Tensor> p;
  for (const auto& d : dims) {
    auto q = d.parameters();
    p.insert(p.end(), q.begin(), q.end());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Matrices

Tensor covariate_tensor(const DatasetTable& table) {
  return Tensor::constant(table.rows(), table.num_covariates(), table.covariates());
}

Tensor kernel_matrix(const KernelComponent& c, const Tensor& rows, const Tensor& cols) {
  const std::size_t N = rows.rows(), M = cols.rows();
  for (const auto& f : c.term.factors) {
    if (f.index >= rows.cols() || f.index >= cols.cols()) {
      throw UnknownCovariate("covariate '" + f.covariate + "' missing from the kernel inputs");
    }
  }
  std::vector<double> indicator(N * M, 1.0);
  bool any_categorical = false;
  Tensor exponent;
  std::size_t ls = 0;
  for (const auto& f : c.term.factors) {
    if (f.kind == FactorKind::categorical) {
      any_categorical = true;
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < M; ++j)
          if (rows(i, f.index) != cols(j, f.index)) indicator[i * M + j] = 0.0;
      continue;
    }
    Tensor diff = ad::cols(rows, f.index, 1) - ad::matmul(Tensor::full(1, 1, 1.0), ad::cols(cols, f.index, 1), false, true);
    Tensor inv_ls2 = ad::exp(-2.0 * ad::slice(c.log_lengthscales, 0, 1, ls++, 1));
    Tensor e = -0.5 * ad::square(diff) * inv_ls2;
    exponent = exponent.defined() ? exponent + e : e;
  }
  Tensor mag = ad::exp(c.log_magnitude);
  Tensor k = exponent.defined() ? mag * ad::exp(exponent) : mag * Tensor::full(N, M, 1.0);
  if (any_categorical) k = k * Tensor::constant(N, M, std::move(indicator));
  return k;
}

Tensor additive_kernel(const AdditiveGPConfig& config, std::size_t l, const Tensor& rows, const Tensor& cols,
                       bool include_individual) {
  const auto& dim = config.dims.at(l);
  Tensor k;
  for (std::size_t r = 0; r < dim.components.size(); ++r) {
    if (!include_individual && config.structure.individual == r) continue;
    Tensor kr = kernel_matrix(dim.components[r], rows, cols);
    k = k.defined() ? k + kr : kr;
  }
  if (!k.defined()) k = Tensor::zeros(rows.rows(), cols.rows());
  return k;
}

double prior_variance(const AdditiveGPConfig& config, std::size_t l) {
  double s = 0;
  for (const auto& c : config.dims.at(l).components) s += std::exp(c.log_magnitude.item());
  return s;
}

Tensor prior_covariance(const AdditiveGPConfig& config, const Tensor& X, std::size_t l) {
  return additive_kernel(config, l, X, X) + Tensor::identity(X.rows()) * config.dims.at(l).noise_variance();
}

CovarianceSplit split_covariance(const AdditiveGPConfig& config, const Tensor& X, std::size_t l,
                                 std::size_t id_column) {
  std::set<double> finished;
  for (std::size_t n = 0; n < X.rows(); ++n) {
    double id = X(n, id_column);
    if (n > 0 && X(n - 1, id_column) != id) {
      finished.insert(X(n - 1, id_column));
      if (finished.count(id)) throw NotSorted("instance blocks are interleaved at row " + std::to_string(n));
    }
  }
  CovarianceSplit s;
  s.low_rank_part = additive_kernel(config, l, X, X, false);
  s.block_part = individual_block(config, X, l);
  return s;
}

Tensor individual_block(const AdditiveGPConfig& config, const Tensor& X_p, std::size_t l) {
  const auto& dim = config.dims.at(l);
  Tensor noise = Tensor::identity(X_p.rows()) * dim.noise_variance();
  if (!config.structure.individual) return noise;
  return kernel_matrix(dim.components[*config.structure.individual], X_p, X_p) + noise;
}

}  // namespace hlvae
