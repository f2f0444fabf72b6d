#include "hlvae/networks.hpp"

#include <cmath>

#include "hlvae/error.hpp"

namespace hlvae {

using ad::Tensor;

Dense Dense::create(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
  return {Tensor::parameter(in, out, std::move(w)), Tensor::parameter(1, out, std::vector<double>(out, 0.0))};
}

Tensor Dense::operator()(const Tensor& x) const { return ad::matmul(x, weight) + bias; }

EncoderParams EncoderParams::create(std::size_t input_width, std::size_t hidden_width, std::size_t latent_dim,
                                    Rng& rng) {
  EncoderParams e;
  e.hidden = Dense::create(input_width, hidden_width, rng);
  e.output = Dense::create(hidden_width, 2 * latent_dim, rng);
  return e;
}

std::vector<Tensor> EncoderParams::parameters() const {
  return {hidden.weight, hidden.bias, output.weight, output.bias};
}

DecoderParams DecoderParams::create(const Schema& schema, std::size_t latent_dim, std::size_t hidden_width,
                                    std::size_t slot_width, Rng& rng) {
  DecoderParams d;
  d.hidden = Dense::create(latent_dim, hidden_width, rng);
  d.output = Dense::create(hidden_width, slot_width * schema.num_features(), rng);
  for (const auto& f : schema.features) d.heads.push_back(FeatureHead::create(f, slot_width, rng));
  return d;
}

std::vector<Tensor> DecoderParams::parameters() const {
  std::vector<Tensor> p{hidden.weight, hidden.bias, output.weight, output.bias};
  for (const auto& h : heads) {
    auto q = h.parameters();
    p.insert(p.end(), q.begin(), q.end());
  }
  return p;
}

LatentPosterior encode(const EncoderParams& enc, const Tensor& inputs) {
  if (inputs.cols() != enc.input_width()) {
    throw ShapeMismatch("encoder expects " + std::to_string(enc.input_width()) + " input columns, got " +
                        std::to_string(inputs.cols()));
  }
  const std::size_t L = enc.latent_dim();
  Tensor out = enc.output(ad::relu(enc.hidden(inputs)));
  return {ad::cols(out, 0, L), ad::softplus(ad::cols(out, L, L))};
}

LatentPosterior encode(const EncoderParams& enc, const EncodedMatrix& inputs) {
  return encode(enc, Tensor::constant(inputs.rows, inputs.width, inputs.data));
}

Tensor reparameterize(const LatentPosterior& q, const Tensor& noise) {
  if (noise.rows() != q.rows() || noise.cols() != q.latent_dim()) {
    throw ShapeMismatch("noise shape does not match the posterior");
  }
  return q.means + ad::sqrt(q.variances) * noise;
}

Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal();
  return Tensor::constant(rows, cols, std::move(v));
}

Tensor homogeneous_layer(const DecoderParams& dec, const Tensor& Z) {
  if (Z.cols() != dec.hidden.in()) {
    throw ShapeMismatch("decoder expects latent width " + std::to_string(dec.hidden.in()) + ", got " +
                        std::to_string(Z.cols()));
  }
  return dec.output(ad::relu(dec.hidden(Z)));
}

std::vector<BatchParams> decode(const DecoderParams& dec, const Tensor& Z) {
  Tensor A = homogeneous_layer(dec, Z);
  std::vector<BatchParams> out;
  out.reserve(dec.heads.size());
  std::size_t off = 0;
  for (const auto& h : dec.heads) {
    out.push_back(decode_head(ad::cols(A, off, h.slot), h));
    off += h.slot;
  }
  if (off != A.cols()) throw ShapeMismatch("head slots do not cover the homogeneous layer");
  return out;
}

}  // namespace hlvae
