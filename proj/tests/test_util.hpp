#pragma once

// Shared helpers: central finite differences and small table builders.

#include <cmath>
#include <functional>
#include <vector>

#include "hlvae/data.hpp"
#include "hlvae/tensor.hpp"

namespace testutil {

using Fn = std::function<double(const std::vector<double>&)>;

inline std::vector<double> central_diff(const Fn& f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(numeric[i])));
  return worst;
}

// Schema with covariates id (instance), time, and the given features.
inline hlvae::Schema longitudinal_schema(std::vector<hlvae::FeatureSpec> features, bool with_group = false) {
  hlvae::Schema s;
  s.features = std::move(features);
  hlvae::CovariateSpec id{"id", hlvae::CovariateKind::categorical, true, false};
  hlvae::CovariateSpec time{"time", hlvae::CovariateKind::continuous, false, true};
  s.covariates = {id, time};
  if (with_group) s.covariates.push_back({"group", hlvae::CovariateKind::binary, false, false});
  return s;
}

// Adaptive Simpson quadrature.
inline double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
               double whole, double tol, int depth) {
  const double m = 0.5 * (a + b), lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm), right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol) return left + right + (left + right - whole) / 15;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return simpson(f, a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), 1e-12, 50);
}

inline hlvae::FeatureSpec gaussian(const std::string& name) {
  return hlvae::FeatureSpec::make(name, hlvae::Likelihood::gaussian);
}

}  // namespace testutil
