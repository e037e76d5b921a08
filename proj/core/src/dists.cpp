#include "geocount/dists.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <numbers>

#include "geocount/errors.hpp"

namespace geocount {

int param_count(Family family) {
  return family == Family::poisson ? 1 : 2;
}

const char* family_name(Family family) {
  switch (family) {
    case Family::poisson: return "poisson";
    case Family::neg_binomial: return "nb";
    case Family::gaussian: return "gaussian";
  }
  return "?";
}

Family family_from_name(const std::string& name) {
  if (name == "poisson") return Family::poisson;
  if (name == "nb" || name == "neg_binomial" || name == "negbinomial")
    return Family::neg_binomial;
  if (name == "gaussian") return Family::gaussian;
  throw ConfigError("unknown family '" + name +
                    "' (expected poisson, nb or gaussian)");
}

namespace dists {

namespace {

void require_finite(double x, const char* what) {
  if (!std::isfinite(x))
    throw NumericError(std::string(what) + " must be finite");
}

void require_count(long k) {
  if (k < 0) throw DomainError("count must be non-negative");
}

}  // namespace

double softplus(double x) {
  require_finite(x, "softplus input");
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_grad(double x) {
  require_finite(x, "softplus input");
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Nll nll_poisson(double rate, long k) {
  require_finite(rate, "poisson rate");
  require_count(k);
  if (rate <= 0.0) throw DomainError("poisson rate must be positive");
  Nll out;
  const double kd = static_cast<double>(k);
  out.value = rate - kd * std::log(rate) + std::lgamma(kd + 1.0);
  out.grad_a = 1.0 - kd / rate;
  return out;
}

Nll nll_neg_binomial(double dispersion, double mean, long k) {
  require_finite(dispersion, "nb dispersion");
  require_finite(mean, "nb mean");
  require_count(k);
  if (dispersion <= 0.0 || mean <= 0.0)
    throw DomainError("nb parameters must be positive");
  const double r = dispersion;
  const double m = mean;
  const double kd = static_cast<double>(k);
  Nll out;
  out.value = -std::lgamma(kd + r) + std::lgamma(r) + std::lgamma(kd + 1.0) -
              r * std::log(r) + r * std::log(r + m) - kd * std::log(m) +
              kd * std::log(r + m);
  out.grad_a = -boost::math::digamma(kd + r) + boost::math::digamma(r) +
               std::log((r + m) / r) + (r + kd) / (r + m) - 1.0;
  out.grad_b = (r + kd) / (r + m) - kd / m;
  return out;
}

Nll nll_gaussian(double mean, double stddev, long k) {
  require_finite(mean, "gaussian mean");
  require_finite(stddev, "gaussian stddev");
  require_count(k);
  if (stddev <= 0.0) throw DomainError("gaussian stddev must be positive");
  const double kd = static_cast<double>(k);
  const double z = kd - mean;
  const double var = stddev * stddev;
  Nll out;
  out.value = 0.5 * std::log(2.0 * std::numbers::pi * var) + z * z / (2.0 * var);
  out.grad_a = (mean - kd) / var;
  out.grad_b = (1.0 - z * z / var) / stddev;
  return out;
}

Nll nll(Family family, double a, double b, long k) {
  switch (family) {
    case Family::poisson: return nll_poisson(a, k);
    case Family::neg_binomial: return nll_neg_binomial(a, b, k);
    case Family::gaussian: return nll_gaussian(a, b, k);
  }
  throw ConfigError("bad family");
}

double pmf_oracle(Family family, double a, double b, long k) {
  require_count(k);
  switch (family) {
    case Family::poisson: {
      if (a <= 0.0) throw DomainError("poisson rate must be positive");
      double p = std::exp(-a);
      for (long i = 1; i <= k; ++i) p *= a / static_cast<double>(i);
      return p;
    }
    case Family::neg_binomial: {
      if (a <= 0.0 || b <= 0.0)
        throw DomainError("nb parameters must be positive");
      const double q = b / (a + b);
      double p = std::pow(a / (a + b), a);
      for (long i = 1; i <= k; ++i)
        p *= (static_cast<double>(i) - 1.0 + a) / static_cast<double>(i) * q;
      return p;
    }
    case Family::gaussian: {
      if (b <= 0.0) throw DomainError("gaussian stddev must be positive");
      const double z = (static_cast<double>(k) - a) / b;
      return std::exp(-0.5 * z * z) / (b * std::sqrt(2.0 * std::numbers::pi));
    }
  }
  throw ConfigError("bad family");
}

CountParams link_params(Family family, const Eigen::VectorXd& raw_a,
                        const Eigen::VectorXd& raw_b) {
  const bool two = param_count(family) == 2;
  if (two && raw_b.size() != raw_a.size())
    throw ShapeError("raw head outputs have mismatched lengths");
  CountParams params;
  params.family = family;
  params.a.resize(raw_a.size());
  for (Eigen::Index i = 0; i < raw_a.size(); ++i)
    params.a[i] = std::max(softplus(raw_a[i]), kParamFloor);
  if (two) {
    params.b.resize(raw_b.size());
    for (Eigen::Index i = 0; i < raw_b.size(); ++i)
      params.b[i] = std::max(softplus(raw_b[i]), kParamFloor);
  }
  return params;
}

namespace {

void check_pair(const CountParams& params, const ObjectHistogram& hist) {
  if (params.categories() != hist.categories())
    throw ShapeError("params have " + std::to_string(params.categories()) +
                     " categories but histogram has " +
                     std::to_string(hist.categories()));
  if (params.categories() == 0) throw ShapeError("empty parameter vector");
  if (param_count(params.family) == 2 && params.b.size() != params.a.size())
    throw ShapeError("two-parameter family with mismatched vectors");
}

}  // namespace

double sample_nll(const CountParams& params, const ObjectHistogram& hist) {
  check_pair(params, hist);
  const int c_count = params.categories();
  double sum = 0.0;
  for (int c = 0; c < c_count; ++c) {
    const double b = params.b.size() > 0 ? params.b[c] : 0.0;
    sum += nll(params.family, params.a[c], b, hist.counts[static_cast<std::size_t>(c)]).value;
  }
  return sum / static_cast<double>(c_count);
}

SampleNllGrad sample_nll_grad(const CountParams& params,
                              const ObjectHistogram& hist) {
  check_pair(params, hist);
  const int c_count = params.categories();
  const double inv = 1.0 / static_cast<double>(c_count);
  SampleNllGrad out;
  out.grad_a.resize(c_count);
  if (param_count(params.family) == 2) out.grad_b.resize(c_count);
  double sum = 0.0;
  for (int c = 0; c < c_count; ++c) {
    const double b = params.b.size() > 0 ? params.b[c] : 0.0;
    const Nll term =
        nll(params.family, params.a[c], b, hist.counts[static_cast<std::size_t>(c)]);
    sum += term.value;
    out.grad_a[c] = term.grad_a * inv;
    if (out.grad_b.size() > 0) out.grad_b[c] = term.grad_b * inv;
  }
  out.value = sum * inv;
  return out;
}

RawNllGrad sample_nll_raw_grad(Family family, const Eigen::VectorXd& raw_a,
                               const Eigen::VectorXd& raw_b,
                               const ObjectHistogram& hist) {
  const CountParams params = link_params(family, raw_a, raw_b);
  const SampleNllGrad inner = sample_nll_grad(params, hist);
  RawNllGrad out;
  out.value = inner.value;
  out.grad_raw_a.resize(raw_a.size());
  for (Eigen::Index i = 0; i < raw_a.size(); ++i) {
    // parameters pinned at the floor do not respond to the raw output
    const bool clamped = softplus(raw_a[i]) < kParamFloor;
    out.grad_raw_a[i] = clamped ? 0.0 : inner.grad_a[i] * softplus_grad(raw_a[i]);
  }
  if (param_count(family) == 2) {
    out.grad_raw_b.resize(raw_b.size());
    for (Eigen::Index i = 0; i < raw_b.size(); ++i) {
      const bool clamped = softplus(raw_b[i]) < kParamFloor;
      out.grad_raw_b[i] =
          clamped ? 0.0 : inner.grad_b[i] * softplus_grad(raw_b[i]);
    }
  }
  return out;
}

Eigen::VectorXd expected_count(const CountParams& params) {
  switch (params.family) {
    case Family::poisson: return params.a;
    case Family::neg_binomial: return params.b;
    case Family::gaussian: return params.a;
  }
  throw ConfigError("bad family");
}

}  // namespace dists
}  // namespace geocount
