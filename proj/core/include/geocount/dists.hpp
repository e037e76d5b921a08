#pragma once

#include <Eigen/Dense>
#include <string>

#include "geocount/counts.hpp"

namespace geocount {

enum class Family { poisson, neg_binomial, gaussian };

/// Number of parameter vectors emitted by the head: 1 for Poisson, 2 otherwise.
int param_count(Family family);
const char* family_name(Family family);
Family family_from_name(const std::string& name);

/// Per-category distribution parameters, strictly positive after the link.
///
///   Poisson:      a = rate lambda,  b unused (empty)
///   NegBinomial:  a = dispersion r, b = mean m   (variance m + m^2/r)
///   Gaussian:     a = mean mu,      b = stddev sigma
struct CountParams {
  Family family = Family::poisson;
  Eigen::VectorXd a;
  Eigen::VectorXd b;

  int categories() const { return static_cast<int>(a.size()); }
};

namespace dists {

/// Parameters are floored here after the softplus link so a pathological
/// float underflow can never reach log(0).
constexpr double kParamFloor = 1e-8;

/// Overflow-safe ln(1 + e^x). Strictly positive for all finite x.
double softplus(double x);

/// d/dx softplus(x) = logistic(x), in (0, 1).
double softplus_grad(double x);

/// Negative log likelihood of one count with analytic gradients.
/// grad_a / grad_b differentiate with respect to the first / second
/// distribution parameter; grad_b is 0 for Poisson.
struct Nll {
  double value = 0.0;
  double grad_a = 0.0;
  double grad_b = 0.0;
};

/// lambda - k ln(lambda) + ln k!;  d/dlambda = 1 - k/lambda.
Nll nll_poisson(double rate, long k);

/// Mean-dispersion negative binomial:
///   pmf(k) = Gamma(k+r)/(k! Gamma(r)) (r/(r+m))^r (m/(r+m))^k
/// Gradients use the digamma function.
Nll nll_neg_binomial(double dispersion, double mean, long k);

/// Density at the integer point, no continuity correction:
///   1/2 ln(2 pi sigma^2) + (k-mu)^2 / (2 sigma^2).
Nll nll_gaussian(double mean, double stddev, long k);

/// Family dispatch. For Poisson, b is ignored.
Nll nll(Family family, double a, double b, long k);

/// Probability mass (or density) by direct evaluation - the stable pmf
/// recurrence for Poisson/NB, the density formula for Gaussian. This is
/// a deliberately independent route from exp(-nll); tests compare the two.
double pmf_oracle(Family family, double a, double b, long k);

/// Apply the softplus link to raw head outputs and floor at kParamFloor.
/// raw_b is ignored for Poisson.
CountParams link_params(Family family, const Eigen::VectorXd& raw_a,
                        const Eigen::VectorXd& raw_b);

/// Mean over categories of the per-category NLL. The negation of this,
/// averaged over samples, is the reported mean log-likelihood.
double sample_nll(const CountParams& params, const ObjectHistogram& hist);

struct SampleNllGrad {
  double value = 0.0;
  Eigen::VectorXd grad_a;  // d value / d params.a
  Eigen::VectorXd grad_b;  // d value / d params.b (empty for Poisson)
};
SampleNllGrad sample_nll_grad(const CountParams& params,
                              const ObjectHistogram& hist);

/// sample_nll of link_params(raw) with gradients chained through the
/// softplus link (zero where the floor clamps).
struct RawNllGrad {
  double value = 0.0;
  Eigen::VectorXd grad_raw_a;
  Eigen::VectorXd grad_raw_b;
};
RawNllGrad sample_nll_raw_grad(Family family, const Eigen::VectorXd& raw_a,
                               const Eigen::VectorXd& raw_b,
                               const ObjectHistogram& hist);

/// Distribution mean per category: lambda, m, or mu.
Eigen::VectorXd expected_count(const CountParams& params);

}  // namespace dists
}  // namespace geocount
