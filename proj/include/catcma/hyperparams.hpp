#pragma once

#include "catcma/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace catcma {

/// Strategy constants for one problem shape. `weights` holds the
/// normalized recombination weights w_i/lambda (zero past mu).
template <class Scalar = double>
struct Hyperparameters {
  Eigen::Index lambda = 0;
  Eigen::Index mu = 0;
  VectorX<Scalar> weights;
  Scalar mu_eff = 0;
  Scalar c_m = 0;
  Scalar c_sigma = 0;
  Scalar d_sigma = 0;
  Scalar c_c = 0;
  Scalar c_1 = 0;
  Scalar c_mu = 0;
  Scalar alpha = 0;
  Scalar lambda_min_eig = 0;
  std::vector<Scalar> margins;  // q^min per categorical dimension
};

/// Margin keeping the top-half selection free of non-optimal categories
/// with probability >= 0.95 once the categorical distribution has converged:
/// (1 - 0.73^(1/n_ca)) / (k - 1).
template <class Scalar = double>
Scalar recommended_margin(Eigen::Index n_ca, Eigen::Index k) {
  if (n_ca < 1) throw ConfigError("recommended_margin: n_ca must be >= 1");
  if (k < 2) throw ConfigError("recommended_margin: k must be >= 2");
  const Scalar keep = std::pow(Scalar(0.73), Scalar(1) / Scalar(n_ca));
  return (Scalar(1) - keep) / Scalar(k - 1);
}

enum class MarginKind { Large, Small, SmallAlt, Recommended };

/// The margin settings compared in the ablation study. SmallAlt is the
/// variant 1/(n_ca (lambda K - 1)); Small is 1/(lambda n_ca (K - 1)).
template <class Scalar = double>
std::vector<Scalar> margin_variant(MarginKind kind, const ProblemDims& dims,
                                   Eigen::Index lambda) {
  dims.validate();
  if (lambda < 1) throw ConfigError("margin_variant: lambda must be >= 1");
  std::vector<Scalar> m(dims.categories.size());
  for (std::size_t n = 0; n < m.size(); ++n) {
    const Scalar k = Scalar(dims.categories[n]);
    switch (kind) {
      case MarginKind::Large:
        m[n] = Scalar(1) / (Scalar(dims.n_ca) * (k - 1));
        break;
      case MarginKind::Small:
        m[n] = Scalar(1) / (Scalar(lambda) * Scalar(dims.n_ca) * (k - 1));
        break;
      case MarginKind::SmallAlt:
        m[n] = Scalar(1) / (Scalar(dims.n_ca) * (Scalar(lambda) * k - 1));
        break;
      case MarginKind::Recommended:
        m[n] = recommended_margin<Scalar>(dims.n_ca, dims.categories[n]);
        break;
    }
  }
  return m;
}

/// Pr(X <= lambda - floor(lambda/2)) for X ~ Bin(lambda, xi), summed
/// exactly in log space so it stays usable for lambda up to ~1e4.
inline double binomial_tail_probability(long lambda, double xi) {
  if (lambda < 1) throw ConfigError("binomial_tail_probability: lambda must be >= 1");
  if (xi < 0.0 || xi > 1.0) throw ConfigError("binomial_tail_probability: xi must be in [0,1]");
  const long upper = lambda - lambda / 2;
  if (xi == 0.0) return 1.0;
  if (xi == 1.0) return upper >= lambda ? 1.0 : 0.0;
  const double log_xi = std::log(xi);
  const double log_omxi = std::log1p(-xi);
  const double lg_lam = std::lgamma(double(lambda) + 1.0);
  double total = 0.0;
  for (long i = 0; i <= upper; ++i) {
    const double log_binom =
        lg_lam - std::lgamma(double(i) + 1.0) - std::lgamma(double(lambda - i) + 1.0);
    total += std::exp(log_binom + double(i) * log_xi + double(lambda - i) * log_omxi);
  }
  return std::min(total, 1.0);
}

/// All strategy constants for the given shape, with the recommended margin.
template <class Scalar = double>
Hyperparameters<Scalar> default_hyperparameters(const ProblemDims& dims) {
  dims.validate();
  const Eigen::Index total = dims.total();
  if (total < 1) throw ConfigError("default_hyperparameters: n_co + n_ca must be >= 1");

  Hyperparameters<Scalar> hp;
  hp.lambda = 4 + static_cast<Eigen::Index>(std::floor(3.0 * std::log(double(total))));
  hp.mu = hp.lambda / 2;

  // ln((lambda+1)/2) - ln i for i <= mu, normalized to sum 1; zero past mu.
  hp.weights = VectorX<Scalar>::Zero(hp.lambda);
  const Scalar log_half = std::log(Scalar(hp.lambda + 1) / Scalar(2));
  Scalar raw_sum = 0;
  for (Eigen::Index i = 0; i < hp.mu; ++i) {
    hp.weights[i] = log_half - std::log(Scalar(i + 1));
    raw_sum += hp.weights[i];
  }
  hp.weights.head(hp.mu) /= raw_sum;
  hp.mu_eff = Scalar(1) / hp.weights.head(hp.mu).squaredNorm();

  const Scalar n_co = Scalar(dims.n_co);
  const Scalar n_ca = Scalar(dims.n_ca);
  const Scalar mw = hp.mu_eff;
  hp.c_m = Scalar(1);
  hp.c_sigma = (mw + 2) / (n_co + mw + 5);
  hp.d_sigma =
      1 + hp.c_sigma + 2 * std::max(Scalar(0), std::sqrt((mw - 1) / (n_co + 1)) - 1);
  // c_c is singular at n_co = 0; use its limit 1/2 there (the continuous
  // block is empty, so the value is never consumed).
  hp.c_c = dims.n_co > 0 ? (4 + mw / n_co) / (n_co + 4 + 2 * mw / n_co) : Scalar(0.5);
  hp.c_1 = 2 / ((n_ca + Scalar(1.3)) * (n_ca + Scalar(1.3)) + mw);
  hp.c_mu = std::min(1 - hp.c_1,
                     2 * (mw - 2 + 1 / mw) / ((n_co + 2) * (n_co + 2) + mw));
  hp.alpha = Scalar(1.5);
  hp.lambda_min_eig = Scalar(1e-30);
  hp.margins = margin_variant<Scalar>(MarginKind::Recommended, dims, hp.lambda);
  return hp;
}

}  // namespace catcma
