#pragma once

#include "catcma/categorical.hpp"
#include "catcma/gaussian.hpp"
#include "catcma/hyperparams.hpp"
#include "catcma/types.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>

namespace catcma {

enum class Mode { Full, NoEnhancement };

template <class Scalar = double>
struct TerminationCriteria {
  std::optional<long> max_evaluations;
  std::optional<Scalar> target_fitness;
  std::optional<long> max_iterations;
  // Both thresholds must be set and hit for the converged criterion.
  std::optional<Scalar> min_sigma;
  std::optional<Scalar> min_delta;
};

enum class TerminationReason { EvaluationBudget, TargetFitness, IterationLimit, Converged };

inline const char* to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::EvaluationBudget: return "evaluation-budget";
    case TerminationReason::TargetFitness: return "target-fitness";
    case TerminationReason::IterationLimit: return "iteration-limit";
    case TerminationReason::Converged: return "converged";
  }
  return "unknown";
}

/// Initial joint distribution. Unset cov defaults to identity, unset q to
/// uniform blocks.
template <class Scalar = double>
struct JointInit {
  VectorX<Scalar> mean;
  Scalar sigma = 1;
  std::optional<MatrixX<Scalar>> cov;
  std::optional<BlockList<Scalar>> q;
};

/// Ask/tell optimizer over the joint Gaussian x categorical distribution.
/// Ask samples lambda candidates; tell consumes their fitness values and
/// performs one full parameter update. Ask and tell must strictly alternate.
template <class Scalar = double>
class CatCma {
public:
  struct Best {
    VectorX<Scalar> x;
    OneHotSample<Scalar> c;
    Scalar f = std::numeric_limits<Scalar>::infinity();
  };

  CatCma(const ProblemDims& dims, const JointInit<Scalar>& init, Mode mode = Mode::Full,
         std::uint64_t seed = 0,
         std::optional<Hyperparameters<Scalar>> hp = std::nullopt)
      : dims_(dims),
        mode_(mode),
        seed_(seed),
        rng_(seed) {
    dims_.validate();
    hp_ = hp ? std::move(*hp) : default_hyperparameters<Scalar>(dims_);
    if (Eigen::Index(hp_.margins.size()) != dims_.n_ca)
      throw ConfigError("hyperparameters carry the wrong number of margins");
    for (std::size_t n = 0; n < hp_.margins.size(); ++n)
      if (!(hp_.margins[n] > 0) || !(hp_.margins[n] < Scalar(1) / Scalar(dims_.categories[n])))
        throw ConfigError("margin must satisfy 0 < m < 1/K in every dimension");

    if (init.mean.size() != dims_.n_co)
      throw ConfigError("initial mean size does not match n_co");
    if (!(init.sigma > 0)) throw ConfigError("initial sigma must be positive");
    gaussian_.mean = init.mean;
    gaussian_.sigma = init.sigma;
    sigma0_ = init.sigma;
    gaussian_.cov = init.cov ? *init.cov
                             : MatrixX<Scalar>::Identity(dims_.n_co, dims_.n_co);
    if (gaussian_.cov.rows() != dims_.n_co || gaussian_.cov.cols() != dims_.n_co)
      throw ConfigError("initial covariance shape does not match n_co");
    gaussian_.path_sigma = VectorX<Scalar>::Zero(dims_.n_co);
    gaussian_.path_cov = VectorX<Scalar>::Zero(dims_.n_co);
    gaussian_.iteration = 0;

    categorical_ = uniform_categorical_state<Scalar>(dims_);
    if (init.q) {
      if (Eigen::Index(init.q->size()) != dims_.n_ca)
        throw ConfigError("initial q has the wrong number of blocks");
      for (Eigen::Index n = 0; n < dims_.n_ca; ++n) {
        const auto& block = (*init.q)[n];
        if (block.size() != dims_.categories[n])
          throw ConfigError("initial q block size does not match K");
        if (block.minCoeff() < 0 || std::abs(block.sum() - 1) > Scalar(1e-12))
          throw ConfigError("initial q block is not a probability simplex");
      }
      categorical_.q = *init.q;
    }
  }

  const ProblemDims& dims() const { return dims_; }
  const Hyperparameters<Scalar>& hyperparameters() const { return hp_; }
  const GaussianState<Scalar>& gaussian() const { return gaussian_; }
  const CategoricalState<Scalar>& categorical() const { return categorical_; }
  Mode mode() const { return mode_; }
  std::uint64_t seed() const { return seed_; }
  long eval_count() const { return eval_count_; }
  Eigen::Index iteration() const { return gaussian_.iteration; }
  const Best& best() const { return best_; }
  bool awaiting_tell() const { return awaiting_tell_; }

  /// Run the state validator after every tell (tests and debugging).
  void set_validation(bool on) { validate_after_tell_ = on; }

  const std::vector<Candidate<Scalar>>& ask() {
    if (awaiting_tell_) throw ProtocolError("ask called again before tell");
    pending_.assign(std::size_t(hp_.lambda), Candidate<Scalar>{});
    if (dims_.n_co > 0) {
      const ContinuousSamples<Scalar> cont =
          sample_continuous(gaussian_, hp_.lambda, rng_);
      pending_steps_ = cont.y;
      for (Eigen::Index i = 0; i < hp_.lambda; ++i) pending_[i].x = cont.x.col(i);
    } else {
      pending_steps_.resize(0, hp_.lambda);
      for (auto& cand : pending_) cand.x = VectorX<Scalar>();
    }
    std::vector<OneHotSample<Scalar>> cats =
        sample_categorical(categorical_, hp_.lambda, rng_);
    for (Eigen::Index i = 0; i < hp_.lambda; ++i) pending_[i].c = std::move(cats[i]);
    awaiting_tell_ = true;
    return pending_;
  }

  void tell(const std::vector<Scalar>& fitness) {
    if (!awaiting_tell_) throw ProtocolError("tell called without a pending ask");
    if (Eigen::Index(fitness.size()) != hp_.lambda)
      throw ProtocolError("tell expects one fitness per asked candidate");
    for (const Scalar f : fitness)
      if (!std::isfinite(f))
        throw std::invalid_argument("tell rejects non-finite fitness values");

    for (Eigen::Index i = 0; i < hp_.lambda; ++i) pending_[i].fitness = fitness[i];
    eval_count_ += hp_.lambda;

    // Rank ascending by fitness, ties broken by sample index.
    std::vector<Eigen::Index> order(std::size_t(hp_.lambda));
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      if (fitness[a] != fitness[b]) return fitness[a] < fitness[b];
      return a < b;
    });

    if (fitness[order[0]] < best_.f) {
      best_.f = fitness[order[0]];
      best_.x = pending_[order[0]].x;
      best_.c = pending_[order[0]].c;
    }

    RankedSteps<Scalar> ranked;
    ranked.weights = hp_.weights;
    ranked.steps.resize(dims_.n_co, hp_.lambda);
    std::vector<OneHotSample<Scalar>> ranked_cats(std::size_t(hp_.lambda));
    for (Eigen::Index i = 0; i < hp_.lambda; ++i) {
      ranked.steps.col(i) = pending_steps_.col(order[i]);
      ranked_cats[i] = pending_[order[i]].c;
    }
    const std::span<const OneHotSample<Scalar>> cat_span(ranked_cats);

    if (mode_ == Mode::Full) {
      if (dims_.n_co > 0) {
        const VectorX<Scalar> mean_new = update_mean(gaussian_, ranked, hp_);
        const PathUpdate<Scalar> paths = update_evolution_paths(gaussian_, ranked, hp_);
        const MatrixX<Scalar> cov_new =
            update_covariance(gaussian_, ranked, paths.path_cov, paths.h_sigma, hp_);
        Scalar sigma_new = update_step_size(gaussian_, paths.path_sigma, hp_);

        const BlockList<Scalar> grad =
            estimated_natural_gradient(categorical_, cat_span, hp_.weights);
        CategoricalState<Scalar> cat_new = asng_update(categorical_, grad, hp_);

        sigma_new = clamp_step_size(sigma_new, cov_new, hp_.lambda_min_eig);
        cat_new.q = margin_correction(cat_new, hp_.margins);

        gaussian_.mean = mean_new;
        gaussian_.path_sigma = paths.path_sigma;
        gaussian_.path_cov = paths.path_cov;
        gaussian_.cov = cov_new;
        gaussian_.sigma = sigma_new;
        categorical_ = std::move(cat_new);
      } else {
        const BlockList<Scalar> grad =
            estimated_natural_gradient(categorical_, cat_span, hp_.weights);
        CategoricalState<Scalar> cat_new = asng_update(categorical_, grad, hp_);
        cat_new.q = margin_correction(cat_new, hp_.margins);
        categorical_ = std::move(cat_new);
      }
    } else {
      if (dims_.n_co > 0) {
        // c_m = 1 and sigma frozen at sigma0; rank-mu only, no paths, no clamp.
        gaussian_.mean += sigma0_ * ranked.weighted_step();
        gaussian_.cov = update_covariance_rank_mu(gaussian_, ranked, hp_);
      }
      std::vector<Scalar> eta(std::size_t(dims_.n_ca));
      for (Eigen::Index n = 0; n < dims_.n_ca; ++n)
        eta[std::size_t(n)] =
            Scalar(1) / (Scalar(dims_.n_ca) * Scalar(dims_.categories[n] - 1));
      categorical_.q = igo_q_update(categorical_, cat_span, hp_.weights, eta);
      categorical_.q = margin_correction(categorical_, hp_.margins);
    }

    gaussian_.iteration += 1;
    awaiting_tell_ = false;
    if (validate_after_tell_) validate();
  }

  std::optional<TerminationReason> should_terminate(
      const TerminationCriteria<Scalar>& criteria) const {
    if (criteria.max_evaluations && eval_count_ >= *criteria.max_evaluations)
      return TerminationReason::EvaluationBudget;
    if (criteria.target_fitness && best_.f <= *criteria.target_fitness)
      return TerminationReason::TargetFitness;
    if (criteria.max_iterations && gaussian_.iteration >= *criteria.max_iterations)
      return TerminationReason::IterationLimit;
    if (criteria.min_sigma && criteria.min_delta &&
        gaussian_.sigma < *criteria.min_sigma && categorical_.delta < *criteria.min_delta)
      return TerminationReason::Converged;
    return std::nullopt;
  }

  /// Throws StateCorruptionError when any distribution invariant is broken.
  void validate() const {
    if (!(gaussian_.sigma > 0) || !std::isfinite(double(gaussian_.sigma)))
      throw StateCorruptionError("sigma must be positive and finite");
    if (dims_.n_co > 0) {
      if (!gaussian_.mean.allFinite() || !gaussian_.cov.allFinite() ||
          !gaussian_.path_sigma.allFinite() || !gaussian_.path_cov.allFinite())
        throw StateCorruptionError("gaussian state contains non-finite values");
      const Scalar scale = std::max(Scalar(1), gaussian_.cov.cwiseAbs().maxCoeff());
      if (((gaussian_.cov - gaussian_.cov.transpose()).cwiseAbs().maxCoeff()) >
          Scalar(1e-10) * scale)
        throw StateCorruptionError("covariance lost symmetry");
      Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(gaussian_.cov,
                                                        Eigen::EigenvaluesOnly);
      const Scalar min_eig = es.eigenvalues().minCoeff();
      if (!(min_eig > 0))
        throw StateCorruptionError("covariance is not positive definite");
      if (mode_ == Mode::Full &&
          gaussian_.sigma * gaussian_.sigma * min_eig <
              hp_.lambda_min_eig * (1 - Scalar(1e-10)))
        throw StateCorruptionError("min eig(sigma^2 C) fell below the floor");
    }
    if (!(categorical_.delta > 0) || !std::isfinite(double(categorical_.delta)))
      throw StateCorruptionError("delta must be positive and finite");
    if (!(categorical_.gamma >= 0))
      throw StateCorruptionError("gamma must be nonnegative");
    for (Eigen::Index n = 0; n < dims_.n_ca; ++n) {
      const auto& block = categorical_.q[std::size_t(n)];
      if (std::abs(block.sum() - 1) > Scalar(1e-12))
        throw StateCorruptionError("simplex block does not sum to one");
      if (block.minCoeff() < hp_.margins[std::size_t(n)] - Scalar(1e-12))
        throw StateCorruptionError("simplex block violates the margin");
    }
  }

  void save(std::ostream& os) const;
  static CatCma load(std::istream& is);

private:
  CatCma() = default;

  ProblemDims dims_;
  Hyperparameters<Scalar> hp_;
  Mode mode_ = Mode::Full;
  std::uint64_t seed_ = 0;
  std::mt19937_64 rng_;
  GaussianState<Scalar> gaussian_;
  CategoricalState<Scalar> categorical_;
  Scalar sigma0_ = 1;
  long eval_count_ = 0;
  Best best_;
  bool awaiting_tell_ = false;
  bool validate_after_tell_ = false;
  std::vector<Candidate<Scalar>> pending_;
  MatrixX<Scalar> pending_steps_;
};

namespace detail {

template <class Scalar>
std::string scalar_text(Scalar v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<Scalar>::max_digits10);
  os << v;
  return os.str();
}

template <class Scalar>
std::string vector_text(const VectorX<Scalar>& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += scalar_text(v[i]);
  }
  return out;
}

class KeyValueReader {
public:
  explicit KeyValueReader(std::istream& is) {
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      entries_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
  }

  const std::string& get(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("snapshot is missing key: " + key);
    return it->second;
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  template <class T>
  T value(const std::string& key) const {
    std::istringstream is(get(key));
    T out;
    is >> out;
    if (is.fail()) throw ConfigError("snapshot has a malformed value for key: " + key);
    return out;
  }

  template <class Scalar>
  VectorX<Scalar> vector(const std::string& key, Eigen::Index size) const {
    std::istringstream is(get(key));
    VectorX<Scalar> out(size);
    for (Eigen::Index i = 0; i < size; ++i) {
      is >> out[i];
      if (is.fail()) throw ConfigError("snapshot vector too short for key: " + key);
    }
    return out;
  }

private:
  std::map<std::string, std::string> entries_;
};

}  // namespace detail

template <class Scalar>
void CatCma<Scalar>::save(std::ostream& os) const {
  if (awaiting_tell_)
    throw ProtocolError("cannot snapshot while a tell is pending");
  using detail::scalar_text;
  using detail::vector_text;
  os << "format = catcma-state-v1\n";
  os << "mode = " << (mode_ == Mode::Full ? "full" : "no-enhancement") << "\n";
  os << "seed = " << seed_ << "\n";
  os << "eval_count = " << eval_count_ << "\n";
  os << "n_co = " << dims_.n_co << "\n";
  os << "n_ca = " << dims_.n_ca << "\n";
  os << "categories =";
  for (Eigen::Index k : dims_.categories) os << ' ' << k;
  os << "\n";
  os << "hp_lambda = " << hp_.lambda << "\n";
  os << "hp_mu = " << hp_.mu << "\n";
  os << "hp_weights = " << vector_text(hp_.weights) << "\n";
  os << "hp_mu_eff = " << scalar_text(hp_.mu_eff) << "\n";
  os << "hp_c_m = " << scalar_text(hp_.c_m) << "\n";
  os << "hp_c_sigma = " << scalar_text(hp_.c_sigma) << "\n";
  os << "hp_d_sigma = " << scalar_text(hp_.d_sigma) << "\n";
  os << "hp_c_c = " << scalar_text(hp_.c_c) << "\n";
  os << "hp_c_1 = " << scalar_text(hp_.c_1) << "\n";
  os << "hp_c_mu = " << scalar_text(hp_.c_mu) << "\n";
  os << "hp_alpha = " << scalar_text(hp_.alpha) << "\n";
  os << "hp_lambda_min_eig = " << scalar_text(hp_.lambda_min_eig) << "\n";
  os << "hp_margins =";
  for (Scalar m : hp_.margins) os << ' ' << scalar_text(m);
  os << "\n";
  os << "g_iteration = " << gaussian_.iteration << "\n";
  os << "g_sigma = " << scalar_text(gaussian_.sigma) << "\n";
  os << "g_sigma0 = " << scalar_text(sigma0_) << "\n";
  os << "g_mean = " << vector_text(gaussian_.mean) << "\n";
  VectorX<Scalar> cov_flat(dims_.n_co * dims_.n_co);
  for (Eigen::Index r = 0; r < dims_.n_co; ++r)
    for (Eigen::Index c = 0; c < dims_.n_co; ++c)
      cov_flat[r * dims_.n_co + c] = gaussian_.cov(r, c);
  os << "g_cov = " << vector_text(cov_flat) << "\n";
  os << "g_path_sigma = " << vector_text(gaussian_.path_sigma) << "\n";
  os << "g_path_cov = " << vector_text(gaussian_.path_cov) << "\n";
  for (Eigen::Index n = 0; n < dims_.n_ca; ++n)
    os << "c_q_" << n << " = " << vector_text(categorical_.q[std::size_t(n)]) << "\n";
  os << "c_s = " << vector_text(categorical_.s) << "\n";
  os << "c_gamma = " << scalar_text(categorical_.gamma) << "\n";
  os << "c_delta = " << scalar_text(categorical_.delta) << "\n";
  if (std::isfinite(double(best_.f))) {
    os << "best_f = " << scalar_text(best_.f) << "\n";
    os << "best_x = " << vector_text(best_.x) << "\n";
    os << "best_c =";
    for (std::size_t n = 0; n < best_.c.blocks.size(); ++n)
      os << ' ' << best_.c.selected(n);
    os << "\n";
  }
  os << "rng = " << rng_ << "\n";
}

template <class Scalar>
CatCma<Scalar> CatCma<Scalar>::load(std::istream& is) {
  detail::KeyValueReader kv(is);
  if (kv.get("format") != "catcma-state-v1")
    throw ConfigError("unsupported snapshot format");

  CatCma out;
  out.dims_.n_co = kv.value<Eigen::Index>("n_co");
  out.dims_.n_ca = kv.value<Eigen::Index>("n_ca");
  {
    std::istringstream cs(kv.get("categories"));
    Eigen::Index k;
    while (cs >> k) out.dims_.categories.push_back(k);
  }
  out.dims_.validate();

  const std::string mode = kv.get("mode");
  if (mode == "full") out.mode_ = Mode::Full;
  else if (mode == "no-enhancement") out.mode_ = Mode::NoEnhancement;
  else throw ConfigError("snapshot has an unknown mode: " + mode);

  out.seed_ = kv.value<std::uint64_t>("seed");
  out.eval_count_ = kv.value<long>("eval_count");

  out.hp_.lambda = kv.value<Eigen::Index>("hp_lambda");
  out.hp_.mu = kv.value<Eigen::Index>("hp_mu");
  out.hp_.weights = kv.vector<Scalar>("hp_weights", out.hp_.lambda);
  out.hp_.mu_eff = kv.value<Scalar>("hp_mu_eff");
  out.hp_.c_m = kv.value<Scalar>("hp_c_m");
  out.hp_.c_sigma = kv.value<Scalar>("hp_c_sigma");
  out.hp_.d_sigma = kv.value<Scalar>("hp_d_sigma");
  out.hp_.c_c = kv.value<Scalar>("hp_c_c");
  out.hp_.c_1 = kv.value<Scalar>("hp_c_1");
  out.hp_.c_mu = kv.value<Scalar>("hp_c_mu");
  out.hp_.alpha = kv.value<Scalar>("hp_alpha");
  out.hp_.lambda_min_eig = kv.value<Scalar>("hp_lambda_min_eig");
  {
    const VectorX<Scalar> m = kv.vector<Scalar>("hp_margins", out.dims_.n_ca);
    out.hp_.margins.assign(m.data(), m.data() + m.size());
  }

  out.gaussian_.iteration = kv.value<Eigen::Index>("g_iteration");
  out.gaussian_.sigma = kv.value<Scalar>("g_sigma");
  out.sigma0_ = kv.value<Scalar>("g_sigma0");
  out.gaussian_.mean = kv.vector<Scalar>("g_mean", out.dims_.n_co);
  {
    const VectorX<Scalar> flat =
        kv.vector<Scalar>("g_cov", out.dims_.n_co * out.dims_.n_co);
    out.gaussian_.cov.resize(out.dims_.n_co, out.dims_.n_co);
    for (Eigen::Index r = 0; r < out.dims_.n_co; ++r)
      for (Eigen::Index c = 0; c < out.dims_.n_co; ++c)
        out.gaussian_.cov(r, c) = flat[r * out.dims_.n_co + c];
  }
  out.gaussian_.path_sigma = kv.vector<Scalar>("g_path_sigma", out.dims_.n_co);
  out.gaussian_.path_cov = kv.vector<Scalar>("g_path_cov", out.dims_.n_co);

  out.categorical_.q.clear();
  for (Eigen::Index n = 0; n < out.dims_.n_ca; ++n)
    out.categorical_.q.push_back(kv.vector<Scalar>("c_q_" + std::to_string(n),
                                                   out.dims_.categories[std::size_t(n)]));
  out.categorical_.s = kv.vector<Scalar>("c_s", out.dims_.reduced_cat_dim());
  out.categorical_.gamma = kv.value<Scalar>("c_gamma");
  out.categorical_.delta = kv.value<Scalar>("c_delta");

  if (kv.has("best_f")) {
    out.best_.f = kv.value<Scalar>("best_f");
    out.best_.x = kv.vector<Scalar>("best_x", out.dims_.n_co);
    std::istringstream cs(kv.get("best_c"));
    std::vector<Eigen::Index> picks;
    Eigen::Index k;
    while (cs >> k) picks.push_back(k);
    out.best_.c = make_one_hot_sample<Scalar>(out.dims_, picks);
  }

  {
    std::istringstream rs(kv.get("rng"));
    rs >> out.rng_;
    if (rs.fail()) throw ConfigError("snapshot has a malformed rng state");
  }
  return out;
}

}  // namespace catcma
