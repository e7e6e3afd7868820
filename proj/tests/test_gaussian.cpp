#include "catcma/gaussian.hpp"

#include "doctest.h"

#include <cmath>
#include <random>

using namespace catcma;

namespace {

GaussianState<double> identity_state(Eigen::Index n) {
  GaussianState<double> st;
  st.mean = VectorX<double>::Zero(n);
  st.sigma = 1.0;
  st.cov = MatrixX<double>::Identity(n, n);
  st.path_sigma = VectorX<double>::Zero(n);
  st.path_cov = VectorX<double>::Zero(n);
  return st;
}

// Random SPD matrix with eigenvalues in [1/sqrt(cond), sqrt(cond)].
MatrixX<double> random_spd(Eigen::Index n, double cond, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0, 1);
  MatrixX<double> a(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) a(r, c) = gauss(rng);
  const Eigen::HouseholderQR<MatrixX<double>> qr(a);
  const MatrixX<double> q = qr.householderQ();
  VectorX<double> eigs(n);
  std::uniform_real_distribution<double> unit(0, 1);
  for (Eigen::Index i = 0; i < n; ++i)
    eigs[i] = std::pow(cond, unit(rng) - 0.5);
  return q * eigs.asDiagonal() * q.transpose();
}

}  // namespace

TEST_CASE("expected norm approximation") {
  CHECK(expected_norm<double>(1) == doctest::Approx(0.79761904761904767).epsilon(1e-15));
  CHECK(expected_norm<double>(5) == doctest::Approx(2.1285237557247996).epsilon(1e-15));
  CHECK(expected_norm<double>(1000000) / std::sqrt(1e6) ==
        doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(expected_norm<double>(0), ConfigError);
}

TEST_CASE("sampling is an affine map of the unit draws") {
  GaussianState<double> st = identity_state(2);
  st.mean << 5.0, 5.0;
  st.sigma = 2.0;
  std::mt19937_64 rng(3);
  const auto s = sample_continuous(st, 64, rng);
  for (Eigen::Index i = 0; i < 64; ++i)
    CHECK((s.x.col(i) - (st.mean + 2.0 * s.y.col(i))).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sampling empirical mean stays within the standard-error bound") {
  GaussianState<double> st = identity_state(3);
  std::mt19937_64 rng(17);
  const Eigen::Index n_samples = 100000;
  const auto s = sample_continuous(st, n_samples, rng);
  const VectorX<double> mean = s.x.rowwise().mean();
  const double bound = 4.0 * std::sqrt(1.0 / double(n_samples));
  for (Eigen::Index d = 0; d < 3; ++d) CHECK(std::abs(mean[d]) < bound);
}

TEST_CASE("sampling is deterministic under a fixed seed") {
  GaussianState<double> st = identity_state(4);
  std::mt19937_64 a(99), b(99);
  const auto s1 = sample_continuous(st, 16, a);
  const auto s2 = sample_continuous(st, 16, b);
  CHECK(s1.x == s2.x);
  CHECK(s1.y == s2.y);
}

TEST_CASE("sampling rejects a corrupted covariance") {
  GaussianState<double> st = identity_state(2);
  st.cov(0, 0) = -1.0;
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(sample_continuous(st, 4, rng), StateCorruptionError);
}

TEST_CASE("mean update") {
  auto hp = default_hyperparameters<double>(uniform_dims(2, 1, 2));

  SUBCASE("zero steps leave the mean unchanged") {
    GaussianState<double> st = identity_state(2);
    st.mean << 3.0, -1.0;
    RankedSteps<double> ranked;
    ranked.steps = MatrixX<double>::Zero(2, hp.lambda);
    ranked.weights = hp.weights;
    CHECK(update_mean(st, ranked, hp) == st.mean);
  }

  SUBCASE("all selected candidates at one point pull the mean onto it") {
    GaussianState<double> st = identity_state(2);
    st.mean << 1.0, 2.0;
    st.sigma = 0.5;
    VectorX<double> target(2);
    target << -3.0, 4.0;
    RankedSteps<double> ranked;
    ranked.steps.resize(2, hp.lambda);
    for (Eigen::Index i = 0; i < hp.lambda; ++i)
      ranked.steps.col(i) = (target - st.mean) / st.sigma;
    ranked.weights = hp.weights;
    const VectorX<double> m = update_mean(st, ranked, hp);
    CHECK(m[0] == doctest::Approx(-3.0).epsilon(1e-14));
    CHECK(m[1] == doctest::Approx(4.0).epsilon(1e-14));
  }

  SUBCASE("two weighted steps") {
    GaussianState<double> st = identity_state(2);
    Hyperparameters<double> custom = hp;
    custom.lambda = 2;
    custom.mu = 2;
    custom.weights.resize(2);
    custom.weights << 0.75, 0.25;
    RankedSteps<double> ranked;
    ranked.steps.resize(2, 2);
    ranked.steps.col(0) << 1.0, 0.0;
    ranked.steps.col(1) << 0.0, 1.0;
    ranked.weights = custom.weights;
    const VectorX<double> m = update_mean(st, ranked, custom);
    CHECK(m[0] == 0.75);
    CHECK(m[1] == 0.25);
  }
}

TEST_CASE("evolution path updates") {
  Hyperparameters<double> hp = default_hyperparameters<double>(uniform_dims(2, 1, 2));

  SUBCASE("zero weighted step only decays the paths") {
    GaussianState<double> st = identity_state(2);
    st.path_sigma << 1.0, -2.0;
    st.path_cov << 0.5, 0.5;
    RankedSteps<double> ranked;
    ranked.steps = MatrixX<double>::Zero(2, hp.lambda);
    ranked.weights = hp.weights;
    const auto upd = update_evolution_paths(st, ranked, hp);
    CHECK(upd.path_sigma == VectorX<double>((1 - hp.c_sigma) * st.path_sigma));
    CHECK(upd.path_cov == VectorX<double>((1 - hp.c_c) * st.path_cov));
  }

  SUBCASE("first iteration form") {
    GaussianState<double> st = identity_state(2);
    RankedSteps<double> ranked;
    ranked.steps.resize(2, 1);
    ranked.steps.col(0) << 0.3, -0.4;
    ranked.weights = VectorX<double>::Ones(1);
    const auto upd = update_evolution_paths(st, ranked, hp);
    const double coef = std::sqrt(hp.c_sigma * (2 - hp.c_sigma) * hp.mu_eff);
    CHECK(upd.path_sigma[0] == doctest::Approx(coef * 0.3).epsilon(1e-14));
    CHECK(upd.path_sigma[1] == doctest::Approx(coef * -0.4).epsilon(1e-14));
  }

  SUBCASE("worked two-dimensional case") {
    Hyperparameters<double> custom = hp;
    custom.c_sigma = 0.4;
    custom.mu_eff = 3.0;
    GaussianState<double> st = identity_state(2);
    st.path_sigma << 1.0, 0.0;
    RankedSteps<double> ranked;
    ranked.steps.resize(2, 1);
    ranked.steps.col(0) << 0.0, 1.0;
    ranked.weights = VectorX<double>::Ones(1);
    const auto upd = update_evolution_paths(st, ranked, custom);
    CHECK(upd.path_sigma[0] == doctest::Approx(0.6).epsilon(1e-15));
    // sqrt(0.4 * 1.6 * 3)
    CHECK(upd.path_sigma[1] == doctest::Approx(1.3856406460551021).epsilon(1e-15));
  }

  SUBCASE("h_sigma flips for an overlong path") {
    GaussianState<double> st = identity_state(2);
    RankedSteps<double> ranked;
    ranked.steps = MatrixX<double>::Zero(2, hp.lambda);
    ranked.weights = hp.weights;
    st.path_sigma << 0.01, 0.0;
    CHECK(update_evolution_paths(st, ranked, hp).h_sigma);
    st.path_sigma << 1e6, 0.0;
    CHECK_FALSE(update_evolution_paths(st, ranked, hp).h_sigma);
  }
}

TEST_CASE("covariance update") {
  SUBCASE("one-dimensional worked case") {
    Hyperparameters<double> hp;
    hp.lambda = 1;
    hp.mu = 1;
    hp.weights = VectorX<double>::Ones(1);
    hp.c_1 = 0.1;
    hp.c_mu = 0.2;
    hp.c_c = 0.3;
    GaussianState<double> st = identity_state(1);
    RankedSteps<double> ranked;
    ranked.steps.resize(1, 1);
    ranked.steps(0, 0) = 3.0;
    ranked.weights = hp.weights;
    VectorX<double> pc(1);
    pc << 2.0;
    const MatrixX<double> cov = update_covariance(st, ranked, pc, true, hp);
    // 1 + 0.1 (4 - 1) + 0.2 (9 - 1)
    CHECK(cov(0, 0) == doctest::Approx(2.9).epsilon(1e-15));
  }

  SUBCASE("zero learning rates keep the covariance") {
    Hyperparameters<double> hp = default_hyperparameters<double>(uniform_dims(2, 1, 2));
    hp.c_1 = 0.0;
    hp.c_mu = 0.0;
    GaussianState<double> st = identity_state(2);
    st.cov << 2.0, 0.3, 0.3, 1.0;
    RankedSteps<double> ranked;
    ranked.steps = MatrixX<double>::Random(2, hp.lambda);
    ranked.weights = hp.weights;
    VectorX<double> pc = VectorX<double>::Random(2);
    CHECK(update_covariance(st, ranked, pc, true, hp) == st.cov);
  }

  SUBCASE("stationary point of the update") {
    // p_c p_c^T == C and every y y^T == C leave C unchanged under h_sigma=1.
    Hyperparameters<double> hp;
    hp.lambda = 1;
    hp.mu = 1;
    hp.weights = VectorX<double>::Ones(1);
    hp.c_1 = 0.15;
    hp.c_mu = 0.25;
    hp.c_c = 0.3;
    GaussianState<double> st = identity_state(1);
    st.cov(0, 0) = 4.0;
    RankedSteps<double> ranked;
    ranked.steps.resize(1, 1);
    ranked.steps(0, 0) = 2.0;  // y y^T = 4 = C
    ranked.weights = hp.weights;
    VectorX<double> pc(1);
    pc << 2.0;  // p_c p_c^T = 4 = C
    CHECK(update_covariance(st, ranked, pc, true, hp)(0, 0) == 4.0);
  }

  SUBCASE("result is exactly symmetric") {
    Hyperparameters<double> hp = default_hyperparameters<double>(uniform_dims(4, 1, 2));
    std::mt19937_64 rng(5);
    GaussianState<double> st = identity_state(4);
    st.cov = random_spd(4, 100.0, rng);
    st.cov = ((st.cov + st.cov.transpose()) / 2).eval();
    RankedSteps<double> ranked;
    ranked.steps = MatrixX<double>::Random(4, hp.lambda);
    ranked.weights = hp.weights;
    VectorX<double> pc = VectorX<double>::Random(4);
    const MatrixX<double> cov = update_covariance(st, ranked, pc, false, hp);
    CHECK(cov == MatrixX<double>(cov.transpose()));
  }
}

TEST_CASE("step size update") {
  Hyperparameters<double> hp;
  hp.c_sigma = 0.3;
  hp.d_sigma = 1.0;

  GaussianState<double> st = identity_state(1);

  SUBCASE("path at its expected length keeps sigma") {
    VectorX<double> ps(1);
    ps << expected_norm<double>(1);
    CHECK(update_step_size(st, ps, hp) == doctest::Approx(1.0).epsilon(1e-15));
  }

  SUBCASE("zero path shrinks sigma by exp(-c/d)") {
    VectorX<double> ps = VectorX<double>::Zero(1);
    CHECK(update_step_size(st, ps, hp) ==
          doctest::Approx(std::exp(-0.3)).epsilon(1e-15));
  }

  SUBCASE("ratio 1.5 gives exp(0.15)") {
    VectorX<double> ps(1);
    ps << 1.5 * expected_norm<double>(1);
    CHECK(update_step_size(st, ps, hp) ==
          doctest::Approx(1.1618342427282831).epsilon(1e-14));
  }

  SUBCASE("the exponent is capped to ten decades") {
    VectorX<double> ps(1);
    ps << 1e300;
    const double s = update_step_size(st, ps, hp);
    CHECK(s <= 1e10 * (1 + 1e-12));
    CHECK(std::isfinite(s));
  }
}

TEST_CASE("step size clamp") {
  MatrixX<double> cov = MatrixX<double>::Identity(2, 2);
  CHECK(clamp_step_size(1e-20, cov, 1e-30) == doctest::Approx(1e-15).epsilon(1e-15));
  CHECK(clamp_step_size(1.0, cov, 1e-30) == 1.0);
  cov *= 1e-30;
  CHECK(clamp_step_size(0.5, cov, 1e-30) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("inverse square root inverts the covariance") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Index n = 1 + Eigen::Index(rng() % 10);
    const MatrixX<double> cov = random_spd(n, 1e6, rng);
    const MatrixX<double> inv_sqrt = inverse_sqrt_covariance(cov);
    const MatrixX<double> should_be_identity = inv_sqrt * inv_sqrt * cov;
    const double err =
        (should_be_identity - MatrixX<double>::Identity(n, n)).cwiseAbs().maxCoeff();
    REQUIRE(err <= 1e-8);
  }
}
