#pragma once

#include "catcma/types.hpp"

#include <functional>
#include <optional>
#include <string>

namespace catcma {

/// sum x^2 + (number of blocks not selecting category 1).
template <class Scalar>
Scalar sphere_com(const VectorX<Scalar>& x, const OneHotSample<Scalar>& c) {
  Scalar cat = Scalar(c.blocks.size());
  for (const auto& block : c.blocks) cat -= block[0];
  return x.squaredNorm() + cat;
}

/// Rosenbrock chain on x plus a leading-ones objective on the blocks.
template <class Scalar>
Scalar rosenbrock_clo(const VectorX<Scalar>& x, const OneHotSample<Scalar>& c) {
  if (x.size() < 2) throw ConfigError("rosenbrock_clo requires n_co >= 2");
  Scalar cont = 0;
  for (Eigen::Index n = 0; n + 1 < x.size(); ++n) {
    const Scalar a = x[n] * x[n] - x[n + 1];
    const Scalar b = x[n] - 1;
    cont += 100 * a * a + b * b;
  }
  Scalar cat = Scalar(c.blocks.size());
  Scalar prefix = 1;
  for (const auto& block : c.blocks) {
    prefix *= block[0];
    cat -= prefix;
  }
  return cont + cat;
}

/// sum (x_n - z_n)^2 + sum z_n with z_n = (selected index)/K_n; couples the
/// continuous and categorical parts.
template <class Scalar>
Scalar mc_proximity(const VectorX<Scalar>& x, const OneHotSample<Scalar>& c) {
  if (x.size() != Eigen::Index(c.blocks.size()))
    throw ConfigError("mc_proximity requires n_co == n_ca");
  Scalar total = 0;
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    const auto& block = c.blocks[n];
    const Scalar z =
        block.dot(VectorX<Scalar>::LinSpaced(block.size(), 0, Scalar(block.size() - 1))) /
        Scalar(block.size());
    total += (x[n] - z) * (x[n] - z) + z;
  }
  return total;
}

template <class Scalar = double>
struct MixedObjective {
  std::string name;
  ProblemDims dims;
  std::function<Scalar(const VectorX<Scalar>&, const OneHotSample<Scalar>&)> evaluator;
  // Set when the optimal category per block is known, for diagnostics.
  std::optional<Eigen::Index> optimal_category;
};

inline const std::vector<std::string>& benchmark_names() {
  static const std::vector<std::string> names = {"SphereCOM", "RosenbrockCLO",
                                                 "MCProximity"};
  return names;
}

/// Registry lookup; validates the dims against the function's requirements
/// and wraps the evaluator with shape checks.
template <class Scalar = double>
MixedObjective<Scalar> make_benchmark(const std::string& name, const ProblemDims& dims) {
  dims.validate();
  Scalar (*fn)(const VectorX<Scalar>&, const OneHotSample<Scalar>&) = nullptr;
  if (name == "SphereCOM") {
    fn = &sphere_com<Scalar>;
  } else if (name == "RosenbrockCLO") {
    if (dims.n_co < 2) throw ConfigError("RosenbrockCLO requires n_co >= 2");
    fn = &rosenbrock_clo<Scalar>;
  } else if (name == "MCProximity") {
    if (dims.n_co != dims.n_ca) throw ConfigError("MCProximity requires n_co == n_ca");
    fn = &mc_proximity<Scalar>;
  } else {
    throw ConfigError("unknown benchmark function: " + name);
  }

  MixedObjective<Scalar> obj;
  obj.name = name;
  obj.dims = dims;
  obj.optimal_category = 0;
  obj.evaluator = [fn, dims](const VectorX<Scalar>& x, const OneHotSample<Scalar>& c) {
    if (x.size() != dims.n_co || Eigen::Index(c.blocks.size()) != dims.n_ca)
      throw ConfigError("candidate shape does not match the objective dims");
    for (std::size_t n = 0; n < c.blocks.size(); ++n)
      if (c.blocks[n].size() != dims.categories[n])
        throw ConfigError("one-hot block size does not match the objective dims");
    return fn(x, c);
  };
  return obj;
}

}  // namespace catcma
