#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace catcma {

template <class Scalar>
using VectorX = Eigen::Vector<Scalar, Eigen::Dynamic>;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// One probability/gradient vector per categorical dimension.
template <class Scalar>
using BlockList = std::vector<VectorX<Scalar>>;

/// Caller broke the ask/tell protocol (double ask, tell without ask, size mismatch).
class ProtocolError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Internal state went numerically bad (non-finite values, non-PSD covariance).
class StateCorruptionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Configuration or input rejected before any optimization ran.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Search-space shape: continuous dimension count plus category counts
/// per categorical dimension.
struct ProblemDims {
  Eigen::Index n_co = 0;
  Eigen::Index n_ca = 0;
  std::vector<Eigen::Index> categories;  // K_n per categorical dimension

  void validate() const {
    if (n_co < 0) throw ConfigError("n_co must be >= 0");
    if (n_ca < 1) throw ConfigError("n_ca must be >= 1");
    if (n_co + n_ca < 1) throw ConfigError("n_co + n_ca must be >= 1");
    if (static_cast<Eigen::Index>(categories.size()) != n_ca)
      throw ConfigError("categories must list one K per categorical dimension");
    for (Eigen::Index k : categories)
      if (k < 2) throw ConfigError("every categorical dimension needs K >= 2");
  }

  Eigen::Index total() const { return n_co + n_ca; }

  /// Sum of (K_n - 1), the categorical degrees of freedom.
  Eigen::Index reduced_cat_dim() const {
    Eigen::Index d = 0;
    for (Eigen::Index k : categories) d += k - 1;
    return d;
  }
};

inline ProblemDims uniform_dims(Eigen::Index n_co, Eigen::Index n_ca, Eigen::Index k) {
  ProblemDims d;
  d.n_co = n_co;
  d.n_ca = n_ca;
  d.categories.assign(static_cast<std::size_t>(n_ca), k);
  d.validate();
  return d;
}

/// One categorical draw: a one-hot vector per categorical dimension.
template <class Scalar>
struct OneHotSample {
  BlockList<Scalar> blocks;

  /// Index of the selected category in block n.
  Eigen::Index selected(std::size_t n) const {
    Eigen::Index idx = 0;
    blocks[n].maxCoeff(&idx);
    return idx;
  }
};

template <class Scalar>
VectorX<Scalar> one_hot(Eigen::Index k, Eigen::Index size) {
  VectorX<Scalar> v = VectorX<Scalar>::Zero(size);
  v[k] = Scalar(1);
  return v;
}

template <class Scalar>
OneHotSample<Scalar> make_one_hot_sample(const ProblemDims& dims,
                                         const std::vector<Eigen::Index>& selected) {
  if (selected.size() != dims.categories.size())
    throw ConfigError("selected indices must match the categorical dimension count");
  OneHotSample<Scalar> s;
  s.blocks.reserve(selected.size());
  for (std::size_t n = 0; n < selected.size(); ++n) {
    if (selected[n] < 0 || selected[n] >= dims.categories[n])
      throw ConfigError("category index out of range in dimension " + std::to_string(n));
    s.blocks.push_back(one_hot<Scalar>(selected[n], dims.categories[n]));
  }
  return s;
}

/// One sampled point of the joint distribution; fitness is filled at tell.
template <class Scalar>
struct Candidate {
  VectorX<Scalar> x;
  OneHotSample<Scalar> c;
  Scalar fitness = std::numeric_limits<Scalar>::quiet_NaN();
};

}  // namespace catcma
