#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace edisc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// log(sum_i exp(x_i)) with max subtraction.
inline double log_sum_exp(const Eigen::Ref<const Vector>& x) {
  if (x.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

/// Stable softmax of a finite vector; strictly positive, sums to 1.
inline Vector softmax(const Eigen::Ref<const Vector>& x) {
  if (!x.allFinite()) throw ModelError("softmax: non-finite input");
  const double m = x.maxCoeff();
  Vector e = (x.array() - m).exp();
  return e / e.sum();
}

/// In-place row-wise log-softmax; returns per-row log-normalizers.
inline Vector log_softmax_rows(Matrix& logits) {
  Vector lse(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double s = m + std::log((logits.row(r).array() - m).exp().sum());
    lse[r] = s;
    logits.row(r).array() -= s;
  }
  return lse;
}

inline Vector standard_normal_vector(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

inline Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = nd(rng);
  return m;
}

/// Independent per-chain stream: distinct seeds for distinct (seed, stream) pairs.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{seed, stream, std::uint64_t{0x9e3779b97f4a7c15ULL}};
  return Rng(seq);
}

/// FNV-1a, used for config hashes in artifact headers.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace edisc
