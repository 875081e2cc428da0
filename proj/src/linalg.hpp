#pragma once

#include <optional>

#include <Eigen/Dense>

namespace kellyuq::detail {

/// Cholesky of a symmetric positive definite matrix with the library's
/// jitter policy: on failure add 1e-12 * trace / m to the diagonal and
/// retry, at most three times.
inline std::optional<Eigen::LLT<Eigen::MatrixXd>> factor_spd(Eigen::MatrixXd a) {
  const Eigen::Index m = a.rows();
  if (m == 0 || !a.allFinite()) return std::nullopt;
  const double jitter = 1e-12 * a.trace() / static_cast<double>(m);
  for (int attempt = 0; attempt <= 3; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) return llt;
    if (!(jitter > 0.0)) break;
    a.diagonal().array() += jitter;
  }
  return std::nullopt;
}

}  // namespace kellyuq::detail
