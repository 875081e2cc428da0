#include "kellyuq/stochastics.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "kellyuq/error.hpp"

namespace kellyuq {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Matrix: return "matrix";
    case ErrorKind::Separation: return "separation";
    case ErrorKind::NonConvergence: return "non-convergence";
    case ErrorKind::SingularInformation: return "singular-information";
    case ErrorKind::Solver: return "solver";
    case ErrorKind::Input: return "input";
  }
  return "unknown";
}

namespace {

constexpr std::uint64_t kPhiloxM0 = 0xD2E7470EE14C6C93ULL;
constexpr std::uint64_t kPhiloxM1 = 0xCA5A826395121157ULL;
constexpr std::uint64_t kPhiloxW0 = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kPhiloxW1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
  const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

}  // namespace

std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> c,
                                        std::array<std::uint64_t, 2> k) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kPhiloxW0;
      k[1] += kPhiloxW1;
    }
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, c[0], hi0, lo0);
    mulhilo(kPhiloxM1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
  return c;
}

std::uint64_t RandomStream::next_u64() {
  const std::uint64_t lane = position_ & 3U;
  if (lane == 0) block_ = philox4x64({position_ >> 2, 0, 0, 0}, {seed_, substream_});
  ++position_;
  return block_[lane];
}

double RandomStream::next_normal() { return normal_quantile(next_open_uniform()); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

namespace {

// Acklam's rational approximation for the lower half, p <= 0.5.
double acklam_lower(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorKind::Domain, "normal_quantile: p must lie in (0, 1)");
  }
  if (p == 0.5) return 0.0;
  // Work in the lower tail where p is represented with full relative precision;
  // 1 - p is exact for p in [0.5, 1).
  const bool upper = p > 0.5;
  const double q = upper ? 1.0 - p : p;
  double x = acklam_lower(q);
  // One Halley step on Phi(x) - q.
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - q;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return upper ? -x : x;
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
  const Eigen::Index m = cov.rows();
  if (cov.cols() != m) throw Error(ErrorKind::Matrix, "covariance must be square");
  if (!cov.allFinite()) throw Error(ErrorKind::Matrix, "covariance has non-finite entries");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if (m > 0 && (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorKind::Matrix, "covariance is not symmetric");
  }

  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(cov.row(i).array() == 0.0).all()) kept.push_back(i);
  }
  Eigen::MatrixXd factor = Eigen::MatrixXd::Zero(m, m);
  const auto k = static_cast<Eigen::Index>(kept.size());
  if (k == 0) return factor;

  Eigen::MatrixXd block(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) block(i, j) = 0.5 * (cov(kept[i], kept[j]) + cov(kept[j], kept[i]));

  const double jitter = 1e-12 * block.trace() / static_cast<double>(k);
  for (int attempt = 0; attempt <= 3; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(block);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite()) {
      const Eigen::MatrixXd lower = llt.matrixL();
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) factor(kept[i], kept[j]) = lower(i, j);
      return factor;
    }
    if (!(jitter > 0.0)) break;
    block.diagonal().array() += jitter;
  }
  throw Error(ErrorKind::Matrix, "covariance is not positive semidefinite (Cholesky failed after jitter)");
}

MvnSampler::MvnSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& cov)
    : mean_(std::move(mean)), factor_(psd_factor(cov)), z_(mean_.size()) {
  if (cov.rows() != mean_.size()) throw Error(ErrorKind::Shape, "mean and covariance sizes differ");
}

void MvnSampler::draw(RandomStream& stream, Eigen::Ref<Eigen::VectorXd> out) {
  for (Eigen::Index i = 0; i < z_.size(); ++i) z_[i] = stream.next_normal();
  out.noalias() = mean_;
  out.noalias() += factor_.triangularView<Eigen::Lower>() * z_;
}

Eigen::MatrixXd sample_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                           Eigen::Index count, RandomStream& stream) {
  if (count < 1) throw Error(ErrorKind::Domain, "sample_mvn: count must be positive");
  MvnSampler sampler(mean, cov);
  Eigen::MatrixXd out(count, mean.size());
  Eigen::VectorXd row(mean.size());
  for (Eigen::Index i = 0; i < count; ++i) {
    sampler.draw(stream, row);
    out.row(i) = row.transpose();
  }
  return out;
}

Eigen::MatrixXd sample_uniform(Eigen::Index rows, Eigen::Index cols, RandomStream& stream) {
  if (rows < 1 || cols < 1) throw Error(ErrorKind::Domain, "sample_uniform: sizes must be positive");
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = stream.next_uniform();
  return out;
}

}  // namespace kellyuq
