#pragma once

#include <array>
#include <cstdint>

#include <Eigen/Dense>

namespace kellyuq {

/// Philox4x64-10 block function (Salmon et al., Random123).  Exposed for
/// known-answer testing.
std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> counter,
                                        std::array<std::uint64_t, 2> key);

/// Counter-based random stream keyed by (seed, substream).
///
/// Draw i of the stream is word (i % 4) of philox4x64({i / 4, 0, 0, 0},
/// {seed, substream}), so two streams with different keys never share a
/// block and any stream can be re-created from its key alone.  The object
/// is a small value type; copying it forks an identical sequence.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t substream)
      : seed_(seed), substream_(substream) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t substream() const noexcept { return substream_; }
  std::uint64_t position() const noexcept { return position_; }

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1); safe input for a quantile function.
  double next_open_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by inversion of one open uniform.
  double next_normal();

 private:
  std::uint64_t seed_;
  std::uint64_t substream_;
  std::uint64_t position_ = 0;
  std::array<std::uint64_t, 4> block_{};
};

/// Standard normal CDF.
double normal_cdf(double z);

/// Inverse of the standard normal CDF for p in (0, 1).  Throws
/// Error(Domain) otherwise.  Absolute error well below 1e-10.
double normal_quantile(double p);

/// Factor F with F F' = cov, for symmetric PSD cov.
///
/// Rows/columns that are identically zero are carried as zero rows of F
/// so a degenerate Gaussian is reproduced exactly.  The remaining block is
/// Cholesky-factored; on failure 1e-12 * trace / m is added to its
/// diagonal, up to three times.  Throws Error(Matrix) when cov is not
/// symmetric or still not factorizable.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov);

/// Streaming sampler for N(mean, cov).  Each draw consumes exactly
/// mean.size() normals from the stream, in coordinate order.
class MvnSampler {
 public:
  MvnSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& cov);

  Eigen::Index dim() const noexcept { return mean_.size(); }
  const Eigen::MatrixXd& factor() const noexcept { return factor_; }

  void draw(RandomStream& stream, Eigen::Ref<Eigen::VectorXd> out);

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd factor_;
  Eigen::VectorXd z_;
};

/// count x m matrix of iid N(mean, cov) rows.
Eigen::MatrixXd sample_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                           Eigen::Index count, RandomStream& stream);

/// rows x cols matrix of iid U[0, 1), filled row-major from the stream.
Eigen::MatrixXd sample_uniform(Eigen::Index rows, Eigen::Index cols, RandomStream& stream);

}  // namespace kellyuq
