#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace bddm {

/// SplitMix64 finalizer; used to derive independent stream keys.
std::uint64_t mix64(std::uint64_t x);

/// Key for the stream identified by (seed, stream, index). Counter-based:
/// the draw for a given index never depends on how many draws came before.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

/// Stream tags shared by the samplers and training loop.
namespace streams {
inline constexpr std::uint64_t kInit = 0x494e4954ULL;
inline constexpr std::uint64_t kStep = 0x53544550ULL;
inline constexpr std::uint64_t kBatch = 0x42415443ULL;
inline constexpr std::uint64_t kTrajectory = 0x5452414aULL;
inline constexpr std::uint64_t kData = 0x44415441ULL;
inline constexpr std::uint64_t kNoise = 0x4e4f4953ULL;
inline constexpr std::uint64_t kSubsample = 0x53554253ULL;
}  // namespace streams

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next() { return engine_(); }

  Eigen::VectorXd normal_vector(Eigen::Index n);
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace bddm
