// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

namespace nasmc {

/// Philox4x32-10 block function. Exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// Counter-based random stream.
///
/// A stream is a plain value: (seed, stream_id, counter). Every draw is a pure
/// function of those three numbers, so streams can be copied, handed to
/// workers and replayed without shared state. Sub-streams for particles,
/// timesteps or consumers are derived with fork(), which hashes a key into
/// the stream id and restarts the counter.
class RngStream {
 public:
  constexpr RngStream() = default;
  constexpr explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Child stream keyed by `key`. Does not touch this stream's counter.
  RngStream fork(std::uint64_t key) const noexcept;

  /// 64 random bits; advances the counter by one.
  std::uint64_t next_u64() noexcept;

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform01() noexcept;

  /// N(mean, std^2) by Box-Muller (cosine branch), two uniforms per draw.
  /// Throws InvalidArgument unless std > 0.
  double normal(double mean, double std);

  /// Standard normal draw; same transform as normal().
  double std_normal() noexcept;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
};

/// Top-level consumers. Keeping these disjoint means a change in how many
/// draws one consumer makes never shifts another consumer's numbers.
enum class StreamTag : std::uint64_t {
  kSimulate = 1,
  kProposal = 2,
  kResample = 3,
  kPmmh = 4,
  kAdapt = 5,
  kInit = 6,
  kEval = 7,
  kCheck = 8,
};

inline RngStream fork(const RngStream& s, StreamTag tag) noexcept {
  return s.fork(static_cast<std::uint64_t>(tag));
}

}  // namespace nasmc
