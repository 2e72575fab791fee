#pragma once

#include <cstdint>
#include <random>

namespace splitrl {

using Rng = std::mt19937_64;

/// What a derived stream is used for. Keeps streams for different consumers
/// disjoint even when they share (seed, stream, iteration).
enum class StreamPurpose : std::uint64_t {
  policy_init = 1,
  value_init = 2,
  rollout = 3,
  shuffle = 4,
  random_mask = 5,
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent generator from (master seed, stream id, iteration,
/// purpose). Stream ids are per task; the same key always yields the same
/// sequence.
Rng make_stream(std::uint64_t master_seed, std::uint64_t stream,
                std::uint64_t iteration, StreamPurpose purpose);

}  // namespace splitrl
