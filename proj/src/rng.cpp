#include "splitrl/rng.hpp"

namespace splitrl {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng make_stream(std::uint64_t master_seed, std::uint64_t stream,
                std::uint64_t iteration, StreamPurpose purpose) {
  std::uint64_t h = mix64(master_seed);
  h = mix64(h ^ stream);
  h = mix64(h ^ iteration);
  h = mix64(h ^ static_cast<std::uint64_t>(purpose));
  return Rng(h);
}

}  // namespace splitrl
