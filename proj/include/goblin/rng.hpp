#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace goblin {

using Rng = std::mt19937_64;

// Independent named sub-stream derived from a root seed. Streams with
// different names never share state, so e.g. the feature draw can change
// without perturbing the graph draw.
inline Rng make_stream(std::uint64_t root_seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace goblin
