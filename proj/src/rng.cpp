#include "pbnn/rng.hpp"

namespace pbnn::rng {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix(seed);
  for (std::uint64_t t : tags) h = mix(h ^ mix(t));
  return h;
}

std::mt19937_64 engine(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  return std::mt19937_64(derive(seed, tags));
}

} // namespace pbnn::rng
