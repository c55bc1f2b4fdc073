#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pbnn::rng {

// splitmix64 finalizer; decorrelates nearby seeds.
std::uint64_t mix(std::uint64_t x);

// Folds a list of stream tags into a base seed. Every random stream in the
// project is keyed as derive(seed, {tag, index...}) so that streams never
// alias and results do not depend on evaluation order or thread count.
std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

std::mt19937_64 engine(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {});

// Stream tags. Keep the numeric values stable: they are baked into every
// recorded run.
enum Stream : std::uint64_t {
  kPriorInit = 1,
  kResample = 2,
  kMove = 3,
  kBatchDraw = 4,
  kDataGen = 5,
  kParamInit = 6,
  kHmc = 7,
  kEvalResample = 8,
  kCollapseRecovery = 9,
  kIter = 10,
};

} // namespace pbnn::rng
