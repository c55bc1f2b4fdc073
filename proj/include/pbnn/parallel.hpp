#pragma once

#include <cstddef>
#include <functional>

namespace pbnn {

// Work is always cut into fixed-size blocks, independent of the thread count,
// and any cross-item reduction is done per block first and then folded in
// block order on the calling thread. That keeps results bitwise identical
// whether the caller asks for 1 thread or 8.
constexpr std::size_t kBlock = 64;

std::size_t n_blocks(std::size_t n);

// fn(block_index, begin, end) over [0, n) in kBlock-sized chunks.
void parallel_blocks(std::size_t n, int n_threads,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

// fn(i) for each i in [0, n); convenience wrapper over parallel_blocks.
void parallel_for(std::size_t n, int n_threads, const std::function<void(std::size_t)>& fn);

} // namespace pbnn
