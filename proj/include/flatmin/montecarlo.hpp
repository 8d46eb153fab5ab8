#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

#include "flatmin/rng.hpp"
#include "flatmin/types.hpp"

namespace flatmin {

/// Draws per reduction chunk. Chunk c always uses rng.substream(c), and chunk
/// sums are combined in chunk order, so results do not depend on the thread
/// count.
inline constexpr std::uint64_t kMonteCarloChunk = 1u << 14;

/// Mean of N draws of a `width`-dimensional quantity. `draw(rng, acc)` adds
/// one draw into acc.
template <class Draw>
Vector chunked_mean(std::uint64_t N, Eigen::Index width, const RngStream& rng, Draw draw,
                    unsigned threads = 1) {
  if (N == 0) return Vector::Zero(width);
  const std::uint64_t chunks = (N + kMonteCarloChunk - 1) / kMonteCarloChunk;
  std::vector<Vector> partial(chunks, Vector::Zero(width));
  auto work = [&](std::uint64_t first, std::uint64_t stride) {
    for (std::uint64_t c = first; c < chunks; c += stride) {
      RngStream local = rng.substream(c);
      const std::uint64_t begin = c * kMonteCarloChunk;
      const std::uint64_t end = std::min(N, begin + kMonteCarloChunk);
      for (std::uint64_t k = begin; k < end; ++k) draw(local, partial[c]);
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(chunks)));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& th : pool) th.join();
  }
  Vector total = Vector::Zero(width);
  for (const auto& p : partial) total += p;
  return total / static_cast<double>(N);
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. If any call
/// throws, the exception of the lowest index is rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn fn) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace flatmin
