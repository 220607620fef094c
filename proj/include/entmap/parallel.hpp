#ifndef ENTMAP_PARALLEL_HPP_
#define ENTMAP_PARALLEL_HPP_

#include "entmap/measures.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>

namespace entmap {

/// Worker count: `requested` if nonzero, else ENTMAP_THREADS if set, else
/// the hardware concurrency (at least 1).
std::size_t resolve_threads(std::size_t requested);

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index
/// runs exactly once; callers write results by index so the outcome does not
/// depend on scheduling. The first exception thrown by a body is rethrown
/// after all workers stop.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body);

/// Independent generator keyed by (seed, key...).
Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

}  // namespace entmap

#endif  // ENTMAP_PARALLEL_HPP_
