#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace dis {

// Worker count: DIS_THREADS caps it, defaults to hardware concurrency.
inline int thread_count() {
  static int cached = [] {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("DIS_THREADS")) {
      int cap = std::atoi(env);
      if (cap >= 1) n = std::min(n, cap);
      if (cap >= 1 && cap > n) n = cap;
    }
    return n;
  }();
  return cached;
}

// Static range split. Chunk boundaries depend only on `count` and the chunk
// size, never on the thread count, so per-chunk results can be merged in a
// fixed order regardless of how many workers ran.
struct ChunkRange {
  int64_t begin, end;
};

inline std::vector<ChunkRange> make_chunks(int64_t count, int64_t chunk_size = 4096) {
  std::vector<ChunkRange> chunks;
  for (int64_t b = 0; b < count; b += chunk_size)
    chunks.push_back({b, std::min(count, b + chunk_size)});
  return chunks;
}

// Runs fn(begin, end) over static chunks. fn must only write to disjoint
// per-index or per-chunk state.
inline void parallel_for_chunks(int64_t count, const std::function<void(int64_t, int64_t)>& fn,
                                int64_t chunk_size = 4096) {
  auto chunks = make_chunks(count, chunk_size);
  int workers = std::min<int>(thread_count(), static_cast<int>(chunks.size()));
  if (workers <= 1) {
    for (const auto& c : chunks) fn(c.begin, c.end);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= chunks.size()) break;
        fn(chunks[i].begin, chunks[i].end);
      }
    });
  }
  for (auto& t : pool) t.join();
}

inline void parallel_for(int64_t count, const std::function<void(int64_t)>& fn) {
  parallel_for_chunks(count, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) fn(i);
  });
}

// Chunk-indexed reduction: each chunk accumulates into its own buffer, then
// buffers merge serially in chunk order. Thread-count invariant by
// construction (merge order is fixed, per-chunk sums are sequential).
template <typename Acc>
Acc parallel_reduce(int64_t count, const Acc& zero,
                    const std::function<void(int64_t, Acc&)>& accumulate,
                    const std::function<void(Acc&, const Acc&)>& merge,
                    int64_t chunk_size = 4096) {
  auto chunks = make_chunks(count, chunk_size);
  std::vector<Acc> partials(chunks.size(), zero);
  parallel_for_chunks(
      count,
      [&](int64_t b, int64_t e) {
        size_t ci = static_cast<size_t>(b / chunk_size);
        for (int64_t i = b; i < e; ++i) accumulate(i, partials[ci]);
      },
      chunk_size);
  Acc total = zero;
  for (const auto& p : partials) merge(total, p);
  return total;
}

}  // namespace dis
