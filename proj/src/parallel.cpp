#include "eqsae/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace eqsae {

namespace {

std::atomic<int> g_workers{0};  // 0 = uninitialized, use hardware
thread_local bool t_inside_parallel = false;

// Persistent worker pool; one region runs at a time (concurrent callers
// serialize). Chunks are claimed atomically, so which thread runs a chunk
// varies, but chunks are disjoint and internally ordered: results do not
// depend on the schedule.
class Pool {
 public:
  static Pool& instance() {
    // Deliberately leaked: workers stay parked on the condition variable at
    // process exit and are reaped by the OS; running destructors under them
    // would terminate().
    static Pool* pool = new Pool();
    return *pool;
  }

  void run(std::size_t n, std::size_t chunk,
           const std::function<void(std::size_t, std::size_t)>& body) {
    std::lock_guard<std::mutex> run_lock(run_mu_);
    ensure_threads(static_cast<std::size_t>(worker_count()) - 1);
    {
      std::lock_guard<std::mutex> lock(mu_);
      body_ = &body;
      n_ = n;
      chunk_ = chunk;
      next_chunk_.store(1, std::memory_order_relaxed);
      pending_ = static_cast<int>(threads_.size());
      generation_ += 1;
    }
    cv_.notify_all();

    t_inside_parallel = true;
    body(0, std::min(n, chunk));
    steal_chunks();
    t_inside_parallel = false;

    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    body_ = nullptr;
  }

 private:
  void ensure_threads(std::size_t wanted) {
    while (threads_.size() < wanted) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  void steal_chunks() {
    for (;;) {
      const std::size_t c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
      const std::size_t begin = c * chunk_;
      if (begin >= n_) return;
      (*body_)(begin, std::min(n_, begin + chunk_));
    }
  }

  void worker_loop() {
    t_inside_parallel = true;
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
      }
      steal_chunks();
      {
        std::lock_guard<std::mutex> lock(mu_);
        pending_ -= 1;
        if (pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::mutex run_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(std::size_t, std::size_t)>* body_ = nullptr;
  std::size_t n_ = 0;
  std::size_t chunk_ = 0;
  std::atomic<std::size_t> next_chunk_{0};
  int pending_ = 0;
  std::uint64_t generation_ = 0;
};

}  // namespace

int worker_count() {
  int w = g_workers.load(std::memory_order_relaxed);
  if (w > 0) return w;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void set_worker_count(int n) {
  g_workers.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers =
      t_inside_parallel ? 1
                        : std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  Pool::instance().run(n, chunk, body);
}

}  // namespace eqsae
