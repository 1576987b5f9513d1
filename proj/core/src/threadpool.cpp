#include "pepler/threadpool.hpp"

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace pepler::num {
namespace {

int read_thread_cap() {
  const char* env = std::getenv("PEPLER_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  long v = std::strtol(env, nullptr, 10);
  if (v < 1) return 1;
  long hw = static_cast<long>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  return static_cast<int>(v < hw ? v : hw);
}

// One job at a time. Chunk indices are handed out under the mutex (there are
// only ~worker-count chunks per job, so contention is irrelevant) and the job
// function stays alive until the last chunk finishes, which run() guarantees
// by waiting on pending_.
class Pool {
 public:
  explicit Pool(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  Pool(const Pool&) = delete;
  Pool& operator=(const Pool&) = delete;

  ~Pool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(std::size_t chunks, const std::function<void(std::size_t)>& fn) {
    std::lock_guard<std::mutex> job_lock(job_mu_);
    {
      std::lock_guard<std::mutex> lock(mu_);
      fn_ = &fn;
      next_ = 0;
      total_ = chunks;
      pending_ = chunks;
    }
    cv_.notify_all();
    work();  // the calling thread participates
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    fn_ = nullptr;
  }

 private:
  // Claims and executes chunks until none are left. Returns with no claim
  // outstanding.
  void work() {
    std::unique_lock<std::mutex> lock(mu_);
    while (fn_ != nullptr && next_ < total_) {
      std::size_t c = next_++;
      const std::function<void(std::size_t)>* fn = fn_;
      lock.unlock();
      (*fn)(c);
      lock.lock();
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  void worker_loop() {
    while (true) {
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] {
          return stop_ || (fn_ != nullptr && next_ < total_);
        });
        if (stop_) return;
      }
      work();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex job_mu_;  // serializes run() callers
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* fn_ = nullptr;
  std::size_t next_ = 0;
  std::size_t total_ = 0;
  std::size_t pending_ = 0;
  bool stop_ = false;
};

Pool* pool_instance(int workers) {
  static Pool pool(workers);
  return &pool;
}

}  // namespace

int max_threads() {
  static int cap = read_thread_cap();
  return cap;
}

void parallel_for(std::size_t n, std::size_t min_parallel,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  int workers = max_threads();
  if (workers <= 1 || n < min_parallel) {
    fn(0, n);
    return;
  }
  std::size_t chunks = static_cast<std::size_t>(workers);
  if (chunks > n) chunks = n;
  std::size_t base = n / chunks;
  std::size_t extra = n % chunks;
  // Chunk boundaries depend only on n and the worker count, so the split is
  // reproducible; the first `extra` chunks take one extra index.
  std::function<void(std::size_t)> chunk_fn = [&](std::size_t c) {
    std::size_t begin = c * base + (c < extra ? c : extra);
    std::size_t len = base + (c < extra ? 1 : 0);
    fn(begin, begin + len);
  };
  pool_instance(workers - 1)->run(chunks, chunk_fn);
}

}  // namespace pepler::num
