#include "usdn/core/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace usdn {
namespace {

// A job is a fixed partition of [0,n) into `chunks` ranges claimed through an
// atomic counter. The partition depends only on (n, chunks), so results are
// reproducible whenever chunks write disjoint outputs.
struct Job {
  const std::function<void(int64_t, int64_t)>* fn;
  int64_t n = 0;
  int64_t chunks = 0;
  std::atomic<int64_t> next{0};
  std::atomic<int64_t> remaining{0};
  std::mutex done_mu;
  std::condition_variable done_cv;
  std::exception_ptr error;

  void drain() {
    for (;;) {
      int64_t c = next.fetch_add(1, std::memory_order_relaxed);
      if (c >= chunks) return;
      int64_t b = c * n / chunks;
      int64_t e = (c + 1) * n / chunks;
      try {
        (*fn)(b, e);
      } catch (...) {
        std::lock_guard<std::mutex> lk(done_mu);
        if (!error) error = std::current_exception();
      }
      if (remaining.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> lk(done_mu);
        done_cv.notify_all();
      }
    }
  }
};

class Pool {
 public:
  Pool() {
    int n = 0;
    if (const char* env = std::getenv("USDN_THREADS")) n = std::atoi(env);
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    threads_ = n;
    for (int i = 0; i < n - 1; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  int size() const { return threads_; }

  void run(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int64_t chunks = std::min<int64_t>(threads_, (n + grain - 1) / grain);
    if (chunks <= 1 || workers_.empty()) {
      fn(0, n);
      return;
    }
    // Nested parallel_for calls run inline; only the outermost level fans out.
    if (running_.exchange(true)) {
      fn(0, n);
      return;
    }
    auto job = std::make_shared<Job>();
    job->fn = &fn;
    job->n = n;
    job->chunks = chunks;
    job->remaining.store(chunks, std::memory_order_relaxed);
    {
      std::lock_guard<std::mutex> lk(mu_);
      current_ = job;
      ++job_id_;
    }
    cv_.notify_all();
    job->drain();  // the caller participates
    {
      std::unique_lock<std::mutex> lk(job->done_mu);
      job->done_cv.wait(lk, [&] { return job->remaining.load(std::memory_order_acquire) == 0; });
    }
    running_.store(false);
    if (job->error) std::rethrow_exception(job->error);
  }

 private:
  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || job_id_ != seen; });
        if (stop_) return;
        seen = job_id_;
        job = current_;
      }
      if (job) job->drain();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::thread> workers_;
  std::shared_ptr<Job> current_;
  std::atomic<bool> running_{false};
  uint64_t job_id_ = 0;
  bool stop_ = false;
  int threads_ = 1;
};

Pool& pool() {
  static Pool p;
  return p;
}

}  // namespace

int thread_count() { return pool().size(); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  pool().run(n, 1, fn);
}

void parallel_for_grain(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
  pool().run(n, std::max<int64_t>(1, grain), fn);
}

}  // namespace usdn
