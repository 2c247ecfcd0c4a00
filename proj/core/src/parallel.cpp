// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace fragreg {

namespace {

thread_local bool tl_in_pool = false;

struct Job {
  const std::function<void(std::int64_t)>* fn = nullptr;
  std::atomic<std::int64_t> next{0};
  std::int64_t end = 0;
  std::int64_t grain = 1;
  std::atomic<std::int64_t> remaining{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::exception_ptr error;
};

class Pool {
 public:
  explicit Pool(int n) {
    workers_.reserve(n);
    for (int i = 0; i < n; ++i) {
      workers_.emplace_back([this] {
        tl_in_pool = true;
        worker_loop();
      });
    }
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return static_cast<int>(workers_.size()); }

  void run(std::int64_t begin, std::int64_t end,
           const std::function<void(std::int64_t)>& fn, std::int64_t grain) {
    auto job = std::make_shared<Job>();
    job->fn = &fn;
    job->next.store(begin);
    job->end = end;
    job->grain = grain;
    job->remaining.store(end - begin);

    {
      std::unique_lock<std::mutex> lk(mu_);
      job_ = job;
      ++epoch_;
    }
    cv_.notify_all();

    work_on(*job);

    {
      std::unique_lock<std::mutex> lk(done_mu_);
      done_cv_.wait(lk, [&] { return job->remaining.load() == 0; });
    }
    {
      std::unique_lock<std::mutex> lk(mu_);
      if (job_ == job) job_.reset();
    }
    if (job->error) std::rethrow_exception(job->error);
  }

 private:
  void work_on(Job& job) {
    for (;;) {
      const std::int64_t i0 = job.next.fetch_add(job.grain);
      if (i0 >= job.end) break;
      const std::int64_t i1 = std::min(job.end, i0 + job.grain);
      if (!job.failed.load(std::memory_order_relaxed)) {
        try {
          for (std::int64_t i = i0; i < i1; ++i) (*job.fn)(i);
        } catch (...) {
          std::unique_lock<std::mutex> lk(job.err_mu);
          if (!job.error) job.error = std::current_exception();
          job.failed.store(true);
        }
      }
      if (job.remaining.fetch_sub(i1 - i0) == i1 - i0) {
        std::unique_lock<std::mutex> lk(done_mu_);
        done_cv_.notify_all();
      }
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || (job_ && epoch_ != seen); });
        if (stop_) return;
        job = job_;
        seen = epoch_;
      }
      work_on(*job);
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::mutex done_mu_;
  std::condition_variable done_cv_;
  std::shared_ptr<Job> job_;
  std::uint64_t epoch_ = 0;
  bool stop_ = false;
};

std::mutex g_pool_mu;
std::unique_ptr<Pool> g_pool;
int g_requested = 0;

Pool& pool() {
  std::unique_lock<std::mutex> lk(g_pool_mu);
  if (!g_pool) {
    int n = g_requested;
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    // The calling thread participates too, so spawn one fewer worker.
    g_pool = std::make_unique<Pool>(std::max(0, n - 1));
  }
  return *g_pool;
}

}  // namespace

void set_thread_count(int n) {
  std::unique_lock<std::mutex> lk(g_pool_mu);
  g_requested = n;
  g_pool.reset();
}

int thread_count() { return pool().size() + 1; }

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn,
                  std::int64_t grain) {
  if (end <= begin) return;
  if (grain < 1) grain = 1;
  if (tl_in_pool || end - begin <= grain || thread_count() == 1) {
    for (std::int64_t i = begin; i < end; ++i) fn(i);
    return;
  }
  tl_in_pool = true;
  struct Reset {
    ~Reset() { tl_in_pool = false; }
  } reset;
  pool().run(begin, end, fn, grain);
}

}  // namespace fragreg
